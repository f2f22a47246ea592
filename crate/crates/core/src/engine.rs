// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Worklist fixpoint engine over a [`Network`], plus run reports.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algo::{Aggregation, Algorithm, Convergence};
use crate::error::{Error, Result};
use crate::graph::VertexId;
use crate::network::Network;

pub const DEFAULT_MAX_ACTIVATIONS: u64 = 10_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Edge,
    Link,
    Shortcut,
}

/// One message generation, recorded when tracing is on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeEvent {
    pub src: VertexId,
    pub dst: VertexId,
    pub kind: EdgeKind,
}

/// Counts message generations ("edge activations") and state changes.
#[derive(Clone, Debug, Default)]
pub struct ActivationCounter {
    pub edges: u64,
    pub vertex_updates: u64,
    pub trace: Option<Vec<GeEvent>>,
}

impl ActivationCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tracing() -> Self {
        ActivationCounter {
            trace: Some(Vec::new()),
            ..Default::default()
        }
    }

    /// A fresh counter that traces iff `self` does.
    pub fn child(&self) -> Self {
        if self.trace.is_some() {
            Self::tracing()
        } else {
            Self::new()
        }
    }

    #[inline]
    pub fn ge(&mut self, src: VertexId, dst: VertexId, kind: EdgeKind) {
        self.edges += 1;
        if let Some(t) = &mut self.trace {
            t.push(GeEvent { src, dst, kind });
        }
    }

    pub fn merge(&mut self, other: ActivationCounter) {
        self.edges += other.edges;
        self.vertex_updates += other.vertex_updates;
        if let (Some(t), Some(o)) = (&mut self.trace, other.trace) {
            t.extend(o);
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EngineConfig {
    pub max_activations: u64,
    /// Frontier-parallel execution on the rayon pool. Results match the
    /// sequential mode up to summation order; activation counts may differ.
    pub parallel: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_activations: DEFAULT_MAX_ACTIVATIONS,
            parallel: false,
        }
    }
}

/// Vertex states plus unprocessed messages. For `Sum` the pending value is the
/// residual below the re-emission threshold; for `Min` it is normally bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct States {
    pub x: Vec<f64>,
    pub pending: Vec<f64>,
}

impl States {
    pub fn bottom(n: usize, spec: &dyn Algorithm) -> Self {
        States {
            x: vec![spec.bottom(); n],
            pending: vec![spec.bottom(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Grows to `n` slots, filling with bottom.
    pub fn resize(&mut self, n: usize, spec: &dyn Algorithm) {
        self.x.resize(n, spec.bottom());
        self.pending.resize(n, spec.bottom());
    }
}

/// Per-vertex re-emission threshold. The configured epsilon bounds the total
/// residual mass, so it is spread over the live original vertices.
pub fn threshold(spec: &dyn Algorithm, net: &Network) -> f64 {
    match spec.convergence() {
        Convergence::Exact => 0.0,
        Convergence::Threshold(eps) => eps / net.original_count().max(1) as f64,
    }
}

#[inline]
pub(crate) fn emit_value(
    spec: &dyn Algorithm,
    net: &Network,
    u: VertexId,
    t: VertexId,
    w: f64,
    m: f64,
) -> (f64, EdgeKind) {
    if net.is_link(u, t) {
        (m, EdgeKind::Link)
    } else {
        (spec.generate(m, w, net.ctx(u)), EdgeKind::Edge)
    }
}

#[inline]
pub(crate) fn accepts(spec: &dyn Algorithm, net: &Network, v: VertexId) -> bool {
    net.is_live(v) && !spec.absorbs(v)
}

fn cap_error(cap: u64, phase: &'static str, active: usize) -> Error {
    Error::ActivationCap { cap, phase, active }
}

/// Runs the worklist until quiescence, starting from every vertex whose pending
/// message is actionable. `seeds` lists candidate vertices in processing order.
pub fn run_fixpoint(
    net: &Network,
    spec: &dyn Algorithm,
    st: &mut States,
    seeds: &[VertexId],
    counter: &mut ActivationCounter,
    cfg: &EngineConfig,
    phase: &'static str,
) -> Result<()> {
    if cfg.parallel && counter.trace.is_none() {
        return run_parallel(net, spec, st, seeds, counter, cfg, phase);
    }
    let n = net.num_slots();
    st.resize(n, spec);
    let tau = threshold(spec, net);
    let agg = spec.aggregation();
    let bottom = spec.bottom();
    let mut queued = vec![false; n];
    let mut queue = VecDeque::new();
    for &v in seeds {
        if !queued[v as usize] && actionable(agg, st, v, tau) {
            queued[v as usize] = true;
            queue.push_back(v);
        }
    }
    while let Some(v) = queue.pop_front() {
        queued[v as usize] = false;
        if !net.is_live(v) {
            st.pending[v as usize] = bottom;
            continue;
        }
        let m = st.pending[v as usize];
        let send = match agg {
            Aggregation::Min => {
                st.pending[v as usize] = bottom;
                if m < st.x[v as usize] {
                    st.x[v as usize] = m;
                    true
                } else {
                    false
                }
            }
            Aggregation::Sum => {
                if m.abs() < tau || m == 0.0 {
                    continue;
                }
                st.pending[v as usize] = 0.0;
                st.x[v as usize] += m;
                true
            }
        };
        if !send {
            continue;
        }
        counter.vertex_updates += 1;
        for e in net.graph().out_edges(v) {
            let t = e.to;
            if !accepts(spec, net, t) {
                continue;
            }
            let (msg, kind) = emit_value(spec, net, v, t, e.weight, m);
            counter.ge(v, t, kind);
            let ti = t as usize;
            let wake = match agg {
                Aggregation::Min => {
                    if msg < st.pending[ti] && msg < st.x[ti] {
                        st.pending[ti] = msg;
                        true
                    } else {
                        false
                    }
                }
                Aggregation::Sum => {
                    st.pending[ti] += msg;
                    st.pending[ti].abs() >= tau
                }
            };
            if wake && !queued[ti] {
                queued[ti] = true;
                queue.push_back(t);
            }
        }
        if counter.edges > cfg.max_activations {
            return Err(cap_error(cfg.max_activations, phase, queue.len()));
        }
    }
    Ok(())
}

#[inline]
fn actionable(agg: Aggregation, st: &States, v: VertexId, tau: f64) -> bool {
    let p = st.pending[v as usize];
    match agg {
        Aggregation::Min => p < st.x[v as usize],
        Aggregation::Sum => p != 0.0 && p.abs() >= tau,
    }
}

fn atomic_update(cell: &AtomicU64, f: impl Fn(f64) -> Option<f64>) -> Option<f64> {
    let mut cur = cell.load(Ordering::Relaxed);
    loop {
        let new = f(f64::from_bits(cur))?;
        match cell.compare_exchange_weak(cur, new.to_bits(), Ordering::AcqRel, Ordering::Relaxed) {
            Ok(_) => return Some(new),
            Err(c) => cur = c,
        }
    }
}

fn run_parallel(
    net: &Network,
    spec: &dyn Algorithm,
    st: &mut States,
    seeds: &[VertexId],
    counter: &mut ActivationCounter,
    cfg: &EngineConfig,
    phase: &'static str,
) -> Result<()> {
    let n = net.num_slots();
    st.resize(n, spec);
    let tau = threshold(spec, net);
    let agg = spec.aggregation();
    let bottom = spec.bottom();
    let x: Vec<AtomicU64> = st.x.iter().map(|v| AtomicU64::new(v.to_bits())).collect();
    let pending: Vec<AtomicU64> = st.pending.iter().map(|v| AtomicU64::new(v.to_bits())).collect();
    let queued: Vec<AtomicBool> = (0..n).map(|_| AtomicBool::new(false)).collect();
    let edges = AtomicU64::new(counter.edges);
    let updates = AtomicU64::new(0);

    let mut frontier: Vec<VertexId> = Vec::new();
    for &v in seeds {
        if actionable(agg, st, v, tau) && !queued[v as usize].swap(true, Ordering::AcqRel) {
            frontier.push(v);
        }
    }
    while !frontier.is_empty() {
        let next: Vec<VertexId> = frontier
            .par_iter()
            .flat_map_iter(|&v| {
                let vi = v as usize;
                queued[vi].store(false, Ordering::Release);
                let mut woke = Vec::new();
                if !net.is_live(v) {
                    pending[vi].store(bottom.to_bits(), Ordering::Release);
                    return woke;
                }
                let m = f64::from_bits(pending[vi].swap(bottom.to_bits(), Ordering::AcqRel));
                let xv = f64::from_bits(x[vi].load(Ordering::Acquire));
                match agg {
                    Aggregation::Min => {
                        if !(m < xv) {
                            return woke;
                        }
                        x[vi].store(m.to_bits(), Ordering::Release);
                    }
                    Aggregation::Sum => {
                        if m == 0.0 || m.abs() < tau {
                            atomic_update(&pending[vi], |p| Some(p + m));
                            return woke;
                        }
                        x[vi].store((xv + m).to_bits(), Ordering::Release);
                    }
                }
                updates.fetch_add(1, Ordering::Relaxed);
                let mut local = 0u64;
                for e in net.graph().out_edges(v) {
                    let t = e.to;
                    if !accepts(spec, net, t) {
                        continue;
                    }
                    let (msg, _) = emit_value(spec, net, v, t, e.weight, m);
                    local += 1;
                    let ti = t as usize;
                    let wake = match agg {
                        Aggregation::Min => {
                            let xt = f64::from_bits(x[ti].load(Ordering::Acquire));
                            msg < xt && atomic_update(&pending[ti], |p| (msg < p).then_some(msg)).is_some()
                        }
                        Aggregation::Sum => atomic_update(&pending[ti], |p| Some(p + msg))
                            .map(|p| p.abs() >= tau)
                            .unwrap_or(false),
                    };
                    if wake && !queued[ti].swap(true, Ordering::AcqRel) {
                        woke.push(t);
                    }
                }
                edges.fetch_add(local, Ordering::Relaxed);
                woke
            })
            .collect();
        frontier = next;
        if edges.load(Ordering::Relaxed) > cfg.max_activations {
            return Err(cap_error(cfg.max_activations, phase, frontier.len()));
        }
    }
    st.x = x.into_iter().map(|a| f64::from_bits(a.into_inner())).collect();
    st.pending = pending.into_iter().map(|a| f64::from_bits(a.into_inner())).collect();
    counter.edges = edges.into_inner();
    counter.vertex_updates += updates.into_inner();
    Ok(())
}

/// Seeds root messages on live originals and runs to the fixpoint.
pub fn run_from_scratch(
    net: &Network,
    spec: &dyn Algorithm,
    cfg: &EngineConfig,
) -> Result<(States, ActivationCounter)> {
    let mut counter = ActivationCounter::new();
    let st = run_from_scratch_with(net, spec, cfg, &mut counter)?;
    Ok((st, counter))
}

pub fn run_from_scratch_with(
    net: &Network,
    spec: &dyn Algorithm,
    cfg: &EngineConfig,
    counter: &mut ActivationCounter,
) -> Result<States> {
    let mut st = States::bottom(net.num_slots(), spec);
    let mut seeds = Vec::new();
    for v in net.originals() {
        let m = spec.initial_message(v);
        if m != spec.bottom() {
            st.pending[v as usize] = m;
            seeds.push(v);
        }
    }
    run_fixpoint(net, spec, &mut st, &seeds, counter, cfg, "restart")?;
    Ok(st)
}

/// Wall time and message generations of one phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseStat {
    pub ms: f64,
    pub activations: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Phases {
    pub layer_update: PhaseStat,
    pub upload: PhaseStat,
    pub upper_iter: PhaseStat,
    pub assign: PhaseStat,
    /// Whole-graph propagation used by the restart and plain incremental modes.
    pub global: PhaseStat,
}

impl Phases {
    pub fn total_activations(&self) -> u64 {
        self.layer_update.activations
            + self.upload.activations
            + self.upper_iter.activations
            + self.assign.activations
            + self.global.activations
    }

    pub fn total_ms(&self) -> f64 {
        self.layer_update.ms + self.upload.ms + self.upper_iter.ms + self.assign.ms + self.global.ms
    }
}

/// Times a closure into a phase slot.
pub fn timed<T>(slot: &mut PhaseStat, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    slot.ms += t.elapsed().as_secs_f64() * 1e3;
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Restart,
    PlainInc,
    Layph,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "restart" => Ok(Mode::Restart),
            "plain-inc" => Ok(Mode::PlainInc),
            "layph" => Ok(Mode::Layph),
            o => Err(format!("unknown mode `{o}`")),
        }
    }
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Machine-readable summary of one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub algorithm: String,
    pub mode: Mode,
    pub phase_times_ms: PhaseTimes,
    pub activations: PhaseActivations,
    pub vertex_updates: u64,
    pub states_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub states_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verified: Option<bool>,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub layer_update: f64,
    pub upload: f64,
    pub upper_iter: f64,
    pub assign: f64,
    pub global: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct PhaseActivations {
    pub layer_update: u64,
    pub upload: u64,
    pub upper_iter: u64,
    pub assign: u64,
    pub global: u64,
    pub total: u64,
}

impl RunReport {
    pub fn new(algorithm: &str, mode: Mode, phases: &Phases, vertex_updates: u64, digest: String) -> Self {
        RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            algorithm: algorithm.to_string(),
            mode,
            phase_times_ms: PhaseTimes {
                layer_update: phases.layer_update.ms,
                upload: phases.upload.ms,
                upper_iter: phases.upper_iter.ms,
                assign: phases.assign.ms,
                global: phases.global.ms,
                total: phases.total_ms(),
            },
            activations: PhaseActivations {
                layer_update: phases.layer_update.activations,
                upload: phases.upload.activations,
                upper_iter: phases.upper_iter.activations,
                assign: phases.assign.activations,
                global: phases.global.activations,
                total: phases.total_activations(),
            },
            vertex_updates,
            states_digest: digest,
            states_path: None,
            verified: None,
        }
    }
}

/// States of live original vertices keyed by external id, sorted.
pub fn external_states(net: &Network, st: &States) -> Vec<(u64, f64)> {
    let g = net.graph();
    let mut out: Vec<(u64, f64)> = net
        .originals()
        .filter_map(|v| g.external(v).map(|x| (x, st.x[v as usize])))
        .collect();
    out.sort_by_key(|p| p.0);
    out
}

/// Hash of the external states. Values are rounded to 1e-6 so runs that
/// agree within tolerance usually share a digest.
pub fn states_digest(states: &[(u64, f64)]) -> String {
    let mut h = Sha256::new();
    for (x, v) in states {
        let s = if v.is_finite() {
            format!("{x} {:.6}\n", v)
        } else {
            format!("{x} inf\n")
        };
        h.update(s.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Largest absolute difference between two external state lists, or `None`
/// when their vertex sets differ. Matching infinities count as equal.
pub fn max_state_difference(a: &[(u64, f64)], b: &[(u64, f64)]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut worst = 0.0f64;
    for ((xa, va), (xb, vb)) in a.iter().zip(b) {
        if xa != xb {
            return None;
        }
        if va == vb {
            continue;
        }
        let d = (va - vb).abs();
        if d.is_nan() {
            return Some(f64::INFINITY);
        }
        worst = worst.max(d);
    }
    Some(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algo::{Bfs, PageRank, Sssp};
    use crate::graph::Graph;

    fn diamond() -> Network {
        Network::plain(Graph::from_edges(
            true,
            [(0, 1, 1.0), (0, 2, 4.0), (1, 2, 2.0), (2, 3, 1.0), (3, 0, 1.0)],
        ))
    }

    #[test]
    fn sssp_on_diamond() {
        let net = diamond();
        let (st, c) = run_from_scratch(&net, &Sssp { source: 0 }, &EngineConfig::default()).unwrap();
        assert_eq!(st.x, vec![0.0, 1.0, 3.0, 4.0]);
        assert!(c.edges >= 5);
        let (st, _) = run_from_scratch(&net, &Bfs { source: 1 }, &EngineConfig::default()).unwrap();
        assert_eq!(st.x, vec![3.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn activation_cap_is_reported() {
        let net = diamond();
        let cfg = EngineConfig {
            max_activations: 3,
            ..Default::default()
        };
        let err = run_from_scratch(&net, &PageRank::default(), &cfg).unwrap_err();
        assert!(matches!(err, Error::ActivationCap { cap: 3, .. }), "{err}");
    }

    #[test]
    fn parallel_matches_sequential() {
        let net = diamond();
        let par = EngineConfig {
            parallel: true,
            ..Default::default()
        };
        let pr = PageRank::default();
        let (a, _) = run_from_scratch(&net, &pr, &EngineConfig::default()).unwrap();
        let (b, _) = run_from_scratch(&net, &pr, &par).unwrap();
        for (x, y) in a.x.iter().zip(&b.x) {
            assert!((x - y).abs() < 1e-6);
        }
        let s = Sssp { source: 0 };
        let (a, _) = run_from_scratch(&net, &s, &EngineConfig::default()).unwrap();
        let (b, _) = run_from_scratch(&net, &s, &par).unwrap();
        assert_eq!(a.x, b.x);
    }
}
