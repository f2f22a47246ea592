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

//! Incremental evaluation after a batch of graph updates: revision messages
//! from the dependency memo, then either plain whole-graph propagation or the
//! layered upload / upper iteration / assignment pipeline.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;

use crate::algo::{Aggregation, Algorithm};
use crate::engine::{
    accepts, emit_value, run_fixpoint, threshold, timed, ActivationCounter, EdgeKind, EngineConfig, Phases, States,
};
use crate::error::{Error, Result};
use crate::graph::{Delta, UpdateBatch, VertexId};
use crate::layering::{build_layered_graph, LayeredGraph, Partition};
use crate::network::{Network, SubgraphId};
use crate::shortcuts::{local_min, local_sum, update_subgraph, LocalGraph, SubgraphShortcuts, NONE};

const ROOT: u32 = u32::MAX - 1;

/// Dependency memo. For `Min` algorithms every vertex remembers the in-
/// neighbour its value came from; `Sum` algorithms need nothing beyond the
/// states, since each vertex has emitted exactly its state.
#[derive(Clone, Debug, Default)]
pub struct Memo {
    parent: Vec<u32>,
}

impl Memo {
    pub fn build(net: &Network, spec: &dyn Algorithm, st: &States) -> Self {
        let mut m = Memo::default();
        if spec.aggregation() == Aggregation::Min {
            m.parent = vec![NONE; net.num_slots()];
            for v in net.graph().vertices() {
                m.parent[v as usize] = tight_parent(net, spec, st, v);
            }
        }
        m
    }

    pub fn parent(&self, v: VertexId) -> Option<VertexId> {
        match self.parent.get(v as usize).copied() {
            None | Some(NONE) | Some(ROOT) => None,
            Some(p) => Some(p),
        }
    }

    fn refresh(&mut self, net: &Network, spec: &dyn Algorithm, st: &States, vs: impl Iterator<Item = VertexId>) {
        if spec.aggregation() != Aggregation::Min {
            return;
        }
        self.parent.resize(net.num_slots(), NONE);
        for v in vs {
            self.parent[v as usize] = if net.is_live(v) {
                tight_parent(net, spec, st, v)
            } else {
                NONE
            };
        }
    }
}

/// The in-neighbour whose message produced `x_v`, or ROOT for a root value.
fn tight_parent(net: &Network, spec: &dyn Algorithm, st: &States, v: VertexId) -> u32 {
    let xv = st.x[v as usize];
    if xv == f64::INFINITY {
        return NONE;
    }
    if !net.is_proxy(v) && spec.initial_message(v) == xv {
        return ROOT;
    }
    let tol = 1e-12 * xv.abs().max(1.0);
    let mut best = (NONE, f64::INFINITY);
    for e in net.graph().in_edges(v) {
        let a = e.to;
        let xa = st.x[a as usize];
        let link = net.is_link(a, v);
        if xa == f64::INFINITY || !(xa < xv || (link && xa <= xv)) {
            continue;
        }
        let (m, _) = emit_value(spec, net, a, v, e.weight, xa);
        let d = (m - xv).abs();
        if d <= tol && d < best.1 {
            best = (a, d);
        }
    }
    best.0
}

/// Restricts revision seeding for the layered engine: internal edges of
/// subgraphs outside `touched` are never evaluated.
#[derive(Clone, Copy, Debug)]
pub struct RevisionScope<'a> {
    pub part: &'a Partition,
    pub touched: &'a BTreeSet<SubgraphId>,
}

impl RevisionScope<'_> {
    /// Whether `(a, v)` is an internal edge of an untouched subgraph.
    pub fn sealed(&self, a: VertexId, v: VertexId) -> bool {
        match (self.part.subgraph_of(a), self.part.subgraph_of(v)) {
            (Some(i), Some(j)) if i == j => !self.touched.contains(&i),
            _ => false,
        }
    }
}

/// Revision messages and the vertices reset while deducing them.
#[derive(Clone, Debug, Default)]
pub struct Revision {
    pub seeds: BTreeMap<VertexId, f64>,
    pub reset: Vec<VertexId>,
}

fn add_seed(spec: &dyn Algorithm, seeds: &mut BTreeMap<VertexId, f64>, v: VertexId, m: f64) {
    let e = seeds.entry(v).or_insert(spec.bottom());
    *e = spec.agg(*e, m);
}

/// Derives revision messages for the change `old -> new`, resetting states
/// that lost their support. Cancellation and compensation messages for `Sum`
/// algorithms are built from the states, which equal what each vertex has
/// emitted so far.
#[allow(clippy::too_many_arguments)]
pub fn deduce_revision(
    old: &Network,
    new: &Network,
    delta: &Delta,
    ctx_changed: &BTreeSet<VertexId>,
    spec: &dyn Algorithm,
    st: &mut States,
    memo: &mut Memo,
    counter: &mut ActivationCounter,
    scope: Option<RevisionScope<'_>>,
) -> Revision {
    st.resize(new.num_slots(), spec);
    let mut rev = Revision::default();
    match spec.aggregation() {
        Aggregation::Min => deduce_min(old, new, delta, spec, st, memo, counter, scope, &mut rev),
        Aggregation::Sum => deduce_sum(old, new, delta, ctx_changed, spec, st, counter, &mut rev),
    }
    for &v in &delta.born {
        let m = spec.initial_message(v);
        if m != spec.bottom() && !new.is_proxy(v) {
            add_seed(spec, &mut rev.seeds, v, m);
        }
    }
    rev
}

#[allow(clippy::too_many_arguments)]
fn deduce_min(
    old: &Network,
    new: &Network,
    delta: &Delta,
    spec: &dyn Algorithm,
    st: &mut States,
    memo: &mut Memo,
    counter: &mut ActivationCounter,
    scope: Option<RevisionScope<'_>>,
    rev: &mut Revision,
) {
    let n = new.num_slots();
    memo.parent.resize(n, NONE);
    let mut reset = vec![false; n];
    let mut stack = Vec::new();
    for &v in &delta.died {
        reset[v as usize] = true;
        stack.push(v);
    }
    for c in &delta.edges {
        if c.old.is_some() && memo.parent[c.dst as usize] == c.src && !reset[c.dst as usize] {
            reset[c.dst as usize] = true;
            stack.push(c.dst);
        }
    }
    while let Some(v) = stack.pop() {
        if (v as usize) >= old.num_slots() {
            continue;
        }
        for e in old.graph().out_edges(v) {
            let c = e.to;
            if memo.parent[c as usize] == v && !reset[c as usize] {
                reset[c as usize] = true;
                stack.push(c);
            }
        }
    }
    let reset_list: Vec<VertexId> = (0..n as VertexId).filter(|&v| reset[v as usize]).collect();
    for &v in &reset_list {
        st.x[v as usize] = f64::INFINITY;
        st.pending[v as usize] = f64::INFINITY;
        memo.parent[v as usize] = NONE;
    }
    let g = new.graph();
    for &v in &reset_list {
        if !accepts(spec, new, v) {
            continue;
        }
        if !new.is_proxy(v) {
            let root = spec.initial_message(v);
            if root != f64::INFINITY {
                add_seed(spec, &mut rev.seeds, v, root);
            }
        }
        for e in g.in_edges(v) {
            let a = e.to;
            if reset[a as usize] || st.x[a as usize] == f64::INFINITY || scope.is_some_and(|s| s.sealed(a, v)) {
                continue;
            }
            let (m, kind) = emit_value(spec, new, a, v, e.weight, st.x[a as usize]);
            counter.ge(a, v, kind);
            add_seed(spec, &mut rev.seeds, v, m);
        }
    }
    for c in &delta.edges {
        let (Some(w), a, b) = (c.new, c.src, c.dst) else {
            continue;
        };
        if reset[b as usize] || reset[a as usize] || !accepts(spec, new, b) {
            continue;
        }
        let xa = st.x[a as usize];
        if xa == f64::INFINITY {
            continue;
        }
        let (m, kind) = emit_value(spec, new, a, b, w, xa);
        counter.ge(a, b, kind);
        if m < st.x[b as usize] {
            add_seed(spec, &mut rev.seeds, b, m);
        }
    }
    rev.reset = reset_list;
}

#[allow(clippy::too_many_arguments)]
fn deduce_sum(
    old: &Network,
    new: &Network,
    delta: &Delta,
    ctx_changed: &BTreeSet<VertexId>,
    spec: &dyn Algorithm,
    st: &mut States,
    counter: &mut ActivationCounter,
    rev: &mut Revision,
) {
    let mut by_src: BTreeMap<VertexId, Vec<usize>> = BTreeMap::new();
    for (i, c) in delta.edges.iter().enumerate() {
        by_src.entry(c.src).or_default().push(i);
    }
    let died: BTreeSet<VertexId> = delta.died.iter().copied().collect();
    let deliver = |seeds: &mut BTreeMap<VertexId, f64>, t: VertexId, m: f64| {
        if accepts(spec, new, t) && m != 0.0 {
            add_seed(spec, seeds, t, m);
        }
    };
    let mut sources: BTreeSet<VertexId> = by_src.keys().copied().collect();
    sources.extend(ctx_changed.iter().copied());
    for a in sources {
        if (a as usize) >= old.num_slots() || !old.is_live(a) {
            continue;
        }
        let emitted = st.x[a as usize];
        if emitted == 0.0 {
            continue;
        }
        let alive = new.is_live(a) && !died.contains(&a);
        if ctx_changed.contains(&a) || !alive {
            for e in old.graph().out_edges(a) {
                let (m, kind) = emit_value(spec, old, a, e.to, e.weight, emitted);
                counter.ge(a, e.to, kind);
                deliver(&mut rev.seeds, e.to, -m);
            }
            if alive {
                for e in new.graph().out_edges(a) {
                    let (m, kind) = emit_value(spec, new, a, e.to, e.weight, emitted);
                    counter.ge(a, e.to, kind);
                    deliver(&mut rev.seeds, e.to, m);
                }
            }
        } else {
            for &i in by_src.get(&a).map(|v| v.as_slice()).unwrap_or(&[]) {
                let c = delta.edges[i];
                if let Some(w) = c.old {
                    let (m, kind) = emit_value(spec, old, a, c.dst, w, emitted);
                    counter.ge(a, c.dst, kind);
                    deliver(&mut rev.seeds, c.dst, -m);
                }
                if let Some(w) = c.new {
                    let (m, kind) = emit_value(spec, new, a, c.dst, w, emitted);
                    counter.ge(a, c.dst, kind);
                    deliver(&mut rev.seeds, c.dst, m);
                }
            }
        }
    }
    for &v in &delta.died {
        st.x[v as usize] = 0.0;
        st.pending[v as usize] = 0.0;
        rev.reset.push(v);
    }
}

/// Per-phase activation counters of one incremental run.
#[derive(Clone, Debug, Default)]
pub struct PhaseCounters {
    pub layer_update: ActivationCounter,
    pub upload: ActivationCounter,
    pub upper_iter: ActivationCounter,
    pub assign: ActivationCounter,
    pub global: ActivationCounter,
}

impl PhaseCounters {
    pub fn new(trace: bool) -> Self {
        let c = if trace {
            ActivationCounter::tracing()
        } else {
            ActivationCounter::new()
        };
        PhaseCounters {
            layer_update: c.clone(),
            upload: c.clone(),
            upper_iter: c.clone(),
            assign: c.clone(),
            global: c,
        }
    }

    pub fn vertex_updates(&self) -> u64 {
        self.layer_update.vertex_updates
            + self.upload.vertex_updates
            + self.upper_iter.vertex_updates
            + self.assign.vertex_updates
            + self.global.vertex_updates
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOutcome {
    pub phases: Phases,
    pub counters: PhaseCounters,
    /// Subgraphs refreshed by the layered engine.
    pub touched: BTreeSet<SubgraphId>,
    /// Entry cache of the upper iteration, kept when tracing.
    pub entry_cache: Option<EntryCache>,
}

impl RunOutcome {
    fn finish(mut self) -> Self {
        self.phases.layer_update.activations = self.counters.layer_update.edges;
        self.phases.upload.activations = self.counters.upload.edges;
        self.phases.upper_iter.activations = self.counters.upper_iter.edges;
        self.phases.assign.activations = self.counters.assign.edges;
        self.phases.global.activations = self.counters.global.edges;
        self
    }

    pub fn total_activations(&self) -> u64 {
        self.phases.total_activations()
    }
}

/// Snapshot of changed states, used to refresh the memo after a run.
fn changed_vertices(before: &[f64], after: &States, reset: &[VertexId]) -> Vec<VertexId> {
    let mut out: BTreeSet<VertexId> = reset.iter().copied().collect();
    for (v, &x) in after.x.iter().enumerate() {
        if before.get(v).copied() != Some(x) {
            out.insert(v as VertexId);
        }
    }
    out.into_iter().collect()
}

/// State of a plain incremental engine: network, states and memo.
#[derive(Clone, Debug)]
pub struct PlainState {
    pub net: Network,
    pub st: States,
    pub memo: Memo,
}

impl PlainState {
    pub fn new(net: Network, spec: &dyn Algorithm, st: States) -> Self {
        let memo = Memo::build(&net, spec, &st);
        PlainState { net, st, memo }
    }
}

/// Applies `batch` and propagates revision messages over the whole graph.
pub fn run_incremental_plain(
    ps: &mut PlainState,
    batch: &UpdateBatch,
    spec: &dyn Algorithm,
    cfg: &EngineConfig,
    trace: bool,
) -> Result<RunOutcome> {
    let mut out = RunOutcome {
        counters: PhaseCounters::new(trace),
        ..Default::default()
    };
    let c = &mut out.counters.global;
    let phases = &mut out.phases;
    timed(&mut phases.global, || -> Result<()> {
        let (net, delta, ctxc) = ps.net.apply_batch(batch, &|_| None)?;
        let before = ps.st.x.clone();
        let rev = deduce_revision(&ps.net, &net, &delta, &ctxc, spec, &mut ps.st, &mut ps.memo, c, None);
        let mut start: BTreeSet<VertexId> = BTreeSet::new();
        for (&v, &m) in &rev.seeds {
            let p = &mut ps.st.pending[v as usize];
            *p = spec.agg(*p, m);
            start.insert(v);
        }
        if spec.aggregation() == Aggregation::Sum {
            for (v, &p) in ps.st.pending.iter().enumerate() {
                if p != 0.0 {
                    start.insert(v as VertexId);
                }
            }
        }
        let start: Vec<VertexId> = start.into_iter().collect();
        run_fixpoint(&net, spec, &mut ps.st, &start, c, cfg, "global")?;
        let changed = changed_vertices(&before, &ps.st, &rev.reset);
        ps.memo.refresh(&net, spec, &ps.st, changed.into_iter());
        ps.net = net;
        Ok(())
    })?;
    Ok(out.finish())
}

/// Outcome of the structural part of a layered update.
#[derive(Clone, Debug)]
pub struct LayerUpdate {
    pub old_net: Network,
    pub delta: Delta,
    pub ctx_changed: BTreeSet<VertexId>,
    pub dissolved: Vec<SubgraphId>,
    /// Live subgraphs whose roles and shortcuts were refreshed.
    pub touched: BTreeSet<SubgraphId>,
}

/// Recomputes roles of `touched` subgraphs, dissolving those that shrank
/// below two members or stopped being dense. Returns `(refreshed, dissolved)`.
pub fn refresh_partition(
    part: &mut Partition,
    net: &Network,
    touched: BTreeSet<SubgraphId>,
) -> (BTreeSet<SubgraphId>, Vec<SubgraphId>) {
    part.ensure_len(net.num_slots());
    let mut refreshed = BTreeSet::new();
    let mut dissolved = Vec::new();
    let mut work: VecDeque<SubgraphId> = touched.into_iter().collect();
    while let Some(id) = work.pop_front() {
        if part.subgraph(id).is_none() {
            continue;
        }
        part.recompute(net, id);
        if part.subgraph(id).unwrap().is_dense() {
            refreshed.insert(id);
            continue;
        }
        let sg = part.dissolve(id).unwrap();
        refreshed.remove(&id);
        dissolved.push(id);
        for nb in crate::layering::partition::neighbour_subgraphs(part, net, &sg.vertices) {
            work.push_back(nb);
        }
    }
    (refreshed, dissolved)
}

/// Applies `batch` to the layered graph's network, refreshes the partition
/// and repairs the shortcuts of every subgraph the batch touched.
pub fn update_layers(
    lg: &mut LayeredGraph,
    batch: &UpdateBatch,
    spec: &dyn Algorithm,
    counter: &mut ActivationCounter,
) -> Result<LayerUpdate> {
    let part = &lg.part;
    let (net, delta, ctx_changed) = lg.net.apply_batch(batch, &|v| part.subgraph_of(v))?;
    let mut touched = BTreeSet::new();
    for c in &delta.edges {
        for v in [c.src, c.dst] {
            if let Some(s) = lg.part.subgraph_of(v) {
                touched.insert(s);
            }
        }
    }
    for v in delta.died.iter().chain(ctx_changed.iter()) {
        if let Some(s) = lg.part.subgraph_of(*v) {
            touched.insert(s);
        }
    }
    let mut part = lg.part.clone();
    let (refreshed, dissolved) = refresh_partition(&mut part, &net, touched);
    for id in &dissolved {
        lg.shortcuts.subgraphs.remove(id);
    }
    let jobs: Vec<(SubgraphId, SubgraphShortcuts)> = refreshed
        .iter()
        .filter_map(|id| lg.shortcuts.subgraphs.remove(id).map(|sc| (*id, sc)))
        .collect();
    let proto = counter.child();
    let results: Vec<(SubgraphId, SubgraphShortcuts, ActivationCounter)> = jobs
        .into_par_iter()
        .map(|(id, old)| {
            let mut c = proto.child();
            let sg = part.subgraph(id).unwrap();
            let new_lg = LocalGraph::build(&net, &part, sg, spec);
            let sc = update_subgraph(&old, new_lg, spec, &mut c);
            (id, sc, c)
        })
        .collect();
    for (id, sc, c) in results {
        counter.merge(c);
        lg.shortcuts.subgraphs.insert(id, sc);
    }
    let old_net = std::mem::replace(&mut lg.net, net);
    lg.part = part;
    lg.updates_since_rebuild += batch.len();
    Ok(LayerUpdate {
        old_net,
        delta,
        ctx_changed,
        dissolved,
        touched: refreshed,
    })
}

/// Reset vertices of untouched subgraphs, which are repaired through
/// shortcuts instead of internal edges.
#[derive(Clone, Debug, Default)]
pub struct SealedResets {
    /// Messages for reset boundary vertices from intact entries.
    pub upper: BTreeMap<VertexId, f64>,
    /// Reset internal vertices, repaired during assignment.
    pub internal: BTreeMap<SubgraphId, Vec<VertexId>>,
}

/// Seeds reset boundary vertices of untouched subgraphs from the shortcut
/// rows of intact entries. Missing rows are charged to `maintenance`.
pub fn reseed_sealed(
    lg: &mut LayeredGraph,
    spec: &dyn Algorithm,
    st: &States,
    rev: &Revision,
    touched: &BTreeSet<SubgraphId>,
    counter: &mut ActivationCounter,
    maintenance: &mut ActivationCounter,
) -> SealedResets {
    let mut out = SealedResets::default();
    if spec.aggregation() != Aggregation::Min {
        return out;
    }
    let LayeredGraph {
        net, part, shortcuts, ..
    } = lg;
    for &v in &rev.reset {
        if !net.is_live(v) || !accepts(spec, net, v) {
            continue;
        }
        let mem = part.membership(v);
        let Some(j) = mem.subgraph.filter(|j| !touched.contains(j)) else {
            continue;
        };
        if mem.is_internal() {
            out.internal.entry(j).or_default().push(v);
            continue;
        }
        let sc = shortcuts.subgraphs.get_mut(&j).expect("shortcuts for live subgraph");
        let lv = sc.lg.local(v).expect("member") as usize;
        for &u in &part.subgraph(j).expect("live subgraph").entries {
            let xu = st.x[u as usize];
            if u == v || xu == f64::INFINITY {
                continue;
            }
            let w = sc.ensure_row(u, spec, maintenance).val[lv];
            if w == f64::INFINITY {
                continue;
            }
            counter.ge(u, v, EdgeKind::Shortcut);
            add_seed(spec, &mut out.upper, v, spec.combine(xu, w));
        }
    }
    out
}

/// Messages handed from the upload phase to the upper iteration.
#[derive(Clone, Debug)]
pub struct UpperInput {
    /// Messages that arrived over cross edges, or revision messages at
    /// entries and outliers.
    pub ext: Vec<f64>,
    /// Messages that arrived from inside a subgraph. They are already part of
    /// the receiver's state and still have to leave over its cross edges.
    pub carry: Vec<f64>,
    /// Messages that stand for paths inside a subgraph and are not yet part
    /// of the receiver's state.
    pub int: Vec<f64>,
    /// Subgraphs that ran a local fixpoint.
    pub uploaded: Vec<SubgraphId>,
}

/// Pushes revision messages at internal and exit-only vertices through their
/// subgraphs, updating lower states in place and collecting what reaches the
/// boundary. Revision messages at entries and outliers pass through.
pub fn upload(
    lg: &LayeredGraph,
    spec: &dyn Algorithm,
    st: &mut States,
    rev: &Revision,
    touched: &BTreeSet<SubgraphId>,
    sealed: &SealedResets,
    counter: &mut ActivationCounter,
) -> UpperInput {
    let n = lg.net.num_slots();
    st.resize(n, spec);
    let bottom = spec.bottom();
    let mut input = UpperInput {
        ext: vec![bottom; n],
        carry: vec![bottom; n],
        int: vec![bottom; n],
        uploaded: Vec::new(),
    };
    for (&v, &m) in &sealed.upper {
        input.int[v as usize] = spec.agg(input.int[v as usize], m);
    }
    let mut local: BTreeMap<SubgraphId, Vec<(VertexId, f64)>> = BTreeMap::new();
    for (&v, &m) in &rev.seeds {
        let mem = lg.part.membership(v);
        match mem.subgraph {
            Some(s) if !mem.entry && touched.contains(&s) => local.entry(s).or_default().push((v, m)),
            Some(_) if !mem.entry => input.int[v as usize] = spec.agg(input.int[v as usize], m),
            _ => input.ext[v as usize] = spec.agg(input.ext[v as usize], m),
        }
    }
    let tau = threshold(spec, &lg.net);
    let proto = counter.child();
    let x = &st.x;
    let pending = &st.pending;
    type Patch = (SubgraphId, Vec<(VertexId, f64, f64, f64)>, ActivationCounter);
    let patches: Vec<Patch> = local
        .into_par_iter()
        .map(|(id, seeds)| {
            let mut c = proto.child();
            let sc = lg.shortcuts.get(id).expect("shortcuts for live subgraph");
            let l = &sc.lg;
            let mut out = Vec::new();
            match spec.aggregation() {
                Aggregation::Min => {
                    let mut val: Vec<f64> = l.verts.iter().map(|&v| x[v as usize]).collect();
                    let seeds = seeds.iter().map(|&(v, m)| (l.local(v).unwrap(), m, NONE)).collect();
                    local_min(l, spec, &mut val, None, None, seeds, &mut c);
                    for (i, &v) in l.verts.iter().enumerate() {
                        if val[i] < x[v as usize] {
                            let carry = if l.upper[i] { val[i] } else { bottom };
                            out.push((v, val[i], carry, bottom));
                        }
                    }
                }
                Aggregation::Sum => {
                    let mut res: Vec<f64> = l
                        .verts
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| if l.upper[i] { 0.0 } else { pending[v as usize] })
                        .collect();
                    for &(v, m) in &seeds {
                        res[l.local(v).unwrap() as usize] += m;
                    }
                    let mut gain = vec![0.0; l.len()];
                    let start: Vec<u32> = (0..l.len() as u32).collect();
                    local_sum(
                        l,
                        spec,
                        &mut res,
                        tau,
                        start,
                        &mut c,
                        |_, _| {},
                        |v, m| gain[v as usize] += m,
                    );
                    for (i, &v) in l.verts.iter().enumerate() {
                        if l.upper[i] {
                            if gain[i] != 0.0 || res[i] != 0.0 {
                                out.push((v, x[v as usize] + gain[i], gain[i], res[i]));
                            }
                        } else if gain[i] != 0.0 || res[i] != pending[v as usize] {
                            out.push((v, x[v as usize] + gain[i], 0.0, res[i]));
                        }
                    }
                }
            }
            (id, out, c)
        })
        .collect();
    for (id, out, c) in patches {
        counter.merge(c);
        input.uploaded.push(id);
        let upper = |v: VertexId| lg.part.membership(v).is_upper();
        for (v, xv, carry, res) in out {
            st.x[v as usize] = xv;
            input.carry[v as usize] = spec.agg(input.carry[v as usize], carry);
            if spec.aggregation() == Aggregation::Sum {
                if upper(v) {
                    st.pending[v as usize] += res;
                } else {
                    st.pending[v as usize] = res;
                }
            }
        }
    }
    input
}

/// Aggregated messages each entry received over cross edges during the
/// upper iteration, plus whether they were pushed through the shortcuts.
#[derive(Clone, Debug)]
pub struct EntryCache {
    pub value: Vec<f64>,
    pub forwarded: Vec<bool>,
    /// Every processed cross-edge arrival `(entry, message)` when tracing.
    pub arrivals: Option<Vec<(VertexId, f64)>>,
}

/// Runs the upper layer to its fixpoint: cross edges as usual, plus shortcut
/// hops between boundary vertices of one subgraph.
///
/// Rows an entry needs but never materialized are computed on the spot and
/// charged to `maintenance`.
pub fn iterate_upper(
    lg: &mut LayeredGraph,
    spec: &dyn Algorithm,
    st: &mut States,
    input: UpperInput,
    counter: &mut ActivationCounter,
    maintenance: &mut ActivationCounter,
    max_activations: u64,
) -> Result<EntryCache> {
    let LayeredGraph {
        net, part, shortcuts, ..
    } = lg;
    let (net, part) = (&*net, &*part);
    let n = net.num_slots();
    let agg = spec.aggregation();
    let bottom = spec.bottom();
    let tau = threshold(spec, net);
    let UpperInput {
        mut ext,
        mut carry,
        mut int,
        ..
    } = input;
    let mut cache = EntryCache {
        value: vec![bottom; n],
        forwarded: vec![false; n],
        arrivals: counter.trace.as_ref().map(|_| Vec::new()),
    };
    // Best message already known inside the subgraph, per entry.
    let mut inner: Vec<f64> = st.x.clone();
    let mut queued = vec![false; n];
    let mut queue = VecDeque::new();
    let upper_targets: BTreeMap<SubgraphId, Vec<u32>> = shortcuts
        .subgraphs
        .iter()
        .map(|(&id, sc)| {
            (
                id,
                (0..sc.lg.len() as u32).filter(|&i| sc.lg.upper[i as usize]).collect(),
            )
        })
        .collect();

    let active = |v: usize, ext: &[f64], int: &[f64], carry: &[f64], x: &[f64]| match agg {
        Aggregation::Min => ext[v] < x[v] || int[v] < x[v] || (carry[v] != bottom && carry[v] <= x[v]),
        Aggregation::Sum => {
            ext[v].abs().max(int[v].abs()).max(carry[v].abs()) >= tau
                && (ext[v] != 0.0 || int[v] != 0.0 || carry[v] != 0.0)
        }
    };
    if agg == Aggregation::Sum {
        for v in part.upper_vertices(net) {
            let p = std::mem::replace(&mut st.pending[v as usize], 0.0);
            int[v as usize] += p;
        }
    }
    for (v, q) in queued.iter_mut().enumerate().take(n) {
        if net.is_live(v as VertexId) && active(v, &ext, &int, &carry, &st.x) {
            *q = true;
            queue.push_back(v as VertexId);
        }
    }
    while let Some(v) = queue.pop_front() {
        let vi = v as usize;
        queued[vi] = false;
        let (e, i, c) = (ext[vi], int[vi], carry[vi]);
        if agg == Aggregation::Sum && e.abs().max(i.abs()).max(c.abs()) < tau {
            continue;
        }
        ext[vi] = bottom;
        int[vi] = bottom;
        carry[vi] = bottom;
        let mem = part.membership(v);
        let mut wake: Vec<VertexId> = Vec::new();

        // Shortcut hop for messages that came from outside the subgraph.
        let forward = match agg {
            Aggregation::Min => {
                if mem.entry && e != bottom {
                    if let Some(a) = &mut cache.arrivals {
                        a.push((v, e));
                    }
                    cache.value[vi] = cache.value[vi].min(e);
                }
                if mem.entry && e < inner[vi] {
                    inner[vi] = e;
                    Some(e)
                } else {
                    None
                }
            }
            Aggregation::Sum => {
                if mem.entry && e != 0.0 {
                    if let Some(a) = &mut cache.arrivals {
                        a.push((v, e));
                    }
                    cache.value[vi] += e;
                    Some(e)
                } else {
                    None
                }
            }
        };
        if let (Some(m), Some(sid)) = (forward, mem.subgraph) {
            cache.forwarded[vi] = true;
            let sc = shortcuts.subgraphs.get_mut(&sid).expect("shortcuts for live subgraph");
            sc.ensure_row(v, spec, maintenance);
            let sc = &*sc;
            let row = &sc.rows[&v];
            for &y in &upper_targets[&sid] {
                let w = row.val[y as usize];
                let yg = sc.lg.verts[y as usize];
                if w == bottom || (agg == Aggregation::Min && yg == v) || !accepts(spec, net, yg) {
                    continue;
                }
                let msg = spec.combine(m, w);
                counter.ge(v, yg, EdgeKind::Shortcut);
                let yi = yg as usize;
                match agg {
                    Aggregation::Min => {
                        if msg < int[yi] && msg < st.x[yi] {
                            int[yi] = msg;
                            wake.push(yg);
                        }
                    }
                    Aggregation::Sum => {
                        int[yi] += msg;
                        wake.push(yg);
                    }
                }
            }
        }

        // State update and cross-edge emission.
        let send = match agg {
            Aggregation::Min => {
                let best = e.min(i);
                if mem.entry && i < inner[vi] {
                    inner[vi] = i;
                }
                if best < st.x[vi] {
                    st.x[vi] = best;
                    Some(best)
                } else if c != bottom && c == st.x[vi] {
                    Some(c)
                } else {
                    None
                }
            }
            Aggregation::Sum => {
                st.x[vi] += e + i;
                let s = e + i + c;
                (s != 0.0).then_some(s)
            }
        };
        if let Some(m) = send {
            counter.vertex_updates += 1;
            for edge in net.graph().out_edges(v) {
                let t = edge.to;
                if part.is_internal_edge(v, t) || !accepts(spec, net, t) {
                    continue;
                }
                let (msg, kind) = emit_value(spec, net, v, t, edge.weight, m);
                counter.ge(v, t, kind);
                let ti = t as usize;
                match agg {
                    Aggregation::Min => {
                        if msg < ext[ti] && msg < st.x[ti] {
                            ext[ti] = msg;
                            wake.push(t);
                        }
                    }
                    Aggregation::Sum => {
                        ext[ti] += msg;
                        wake.push(t);
                    }
                }
            }
        }
        for t in wake {
            let ti = t as usize;
            if !queued[ti] && active(ti, &ext, &int, &carry, &st.x) {
                queued[ti] = true;
                queue.push_back(t);
            }
        }
        if counter.edges > max_activations {
            return Err(Error::ActivationCap {
                cap: max_activations,
                phase: "upper_iter",
                active: queue.len(),
            });
        }
    }
    if agg == Aggregation::Sum {
        for v in 0..n {
            let left = ext[v] + int[v];
            if left != 0.0 {
                st.pending[v] += left;
            }
        }
    }
    Ok(cache)
}

/// Delivers each entry's cached message to the internal members of its
/// subgraph through the shortcuts. Reset internal vertices of untouched
/// subgraphs also take the final states of entries that forwarded nothing.
pub fn assign(
    lg: &mut LayeredGraph,
    spec: &dyn Algorithm,
    st: &mut States,
    cache: &EntryCache,
    sealed: &SealedResets,
    counter: &mut ActivationCounter,
    maintenance: &mut ActivationCounter,
) {
    let bottom = spec.bottom();
    for (j, ys) in &sealed.internal {
        let Some(sg) = lg.part.subgraph(*j) else { continue };
        let sc = lg.shortcuts.subgraphs.get_mut(j).expect("shortcuts for live subgraph");
        for &u in &sg.entries {
            let xu = st.x[u as usize];
            if xu == bottom || cache.forwarded[u as usize] {
                continue;
            }
            sc.ensure_row(u, spec, maintenance);
            let sc = &*sc;
            let row = &sc.rows[&u];
            for &y in ys {
                let w = row.val[sc.lg.local(y).expect("member") as usize];
                if w == bottom {
                    continue;
                }
                counter.ge(u, y, EdgeKind::Shortcut);
                let x = &mut st.x[y as usize];
                *x = spec.agg(*x, spec.combine(xu, w));
            }
        }
    }
    for sc in lg.shortcuts.subgraphs.values() {
        for (&u, row) in &sc.rows {
            let ui = u as usize;
            let m = cache.value[ui];
            let go = match spec.aggregation() {
                Aggregation::Min => cache.forwarded[ui] && m != bottom,
                Aggregation::Sum => m != 0.0,
            };
            if !go {
                continue;
            }
            for (y, &w) in row.val.iter().enumerate() {
                if w == bottom || sc.lg.upper[y] || sc.lg.absorb[y] {
                    continue;
                }
                let yg = sc.lg.verts[y];
                let msg = spec.combine(m, w);
                counter.ge(u, yg, EdgeKind::Shortcut);
                let x = &mut st.x[yg as usize];
                *x = spec.agg(*x, msg);
            }
        }
    }
}

/// Engine state of the layered incremental mode.
#[derive(Clone, Debug)]
pub struct LayeredState {
    pub lg: LayeredGraph,
    pub st: States,
    pub memo: Memo,
}

impl LayeredState {
    pub fn new(lg: LayeredGraph, spec: &dyn Algorithm, st: States) -> Self {
        let memo = Memo::build(&lg.net, spec, &st);
        LayeredState { lg, st, memo }
    }
}

/// Full layered incremental run for one batch.
pub fn run_incremental_layered(
    ls: &mut LayeredState,
    batch: &UpdateBatch,
    spec: &dyn Algorithm,
    cfg: &EngineConfig,
    trace: bool,
) -> Result<RunOutcome> {
    let mut out = RunOutcome {
        counters: PhaseCounters::new(trace),
        ..Default::default()
    };
    let ph = &mut out.phases;
    let cs = &mut out.counters;
    let up = timed(&mut ph.layer_update, || {
        update_layers(&mut ls.lg, batch, spec, &mut cs.layer_update)
    })?;
    let before = ls.st.x.clone();
    let (rev, sealed, input) = timed(&mut ph.upload, || {
        let scope = RevisionScope {
            part: &ls.lg.part,
            touched: &up.touched,
        };
        let rev = deduce_revision(
            &up.old_net,
            &ls.lg.net,
            &up.delta,
            &up.ctx_changed,
            spec,
            &mut ls.st,
            &mut ls.memo,
            &mut cs.upload,
            Some(scope),
        );
        let sealed = reseed_sealed(
            &mut ls.lg,
            spec,
            &ls.st,
            &rev,
            &up.touched,
            &mut cs.upload,
            &mut cs.layer_update,
        );
        let input = upload(&ls.lg, spec, &mut ls.st, &rev, &up.touched, &sealed, &mut cs.upload);
        (rev, sealed, input)
    });
    let cache = timed(&mut ph.upper_iter, || {
        iterate_upper(
            &mut ls.lg,
            spec,
            &mut ls.st,
            input,
            &mut cs.upper_iter,
            &mut cs.layer_update,
            cfg.max_activations,
        )
    })?;
    timed(&mut ph.assign, || {
        assign(
            &mut ls.lg,
            spec,
            &mut ls.st,
            &cache,
            &sealed,
            &mut cs.assign,
            &mut cs.layer_update,
        )
    });
    let changed = changed_vertices(&before, &ls.st, &rev.reset);
    ls.memo.refresh(&ls.lg.net, spec, &ls.st, changed.into_iter());
    if ls.lg.updates_since_rebuild > ls.lg.cfg.rebuild_threshold {
        timed(&mut ph.layer_update, || rebuild(ls, spec, &mut cs.layer_update));
    }
    if trace {
        out.entry_cache = Some(cache);
    }
    out.touched = up.touched;
    Ok(out.finish())
}

/// Message generations that broke layer containment in a traced run:
/// `(upload, upper)` where upload events used an internal edge of an
/// untouched subgraph and upper events used any internal edge.
pub fn containment_violations(part: &Partition, out: &RunOutcome) -> (usize, usize) {
    let internal = |e: &crate::engine::GeEvent| {
        e.kind != EdgeKind::Shortcut
            && part.subgraph_of(e.src).is_some()
            && part.subgraph_of(e.src) == part.subgraph_of(e.dst)
    };
    let events = |c: &ActivationCounter| c.trace.clone().unwrap_or_default();
    let upload = events(&out.counters.upload)
        .iter()
        .filter(|e| internal(e) && !out.touched.contains(&part.subgraph_of(e.src).unwrap()))
        .count();
    let upper = events(&out.counters.upper_iter).iter().filter(|e| internal(e)).count();
    (upload, upper)
}

/// Rediscovers the partition on the collapsed graph and derives states for
/// the new replicas. Original vertex ids are kept.
pub fn rebuild(ls: &mut LayeredState, spec: &dyn Algorithm, counter: &mut ActivationCounter) {
    let base = ls.lg.net.base_graph();
    let cfg = ls.lg.cfg.clone();
    let lg = build_layered_graph(&base, spec, &cfg, counter);
    let old_slots = ls.lg.net.num_slots();
    ls.st.resize(lg.net.num_slots(), spec);
    for (p, _) in ls.lg.net.proxies() {
        ls.st.x[p as usize] = spec.bottom();
        ls.st.pending[p as usize] = spec.bottom();
    }
    let net = &lg.net;
    for (p, info) in net.proxies() {
        if (p as usize) < old_slots {
            continue;
        }
        let v = match info.kind {
            crate::network::ProxyKind::Into => ls.st.x[info.host as usize],
            crate::network::ProxyKind::OutOf => {
                let mut acc = spec.bottom();
                for e in net.graph().in_edges(p) {
                    let xa = ls.st.x[e.to as usize];
                    if xa == spec.bottom() {
                        continue;
                    }
                    let (m, kind) = emit_value(spec, net, e.to, p, e.weight, xa);
                    counter.ge(e.to, p, kind);
                    acc = spec.agg(acc, m);
                }
                acc
            }
        };
        ls.st.x[p as usize] = v;
    }
    ls.memo = Memo::build(net, spec, &ls.st);
    ls.lg = lg;
    log::info!("partition rebuilt after update threshold was exceeded");
}
