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

//! Shortcuts: for every entry `u` of a dense subgraph, the aggregated path
//! weight from `u` to each member, so that a message at `u` can reach the
//! whole subgraph in one step.

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::algo::{Aggregation, Algorithm, SenderContext};
use crate::engine::{ActivationCounter, EdgeKind};
use crate::graph::VertexId;
use crate::layering::partition::{DenseSubgraph, Partition};
use crate::network::{Network, SubgraphId};

/// Residual below which a shortcut computation stops re-emitting.
pub const SUM_TRUNCATION: f64 = 1e-9;

pub(crate) const NONE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct LocalEdge {
    pub to: u32,
    pub weight: f64,
    pub link: bool,
}

/// A subgraph with its internal edges, indexed locally.
#[derive(Clone, Debug)]
pub struct LocalGraph {
    pub id: SubgraphId,
    pub verts: Vec<VertexId>,
    index: HashMap<VertexId, u32>,
    pub out: Vec<Vec<LocalEdge>>,
    /// `(source, position in out[source])` per target.
    pub inc: Vec<Vec<(u32, u32)>>,
    pub ctx: Vec<SenderContext>,
    pub absorb: Vec<bool>,
    pub upper: Vec<bool>,
    pub entries: Vec<u32>,
}

impl LocalGraph {
    pub fn build(net: &Network, part: &Partition, sg: &DenseSubgraph, spec: &dyn Algorithm) -> Self {
        let verts = sg.vertices.clone();
        let index: HashMap<VertexId, u32> = verts.iter().enumerate().map(|(i, &v)| (v, i as u32)).collect();
        let g = net.graph();
        let mut out = vec![Vec::new(); verts.len()];
        let mut inc = vec![Vec::new(); verts.len()];
        for (i, &v) in verts.iter().enumerate() {
            for e in g.out_edges(v) {
                if let Some(&j) = index.get(&e.to) {
                    inc[j as usize].push((i as u32, out[i].len() as u32));
                    out[i].push(LocalEdge {
                        to: j,
                        weight: e.weight,
                        link: net.is_link(v, e.to),
                    });
                }
            }
        }
        let upper = verts.iter().map(|&v| part.membership(v).is_upper()).collect();
        LocalGraph {
            id: sg.id,
            ctx: verts.iter().map(|&v| net.ctx(v)).collect(),
            absorb: verts.iter().map(|&v| spec.absorbs(v)).collect(),
            entries: sg.entries.iter().map(|v| index[v]).collect(),
            upper,
            verts,
            index,
            out,
            inc,
        }
    }

    pub fn len(&self) -> usize {
        self.verts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verts.is_empty()
    }

    pub fn local(&self, v: VertexId) -> Option<u32> {
        self.index.get(&v).copied()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(|o| o.len()).sum()
    }

    #[inline]
    pub(crate) fn ge(&self, spec: &dyn Algorithm, a: u32, e: &LocalEdge, m: f64) -> f64 {
        if e.link {
            m
        } else {
            spec.generate(m, e.weight, self.ctx[a as usize])
        }
    }

    #[inline]
    fn kind(e: &LocalEdge) -> EdgeKind {
        if e.link {
            EdgeKind::Link
        } else {
            EdgeKind::Edge
        }
    }

    /// Edge factor used to detect changes: the generated unit message.
    fn factor(&self, spec: &dyn Algorithm, a: u32, e: &LocalEdge) -> f64 {
        self.ge(spec, a, e, spec.ge_identity())
    }
}

/// Min-aggregation propagation restricted to a subgraph. `val[v]` holds the
/// best message received; vertices re-emit it on improvement. `origin`, when
/// given, never re-emits. Seeds are `(target, message, sender)`.
pub(crate) fn local_min(
    lg: &LocalGraph,
    spec: &dyn Algorithm,
    val: &mut [f64],
    mut parent: Option<&mut [u32]>,
    origin: Option<u32>,
    seeds: Vec<(u32, f64, u32)>,
    counter: &mut ActivationCounter,
) {
    let mut queued = vec![false; lg.len()];
    let mut queue = VecDeque::new();
    let mut offer = |t: u32, msg: f64, from: u32, val: &mut [f64], queued: &mut [bool], queue: &mut VecDeque<u32>| {
        if lg.absorb[t as usize] || !(msg < val[t as usize]) {
            return;
        }
        val[t as usize] = msg;
        if let Some(p) = parent.as_deref_mut() {
            p[t as usize] = from;
        }
        if Some(t) != origin && !queued[t as usize] {
            queued[t as usize] = true;
            queue.push_back(t);
        }
    };
    for (t, msg, from) in seeds {
        offer(t, msg, from, val, &mut queued, &mut queue);
    }
    while let Some(v) = queue.pop_front() {
        queued[v as usize] = false;
        let m = val[v as usize];
        counter.vertex_updates += 1;
        for e in &lg.out[v as usize] {
            if lg.absorb[e.to as usize] {
                continue;
            }
            let msg = lg.ge(spec, v, e, m);
            counter.ge(lg.verts[v as usize], lg.verts[e.to as usize], LocalGraph::kind(e));
            offer(e.to, msg, v, val, &mut queued, &mut queue);
        }
    }
}

/// Sum-aggregation propagation restricted to a subgraph. `res[v]` is the
/// unprocessed residual; a vertex re-emits it once it reaches `trunc`.
/// `on_deliver` sees every delivered message, `on_process` every emitted one.
#[allow(clippy::too_many_arguments)]
pub(crate) fn local_sum(
    lg: &LocalGraph,
    spec: &dyn Algorithm,
    res: &mut [f64],
    trunc: f64,
    start: impl IntoIterator<Item = u32>,
    counter: &mut ActivationCounter,
    mut on_deliver: impl FnMut(u32, f64),
    mut on_process: impl FnMut(u32, f64),
) {
    let mut queued = vec![false; lg.len()];
    let mut queue = VecDeque::new();
    for v in start {
        if !queued[v as usize] && res[v as usize] != 0.0 && res[v as usize].abs() >= trunc {
            queued[v as usize] = true;
            queue.push_back(v);
        }
    }
    while let Some(v) = queue.pop_front() {
        queued[v as usize] = false;
        let m = res[v as usize];
        if m == 0.0 || m.abs() < trunc {
            continue;
        }
        res[v as usize] = 0.0;
        on_process(v, m);
        counter.vertex_updates += 1;
        for e in &lg.out[v as usize] {
            let t = e.to as usize;
            if lg.absorb[t] {
                continue;
            }
            let msg = lg.ge(spec, v, e, m);
            counter.ge(lg.verts[v as usize], lg.verts[t], LocalGraph::kind(e));
            on_deliver(e.to, msg);
            res[t] += msg;
            if !queued[t] && res[t].abs() >= trunc {
                queued[t] = true;
                queue.push_back(e.to);
            }
        }
    }
}

/// Dependency bookkeeping for one row.
#[derive(Clone, Debug, PartialEq)]
pub enum RowMemo {
    /// Local id of the predecessor on a best path; the entry itself for its
    /// direct successors.
    Min { parent: Vec<u32> },
    /// Residual each vertex has received but not yet re-emitted.
    Sum { residual: Vec<f64> },
}

/// Shortcut weights from one entry to every member, indexed locally. Missing
/// shortcuts hold the aggregation's bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub val: Vec<f64>,
    pub memo: RowMemo,
}

#[derive(Clone, Debug)]
pub struct SubgraphShortcuts {
    pub lg: LocalGraph,
    /// Keyed by entry (global id).
    pub rows: BTreeMap<VertexId, Row>,
}

impl SubgraphShortcuts {
    /// `(target, weight)` pairs of one entry's row, bottom entries omitted.
    pub fn row_entries<'a>(
        &'a self,
        entry: VertexId,
        spec: &'a dyn Algorithm,
    ) -> impl Iterator<Item = (VertexId, f64)> + 'a {
        let bottom = spec.bottom();
        self.rows
            .get(&entry)
            .into_iter()
            .flat_map(move |r| r.val.iter().enumerate())
            .filter(move |(_, &w)| w != bottom)
            .map(move |(i, &w)| (self.lg.verts[i], w))
    }

    /// Row of entry `u`, computing it first if it was never materialized.
    pub fn ensure_row(&mut self, u: VertexId, spec: &dyn Algorithm, counter: &mut ActivationCounter) -> &Row {
        if !self.rows.contains_key(&u) {
            let l = self.lg.local(u).expect("entry belongs to subgraph");
            let row = compute_row(&self.lg, spec, l, counter);
            self.rows.insert(u, row);
        }
        &self.rows[&u]
    }

    /// Materializes every missing row.
    pub fn ensure_all_rows(&mut self, spec: &dyn Algorithm, counter: &mut ActivationCounter) {
        let entries: Vec<VertexId> = self.lg.entries.iter().map(|&u| self.lg.verts[u as usize]).collect();
        for u in entries {
            self.ensure_row(u, spec, counter);
        }
    }

    /// Number of stored (non-bottom) shortcuts.
    pub fn size(&self, spec: &dyn Algorithm) -> usize {
        let bottom = spec.bottom();
        self.rows
            .values()
            .map(|r| r.val.iter().filter(|&&w| w != bottom).count())
            .sum()
    }
}

/// Shortcuts of every live subgraph.
#[derive(Clone, Debug, Default)]
pub struct ShortcutStore {
    pub subgraphs: BTreeMap<SubgraphId, SubgraphShortcuts>,
}

impl ShortcutStore {
    pub fn get(&self, id: SubgraphId) -> Option<&SubgraphShortcuts> {
        self.subgraphs.get(&id)
    }

    /// Shortcut weight from entry `u` to `v`, if present.
    pub fn weight(&self, part: &Partition, spec: &dyn Algorithm, u: VertexId, v: VertexId) -> Option<f64> {
        let sc = self.subgraphs.get(&part.subgraph_of(u)?)?;
        let row = sc.rows.get(&u)?;
        let w = row.val[sc.lg.local(v)? as usize];
        (w != spec.bottom()).then_some(w)
    }

    pub fn size(&self, spec: &dyn Algorithm) -> usize {
        self.subgraphs.values().map(|s| s.size(spec)).sum()
    }
}

/// Computes the row of local entry `u` from scratch.
pub fn compute_row(lg: &LocalGraph, spec: &dyn Algorithm, u: u32, counter: &mut ActivationCounter) -> Row {
    let n = lg.len();
    let unit = spec.ge_identity();
    match spec.aggregation() {
        Aggregation::Min => {
            let mut val = vec![f64::INFINITY; n];
            let mut parent = vec![NONE; n];
            let mut seeds = Vec::new();
            for e in &lg.out[u as usize] {
                let msg = lg.ge(spec, u, e, unit);
                counter.ge(lg.verts[u as usize], lg.verts[e.to as usize], LocalGraph::kind(e));
                seeds.push((e.to, msg, u));
            }
            local_min(lg, spec, &mut val, Some(&mut parent), Some(u), seeds, counter);
            Row {
                val,
                memo: RowMemo::Min { parent },
            }
        }
        Aggregation::Sum => {
            let mut val = vec![0.0; n];
            let mut res = vec![0.0; n];
            res[u as usize] = unit;
            local_sum(
                lg,
                spec,
                &mut res,
                SUM_TRUNCATION,
                [u],
                counter,
                |t, m| val[t as usize] += m,
                |_, _| {},
            );
            Row {
                val,
                memo: RowMemo::Sum { residual: res },
            }
        }
    }
}

pub fn compute_subgraph(
    net: &Network,
    part: &Partition,
    sg: &DenseSubgraph,
    spec: &dyn Algorithm,
    counter: &mut ActivationCounter,
) -> SubgraphShortcuts {
    let lg = LocalGraph::build(net, part, sg, spec);
    let rows = lg
        .entries
        .iter()
        .map(|&u| (lg.verts[u as usize], compute_row(&lg, spec, u, counter)))
        .collect();
    SubgraphShortcuts { lg, rows }
}

/// Shortcuts for every live subgraph, computed in parallel.
pub fn compute_shortcuts(
    net: &Network,
    part: &Partition,
    spec: &dyn Algorithm,
    counter: &mut ActivationCounter,
) -> ShortcutStore {
    let subs: Vec<&DenseSubgraph> = part.live_subgraphs().collect();
    let proto = counter.child();
    let results: Vec<(SubgraphId, SubgraphShortcuts, ActivationCounter)> = subs
        .par_iter()
        .map(|sg| {
            let mut c = proto.child();
            let sc = compute_subgraph(net, part, sg, spec, &mut c);
            (sg.id, sc, c)
        })
        .collect();
    let mut store = ShortcutStore::default();
    for (id, sc, c) in results {
        counter.merge(c);
        store.subgraphs.insert(id, sc);
    }
    store
}

type EdgeMap = HashMap<(VertexId, VertexId), f64>;

fn edge_factors(lg: &LocalGraph, spec: &dyn Algorithm) -> EdgeMap {
    let mut m = HashMap::new();
    for (a, es) in lg.out.iter().enumerate() {
        for e in es {
            m.insert((lg.verts[a], lg.verts[e.to as usize]), lg.factor(spec, a as u32, e));
        }
    }
    m
}

/// Brings the shortcuts of one subgraph up to date with `new_lg`, whose
/// vertex set must be a subset of the old one. Continuing entries are
/// repaired from their memo. Rows of new entries are computed from scratch
/// for `Sum` algorithms; `Min` algorithms only use a row once the entry
/// improves, so those rows are left for [`SubgraphShortcuts::ensure_row`].
pub fn update_subgraph(
    old: &SubgraphShortcuts,
    new_lg: LocalGraph,
    spec: &dyn Algorithm,
    counter: &mut ActivationCounter,
) -> SubgraphShortcuts {
    let old_lg = &old.lg;
    let map: Vec<u32> = old_lg.verts.iter().map(|&v| new_lg.local(v).unwrap_or(NONE)).collect();
    let old_f = edge_factors(old_lg, spec);
    let new_f = edge_factors(&new_lg, spec);
    let removed: Vec<(VertexId, VertexId)> = old_f
        .iter()
        .filter(|(k, f)| new_f.get(k) != Some(f))
        .map(|(k, _)| *k)
        .collect();
    let inserted: Vec<(VertexId, VertexId)> = new_f
        .iter()
        .filter(|(k, f)| old_f.get(k) != Some(f))
        .map(|(k, _)| *k)
        .collect();
    let unchanged = removed.is_empty() && inserted.is_empty() && old_lg.verts.len() == new_lg.verts.len();

    let mut rows = BTreeMap::new();
    for &u in &new_lg.entries {
        let ug = new_lg.verts[u as usize];
        let row = match old.rows.get(&ug) {
            None if spec.aggregation() == Aggregation::Min => continue,
            None => compute_row(&new_lg, spec, u, counter),
            Some(r) if unchanged => r.clone(),
            Some(r) => match spec.aggregation() {
                Aggregation::Min => update_min_row(old_lg, &new_lg, spec, r, &map, u, &removed, &inserted, counter),
                Aggregation::Sum => update_sum_row(old_lg, &new_lg, spec, r, &map, ug, &old_f, &new_f, counter),
            },
        };
        rows.insert(ug, row);
    }
    SubgraphShortcuts { lg: new_lg, rows }
}

#[allow(clippy::too_many_arguments)]
fn update_min_row(
    old_lg: &LocalGraph,
    lg: &LocalGraph,
    spec: &dyn Algorithm,
    old: &Row,
    map: &[u32],
    u: u32,
    removed: &[(VertexId, VertexId)],
    inserted: &[(VertexId, VertexId)],
    counter: &mut ActivationCounter,
) -> Row {
    let n = lg.len();
    let RowMemo::Min { parent: old_parent } = &old.memo else {
        return compute_row(lg, spec, u, counter);
    };
    let mut val = vec![f64::INFINITY; n];
    let mut parent = vec![NONE; n];
    for (i, &j) in map.iter().enumerate() {
        if j != NONE {
            val[j as usize] = old.val[i];
            let p = old_parent[i];
            parent[j as usize] = if p == NONE { NONE } else { map[p as usize] };
        }
    }
    let mut reset = vec![false; n];
    let removed_set: std::collections::HashSet<(VertexId, VertexId)> = removed.iter().copied().collect();
    let mut stack = Vec::new();
    for v in 0..n {
        if val[v] == f64::INFINITY {
            continue;
        }
        let p = parent[v];
        let broken = p == NONE || removed_set.contains(&(lg.verts[p as usize], lg.verts[v]));
        if broken {
            reset[v] = true;
            stack.push(v as u32);
        }
    }
    if !stack.is_empty() {
        let mut children = vec![Vec::new(); n];
        for v in 0..n {
            if parent[v] != NONE && val[v] != f64::INFINITY {
                children[parent[v] as usize].push(v as u32);
            }
        }
        while let Some(v) = stack.pop() {
            if v == u {
                continue;
            }
            for &c in &children[v as usize] {
                if !reset[c as usize] {
                    reset[c as usize] = true;
                    stack.push(c);
                }
            }
        }
    }
    let _ = old_lg;
    let unit = spec.ge_identity();
    let prop = |a: u32, val: &[f64], reset: &[bool]| -> Option<f64> {
        if a == u {
            Some(unit)
        } else if !reset[a as usize] && val[a as usize] != f64::INFINITY {
            Some(val[a as usize])
        } else {
            None
        }
    };
    for v in 0..n {
        if reset[v] {
            val[v] = f64::INFINITY;
            parent[v] = NONE;
        }
    }
    let mut seeds = Vec::new();
    for v in 0..n as u32 {
        if !reset[v as usize] {
            continue;
        }
        for &(a, pos) in &lg.inc[v as usize] {
            if let Some(m) = prop(a, &val, &reset) {
                let e = &lg.out[a as usize][pos as usize];
                counter.ge(lg.verts[a as usize], lg.verts[v as usize], LocalGraph::kind(e));
                seeds.push((v, lg.ge(spec, a, e, m), a));
            }
        }
    }
    for &(ag, bg) in inserted {
        let (a, b) = (lg.local(ag).unwrap(), lg.local(bg).unwrap());
        if reset[b as usize] {
            continue;
        }
        if let Some(m) = prop(a, &val, &reset) {
            let e = lg.out[a as usize].iter().find(|e| e.to == b).unwrap();
            counter.ge(ag, bg, LocalGraph::kind(e));
            seeds.push((b, lg.ge(spec, a, e, m), a));
        }
    }
    local_min(lg, spec, &mut val, Some(&mut parent), Some(u), seeds, counter);
    Row {
        val,
        memo: RowMemo::Min { parent },
    }
}

#[allow(clippy::too_many_arguments)]
fn update_sum_row(
    old_lg: &LocalGraph,
    lg: &LocalGraph,
    spec: &dyn Algorithm,
    old: &Row,
    map: &[u32],
    ug: VertexId,
    old_f: &EdgeMap,
    new_f: &EdgeMap,
    counter: &mut ActivationCounter,
) -> Row {
    let n = lg.len();
    let unit = spec.ge_identity();
    let RowMemo::Sum { residual: old_res } = &old.memo else {
        return compute_row(lg, spec, lg.local(ug).unwrap(), counter);
    };
    let mut val = vec![0.0; n];
    let mut res = vec![0.0; n];
    for (i, &j) in map.iter().enumerate() {
        if j != NONE {
            val[j as usize] = old.val[i];
            res[j as usize] = old_res[i];
        }
    }
    // Senders whose internal out-edges or factors changed.
    let mut changed = vec![false; old_lg.len()];
    for (a, b) in old_f.keys().filter(|k| new_f.get(k) != old_f.get(k)) {
        let _ = b;
        changed[old_lg.local(*a).unwrap() as usize] = true;
    }
    for (a, _) in new_f.keys().filter(|k| !old_f.contains_key(k)) {
        if let Some(i) = old_lg.local(*a) {
            changed[i as usize] = true;
        }
    }
    let mut seeds: Vec<(u32, f64)> = Vec::new();
    for (ai, &is) in changed.iter().enumerate() {
        if !is {
            continue;
        }
        let a = ai as u32;
        let emitted = old.val[ai] + if old_lg.verts[ai] == ug { unit } else { 0.0 } - old_res[ai];
        if emitted == 0.0 {
            continue;
        }
        for e in &old_lg.out[ai] {
            let t = map[e.to as usize];
            if t == NONE || lg.absorb[t as usize] {
                continue;
            }
            counter.ge(old_lg.verts[ai], old_lg.verts[e.to as usize], LocalGraph::kind(e));
            seeds.push((t, -old_lg.ge(spec, a, e, emitted)));
        }
        let na = map[ai];
        if na != NONE {
            for e in &lg.out[na as usize] {
                if lg.absorb[e.to as usize] {
                    continue;
                }
                counter.ge(lg.verts[na as usize], lg.verts[e.to as usize], LocalGraph::kind(e));
                seeds.push((e.to, lg.ge(spec, na, e, emitted)));
            }
        }
    }
    let mut start = Vec::new();
    for (t, m) in seeds {
        val[t as usize] += m;
        res[t as usize] += m;
        start.push(t);
    }
    start.sort_unstable();
    start.dedup();
    local_sum(
        lg,
        spec,
        &mut res,
        SUM_TRUNCATION,
        start,
        counter,
        |t, m| val[t as usize] += m,
        |_, _| {},
    );
    Row {
        val,
        memo: RowMemo::Sum { residual: res },
    }
}

/// Reconstructs row memos from bare weights, e.g. after deserialisation.
/// Rows whose best paths cannot be re-derived are recomputed.
pub fn rebuild_memo(
    lg: &LocalGraph,
    spec: &dyn Algorithm,
    u: u32,
    val: Vec<f64>,
    counter: &mut ActivationCounter,
) -> Row {
    match spec.aggregation() {
        Aggregation::Sum => Row {
            memo: RowMemo::Sum {
                residual: vec![0.0; val.len()],
            },
            val,
        },
        Aggregation::Min => {
            let unit = spec.ge_identity();
            let mut parent = vec![NONE; val.len()];
            for v in 0..val.len() {
                if val[v] == f64::INFINITY {
                    continue;
                }
                for &(a, pos) in &lg.inc[v] {
                    let pa = if a == u { unit } else { val[a as usize] };
                    if pa == f64::INFINITY || (a != u && val[a as usize] >= val[v]) {
                        continue;
                    }
                    if lg.ge(spec, a, &lg.out[a as usize][pos as usize], pa) == val[v] {
                        parent[v] = a;
                        break;
                    }
                }
                if parent[v] == NONE {
                    log::warn!(
                        "shortcut memo for entry {} is inconsistent, recomputing",
                        lg.verts[u as usize]
                    );
                    return compute_row(lg, spec, u, counter);
                }
            }
            Row {
                val,
                memo: RowMemo::Min { parent },
            }
        }
    }
}

/// Reference fixpoint of `inject` inside the subgraph: every member
/// re-emits what it holds, entries additionally emit their injected value.
/// Returns what each member received. Solved by Jacobi sweeps, independent
/// of the worklist code.
pub fn subgraph_fixpoint(lg: &LocalGraph, spec: &dyn Algorithm, inject: &[f64]) -> Vec<f64> {
    let n = lg.len();
    let bottom = spec.bottom();
    let mut recv = vec![bottom; n];
    for _ in 0..100_000 {
        let mut next = vec![bottom; n];
        for a in 0..n {
            let hold = spec.agg(inject[a], recv[a]);
            if hold == bottom {
                continue;
            }
            for e in &lg.out[a] {
                if lg.absorb[e.to as usize] {
                    continue;
                }
                let t = e.to as usize;
                next[t] = spec.agg(next[t], lg.ge(spec, a as u32, e, hold));
            }
        }
        let delta = next
            .iter()
            .zip(&recv)
            .map(|(a, b)| if a == b { 0.0 } else { (a - b).abs() })
            .fold(0.0, f64::max);
        recv = next;
        if delta < 1e-15 {
            break;
        }
    }
    recv
}

/// Checks that delivering random entry vectors through shortcuts in one step
/// equals the in-subgraph fixpoint. Returns the largest deviation seen.
pub fn verify_shortcut_equivalence(sc: &SubgraphShortcuts, spec: &dyn Algorithm, trials: usize, seed: u64) -> f64 {
    let lg = &sc.lg;
    let n = lg.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mut inject = vec![spec.bottom(); n];
        for &u in &lg.entries {
            inject[u as usize] = match spec.aggregation() {
                Aggregation::Min => {
                    if rng.gen_bool(0.2) {
                        f64::INFINITY
                    } else {
                        rng.gen_range(0.0..20.0f64).round()
                    }
                }
                Aggregation::Sum => rng.gen_range(-1.0..1.0),
            };
        }
        let reference = subgraph_fixpoint(lg, spec, &inject);
        let mut via = vec![spec.bottom(); n];
        for &u in &lg.entries {
            let m = inject[u as usize];
            if m == spec.bottom() {
                continue;
            }
            let fresh;
            let row = match sc.rows.get(&lg.verts[u as usize]) {
                Some(r) => r,
                None => {
                    fresh = compute_row(lg, spec, u, &mut ActivationCounter::new());
                    &fresh
                }
            };
            for (acc, &w) in via.iter_mut().zip(&row.val).take(n) {
                if w != spec.bottom() {
                    *acc = spec.agg(*acc, spec.combine(m, w));
                }
            }
        }
        for v in 0..n {
            let (a, b) = (via[v], reference[v]);
            let d = if a == b { 0.0 } else { (a - b).abs() };
            worst = worst.max(if d.is_nan() { f64::INFINITY } else { d });
        }
    }
    worst
}
