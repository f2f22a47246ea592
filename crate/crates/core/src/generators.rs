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

//! Random graphs and update batches for tests and benchmarks.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Geometric};

use crate::error::{Error, Result};
use crate::graph::{Graph, UnitUpdate, UpdateBatch, VertexId};

fn weight<R: Rng>(rng: &mut R, weighted: bool) -> f64 {
    if weighted {
        rng.gen_range(1..=10) as f64
    } else {
        1.0
    }
}

/// Uniform random digraph on `n` vertices with `m` distinct edges, no
/// self-loops, integer weights in 1..=10.
pub fn random_graph<R: Rng>(n: usize, m: usize, weighted: bool, rng: &mut R) -> Graph {
    let m = m.min(n * n.saturating_sub(1));
    let mut g = Graph::new(weighted);
    for v in 0..n {
        g.add_vertex(Some(v as u64));
    }
    let mut added = 0;
    while added < m {
        let a = rng.gen_range(0..n) as VertexId;
        let b = rng.gen_range(0..n) as VertexId;
        if a != b && g.edge_weight(a, b).is_none() {
            let w = weight(rng, weighted);
            g.insert_edge(a, b, w);
            added += 1;
        }
    }
    g
}

/// Indices of a Bernoulli(p) sample over `0..len`, by geometric skipping.
fn bernoulli_indices<R: Rng>(len: u64, p: f64, rng: &mut R) -> Vec<u64> {
    if p <= 0.0 || len == 0 {
        return Vec::new();
    }
    if p >= 1.0 {
        return (0..len).collect();
    }
    let geo = Geometric::new(p).expect("probability in (0,1)");
    let mut out = Vec::new();
    let mut i = geo.sample(rng);
    while i < len {
        out.push(i);
        i = i.saturating_add(1).saturating_add(geo.sample(rng));
    }
    out
}

/// Planted-partition digraph: `n` vertices split into `blocks` equal
/// communities, edge probability `p_in` inside a community and `p_out`
/// between communities. Returns the graph and the planted communities.
pub fn planted_partition<R: Rng>(
    n: usize,
    blocks: usize,
    p_in: f64,
    p_out: f64,
    weighted: bool,
    rng: &mut R,
) -> (Graph, Vec<Vec<VertexId>>) {
    let mut g = Graph::new(weighted);
    for v in 0..n {
        g.add_vertex(Some(v as u64));
    }
    let block = |v: usize| v * blocks / n;
    let mut comms = vec![Vec::new(); blocks];
    for v in 0..n {
        comms[block(v)].push(v as VertexId);
    }
    for a in 0..n {
        let mine = &comms[block(a)];
        let (lo, hi) = (mine[0] as usize, *mine.last().unwrap() as usize + 1);
        for i in bernoulli_indices((hi - lo) as u64, p_in, rng) {
            let b = lo + i as usize;
            if b != a {
                let w = weight(rng, weighted);
                g.insert_edge(a as VertexId, b as VertexId, w);
            }
        }
        let outside = (n - (hi - lo)) as u64;
        for i in bernoulli_indices(outside, p_out, rng) {
            let mut b = i as usize;
            if b >= lo {
                b += hi - lo;
            }
            let w = weight(rng, weighted);
            g.insert_edge(a as VertexId, b as VertexId, w);
        }
    }
    (g, comms)
}

/// `count` distinct edge updates over the current graph: a `insert_share`
/// fraction inserts new edges, the rest delete existing ones.
pub fn random_edge_updates<R: Rng>(g: &Graph, count: usize, insert_share: f64, rng: &mut R) -> UpdateBatch {
    let verts: Vec<VertexId> = g.vertices().collect();
    let mut edges: Vec<(VertexId, VertexId)> = g.edges().map(|(a, b, _)| (a, b)).collect();
    edges.shuffle(rng);
    let inserts = ((count as f64) * insert_share).round() as usize;
    let deletes = (count - inserts.min(count)).min(edges.len());
    let ext = |v: VertexId| g.external(v).expect("live vertex");
    let mut out = Vec::with_capacity(count);
    for &(a, b) in edges.iter().take(deletes) {
        out.push(UnitUpdate::DeleteEdge {
            src: ext(a),
            dst: ext(b),
        });
    }
    let mut fresh = BTreeSet::new();
    let mut tries = 0;
    while fresh.len() < inserts && verts.len() > 1 && tries < 100 * count + 100 {
        tries += 1;
        let a = *verts.choose(rng).unwrap();
        let b = *verts.choose(rng).unwrap();
        if a != b && g.edge_weight(a, b).is_none() && fresh.insert((a, b)) {
            out.push(UnitUpdate::InsertEdge {
                src: ext(a),
                dst: ext(b),
                weight: weight(rng, g.is_weighted()),
            });
        }
    }
    out.shuffle(rng);
    UpdateBatch::new(out)
}

/// A batch with vertex operations: deletes `deletes` random vertices and adds
/// `inserts` new ones, each wired to a few random existing vertices.
pub fn random_vertex_updates<R: Rng>(g: &Graph, inserts: usize, deletes: usize, rng: &mut R) -> UpdateBatch {
    let mut verts: Vec<VertexId> = g.vertices().collect();
    verts.shuffle(rng);
    let doomed: Vec<VertexId> = verts
        .iter()
        .copied()
        .take(deletes.min(verts.len().saturating_sub(2)))
        .collect();
    let keep: Vec<VertexId> = verts.iter().copied().skip(doomed.len()).collect();
    let ext = |v: VertexId| g.external(v).expect("live vertex");
    let next = (0..g.num_slots() as VertexId)
        .filter_map(|v| g.external(v))
        .max()
        .map_or(0, |m| m + 1);
    let mut out: Vec<UnitUpdate> = doomed.iter().map(|&v| UnitUpdate::DeleteVertex(ext(v))).collect();
    for x in next..next + inserts as u64 {
        out.push(UnitUpdate::InsertVertex(x));
        for _ in 0..3 {
            let Some(&o) = keep.choose(rng) else { break };
            let (src, dst) = if rng.gen_bool(0.5) { (x, ext(o)) } else { (ext(o), x) };
            out.push(UnitUpdate::InsertEdge {
                src,
                dst,
                weight: weight(rng, g.is_weighted()),
            });
        }
    }
    UpdateBatch::new(out)
}

/// Counts for [`exact_updates`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateCounts {
    pub add: usize,
    pub del: usize,
    pub vadd: usize,
    pub vdel: usize,
    /// Edges wired to each added vertex; zero adds isolated vertices.
    pub vadd_degree: usize,
}

/// Update file with exact counts: `del` distinct existing edges removed,
/// `add` new edges between unconnected pairs, then `vdel` vertices deleted
/// with all their edges and `vadd` vertices added. Fails when a count is
/// infeasible.
pub fn exact_updates<R: Rng>(g: &Graph, counts: UpdateCounts, rng: &mut R) -> Result<UpdateBatch> {
    let UpdateCounts {
        add: n_add,
        del: n_del,
        vadd: n_vadd,
        vdel: n_vdel,
        vadd_degree,
    } = counts;
    let verts: Vec<VertexId> = g.vertices().collect();
    let n = verts.len();
    if n_del > g.edge_count() {
        return Err(Error::Config(format!(
            "cannot delete {n_del} of {} edges",
            g.edge_count()
        )));
    }
    let free = n * n.saturating_sub(1) - g.edge_count();
    if n_add > free {
        return Err(Error::Config(format!(
            "cannot insert {n_add} edges, only {free} pairs are unconnected"
        )));
    }
    if n_vdel > n {
        return Err(Error::Config(format!("cannot delete {n_vdel} of {n} vertices")));
    }
    let ext = |v: VertexId| g.external(v).expect("live vertex");
    let edges: Vec<(VertexId, VertexId)> = g.edges().map(|(a, b, _)| (a, b)).collect();
    let mut out: Vec<UnitUpdate> = edges
        .choose_multiple(rng, n_del)
        .map(|&(a, b)| UnitUpdate::DeleteEdge {
            src: ext(a),
            dst: ext(b),
        })
        .collect();
    let fresh: Vec<(VertexId, VertexId)> = if 2 * n_add <= free {
        let mut picked = BTreeSet::new();
        let mut order = Vec::with_capacity(n_add);
        while order.len() < n_add {
            let a = verts[rng.gen_range(0..n)];
            let b = verts[rng.gen_range(0..n)];
            if a != b && g.edge_weight(a, b).is_none() && picked.insert((a, b)) {
                order.push((a, b));
            }
        }
        order
    } else {
        let all: Vec<(VertexId, VertexId)> = verts
            .iter()
            .flat_map(|&a| verts.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| a != b && g.edge_weight(a, b).is_none())
            .collect();
        all.choose_multiple(rng, n_add).copied().collect()
    };
    for (a, b) in fresh {
        out.push(UnitUpdate::InsertEdge {
            src: ext(a),
            dst: ext(b),
            weight: weight(rng, g.is_weighted()),
        });
    }
    out.shuffle(rng);
    let doomed: Vec<VertexId> = verts.choose_multiple(rng, n_vdel).copied().collect();
    let dead: BTreeSet<VertexId> = doomed.iter().copied().collect();
    let keep: Vec<VertexId> = verts.iter().copied().filter(|v| !dead.contains(v)).collect();
    out.extend(doomed.iter().map(|&v| UnitUpdate::DeleteVertex(ext(v))));
    let next = (0..g.num_slots() as VertexId)
        .filter_map(|v| g.external(v))
        .max()
        .map_or(0, |m| m + 1);
    for x in next..next + n_vadd as u64 {
        out.push(UnitUpdate::InsertVertex(x));
        let mut wired = BTreeSet::new();
        for &o in keep.choose_multiple(rng, vadd_degree) {
            let (src, dst) = if rng.gen_bool(0.5) { (x, ext(o)) } else { (ext(o), x) };
            if wired.insert((src, dst)) {
                out.push(UnitUpdate::InsertEdge {
                    src,
                    dst,
                    weight: weight(rng, g.is_weighted()),
                });
            }
        }
    }
    Ok(UpdateBatch::new(out))
}
