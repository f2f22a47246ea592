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

//! Size-capped Louvain modularity clustering on the undirected projection.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::graph::{Graph, VertexId};

struct Level {
    /// Undirected weighted adjacency without self-loops.
    adj: Vec<Vec<(usize, f64)>>,
    loops: Vec<f64>,
    size: Vec<usize>,
}

/// Clusters the live vertices of `g` into communities of at most `cap`
/// vertices. Each weakly connected component is clustered independently with a
/// seed derived from `seed` and its smallest vertex. Every live vertex appears
/// in exactly one returned community; communities are sorted and ordered by
/// their smallest member.
pub fn louvain_communities(g: &Graph, cap: usize, seed: u64) -> Vec<Vec<VertexId>> {
    let cap = cap.max(1);
    let comps = weak_components(g);
    let mut out: Vec<Vec<VertexId>> = comps
        .into_par_iter()
        .flat_map_iter(|comp| cluster_component(g, &comp, cap, seed))
        .collect();
    for c in &mut out {
        c.sort_unstable();
    }
    out.sort_by_key(|c| c[0]);
    out
}

fn weak_components(g: &Graph) -> Vec<Vec<VertexId>> {
    let n = g.num_slots();
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for s in g.vertices() {
        if seen[s as usize] {
            continue;
        }
        seen[s as usize] = true;
        let mut comp = vec![s];
        let mut i = 0;
        while i < comp.len() {
            let v = comp[i];
            i += 1;
            for e in g.out_edges(v).iter().chain(g.in_edges(v)) {
                if !seen[e.to as usize] {
                    seen[e.to as usize] = true;
                    comp.push(e.to);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

fn cluster_component(g: &Graph, comp: &[VertexId], cap: usize, seed: u64) -> Vec<Vec<VertexId>> {
    if comp.len() == 1 {
        return vec![comp.to_vec()];
    }
    let local: HashMap<VertexId, usize> = comp.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut adj: Vec<HashMap<usize, f64>> = vec![HashMap::new(); comp.len()];
    let mut loops = vec![0.0; comp.len()];
    for (i, &v) in comp.iter().enumerate() {
        for e in g.out_edges(v) {
            let j = local[&e.to];
            if i == j {
                loops[i] += 2.0;
            } else {
                *adj[i].entry(j).or_insert(0.0) += 1.0;
                *adj[j].entry(i).or_insert(0.0) += 1.0;
            }
        }
    }
    let mut level = Level {
        adj: adj.into_iter().map(sorted_adj).collect(),
        loops,
        size: vec![1; comp.len()],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (comp[0] as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    // members[c] lists the original local vertices inside level node c.
    let mut members: Vec<Vec<usize>> = (0..comp.len()).map(|i| vec![i]).collect();
    loop {
        let assign = local_moving(&level, cap, &mut rng);
        let ncomm = assign.iter().copied().max().map_or(0, |m| m + 1);
        if ncomm == level.size.len() {
            break;
        }
        let mut next_members = vec![Vec::new(); ncomm];
        for (node, &c) in assign.iter().enumerate() {
            next_members[c].extend(members[node].iter().copied());
        }
        members = next_members;
        level = aggregate(&level, &assign, ncomm);
    }
    members
        .into_iter()
        .map(|m| m.into_iter().map(|i| comp[i]).collect())
        .collect()
}

fn sorted_adj(m: HashMap<usize, f64>) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = m.into_iter().collect();
    v.sort_unstable_by_key(|p| p.0);
    v
}

/// One round of greedy local moves until no vertex moves. Returns compacted
/// community labels in order of first appearance.
fn local_moving(level: &Level, cap: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = level.size.len();
    let k: Vec<f64> = (0..n)
        .map(|i| level.adj[i].iter().map(|p| p.1).sum::<f64>() + level.loops[i])
        .collect();
    let m2: f64 = k.iter().sum();
    let mut comm: Vec<usize> = (0..n).collect();
    if m2 == 0.0 {
        return comm;
    }
    let mut tot = k.clone();
    let mut csize = level.size.clone();
    let mut order: Vec<usize> = (0..n).collect();
    let mut weight_to = vec![0.0f64; n];
    let mut touched: Vec<usize> = Vec::new();
    for _pass in 0..64 {
        order.shuffle(rng);
        let mut moved = false;
        for &i in &order {
            let old = comm[i];
            for &(j, w) in &level.adj[i] {
                let c = comm[j];
                if weight_to[c] == 0.0 {
                    touched.push(c);
                }
                weight_to[c] += w;
            }
            tot[old] -= k[i];
            csize[old] -= level.size[i];
            let gain = |c: usize, wc: f64| wc - tot[c] * k[i] / m2;
            let mut best = old;
            let mut best_gain = gain(old, weight_to[old]);
            for &c in &touched {
                if c == old || csize[c] + level.size[i] > cap {
                    continue;
                }
                let g = gain(c, weight_to[c]);
                if g > best_gain + 1e-12 {
                    best = c;
                    best_gain = g;
                }
            }
            for &c in &touched {
                weight_to[c] = 0.0;
            }
            touched.clear();
            tot[best] += k[i];
            csize[best] += level.size[i];
            if best != old {
                comm[i] = best;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    let mut relabel = vec![usize::MAX; n];
    let mut next = 0;
    for c in comm.iter_mut() {
        if relabel[*c] == usize::MAX {
            relabel[*c] = next;
            next += 1;
        }
        *c = relabel[*c];
    }
    comm
}

fn aggregate(level: &Level, assign: &[usize], ncomm: usize) -> Level {
    let mut adj: Vec<HashMap<usize, f64>> = vec![HashMap::new(); ncomm];
    let mut loops = vec![0.0; ncomm];
    let mut size = vec![0; ncomm];
    for i in 0..assign.len() {
        let ci = assign[i];
        size[ci] += level.size[i];
        loops[ci] += level.loops[i];
        for &(j, w) in &level.adj[i] {
            let cj = assign[j];
            if ci == cj {
                loops[ci] += w;
            } else {
                *adj[ci].entry(cj).or_insert(0.0) += w;
            }
        }
    }
    Level {
        adj: adj.into_iter().map(sorted_adj).collect(),
        loops,
        size,
    }
}
