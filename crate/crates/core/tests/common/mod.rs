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

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use layered::algo::{Aggregation, Algorithm, AlgorithmKind};
use layered::engine::{external_states, max_state_difference, run_from_scratch, ActivationCounter, EngineConfig};
use layered::generators::{planted_partition, random_edge_updates, random_graph, random_vertex_updates};
use layered::graph::{apply_update_batch, Graph, UpdateBatch, VertexId};
use layered::incremental::{
    containment_violations, run_incremental_layered, run_incremental_plain, LayeredState, PlainState,
};
use layered::layering::{build_layered_graph, replicate, root_vertices, LayerConfig, LayeredGraph, Partition};
use layered::network::Network;
use layered::shortcuts::{compute_subgraph, SubgraphShortcuts};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tolerance(kind: AlgorithmKind) -> f64 {
    match kind.aggregation() {
        Aggregation::Min => 0.0,
        Aggregation::Sum => 1e-5,
    }
}

pub fn restart(g: &Graph, kind: AlgorithmKind) -> Vec<(u64, f64)> {
    let spec = kind.build(g.internal(0).unwrap_or(0));
    let net = Network::plain(g.clone());
    let (st, _) = run_from_scratch(&net, spec.as_ref(), &EngineConfig::default()).unwrap();
    external_states(&net, &st)
}

/// Random graph plus a sequence of batches: one edge batch and, optionally,
/// a vertex batch.
pub struct Case {
    pub g: Graph,
    pub batches: Vec<UpdateBatch>,
    pub k: usize,
}

pub fn random_case(seed: u64, with_vertex_batch: bool) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(50..=300);
    let g = if seed.is_multiple_of(4) {
        random_graph(n, 4 * n, true, &mut rng)
    } else {
        community_graph(n, &mut rng)
    };
    let share = rng.gen_range(0.01..=0.10);
    let count = ((g.edge_count() as f64) * share).round().max(1.0) as usize;
    let mut batches = vec![random_edge_updates(&g, count, 0.5, &mut rng)];
    if with_vertex_batch {
        let (h, _) = apply_update_batch(&g, &batches[0]).unwrap();
        batches.push(random_vertex_updates(&h, 2, 2, &mut rng));
    }
    let k = [16, 24, 32][rng.gen_range(0..3)];
    Case { g, batches, k }
}

/// Random graph with community structure and about four out-edges per
/// vertex. A few hubs get several edges into or out of one community so
/// replicas appear.
pub fn community_graph(n: usize, rng: &mut ChaCha8Rng) -> Graph {
    let size = rng.gen_range(8..=20);
    let blocks = (n / size).max(1);
    let p_in = (3.6 / size as f64).min(1.0);
    let p_out = 0.4 / n as f64;
    let (mut g, comms) = planted_partition(n, blocks, p_in, p_out, true, rng);
    for _ in 0..rng.gen_range(0..=4) {
        let c = &comms[rng.gen_range(0..comms.len())];
        let h = rng.gen_range(0..n) as VertexId;
        let into = rng.gen_bool(0.5);
        for _ in 0..4 {
            let x = c[rng.gen_range(0..c.len())];
            if x == h {
                continue;
            }
            let w = rng.gen_range(1..=10) as f64;
            if into {
                g.insert_edge(h, x, w);
            } else {
                g.insert_edge(x, h, w);
            }
        }
    }
    g
}

/// Runs every batch of `case` through the layered engine, comparing with a
/// restart after each one. Returns the worst difference seen.
pub fn layered_vs_restart(case: &Case, kind: AlgorithmKind) -> Result<f64, String> {
    let cfg = LayerConfig {
        k: Some(case.k),
        ..LayerConfig::default()
    };
    layered_vs_restart_with(case, kind, cfg)
}

pub fn layered_vs_restart_with(case: &Case, kind: AlgorithmKind, cfg: LayerConfig) -> Result<f64, String> {
    let spec = kind.build(case.g.internal(0).unwrap());
    let spec = spec.as_ref();
    let ecfg = EngineConfig::default();
    let lg = build_layered_graph(&case.g, spec, &cfg, &mut ActivationCounter::new());
    let (st, _) = run_from_scratch(&lg.net, spec, &ecfg).map_err(|e| e.to_string())?;
    let mut ls = LayeredState::new(lg, spec, st);
    let mut g = case.g.clone();
    let mut worst = 0.0f64;
    for (i, b) in case.batches.iter().enumerate() {
        run_incremental_layered(&mut ls, b, spec, &ecfg, false).map_err(|e| e.to_string())?;
        g = apply_update_batch(&g, b).unwrap().0;
        let want = restart(&g, kind);
        let got = external_states(&ls.lg.net, &ls.st);
        let d = max_state_difference(&got, &want).ok_or(format!("batch {i}: vertex sets differ"))?;
        if d > tolerance(kind) {
            return Err(format!("batch {i}: difference {d}"));
        }
        worst = worst.max(d);
    }
    Ok(worst)
}

pub fn plain_vs_restart(case: &Case, kind: AlgorithmKind) -> Result<f64, String> {
    let spec = kind.build(case.g.internal(0).unwrap());
    let spec = spec.as_ref();
    let ecfg = EngineConfig::default();
    let net = Network::plain(case.g.clone());
    let (st, _) = run_from_scratch(&net, spec, &ecfg).map_err(|e| e.to_string())?;
    let mut ps = PlainState::new(net, spec, st);
    let mut g = case.g.clone();
    let mut worst = 0.0f64;
    for (i, b) in case.batches.iter().enumerate() {
        run_incremental_plain(&mut ps, b, spec, &ecfg, false).map_err(|e| e.to_string())?;
        g = apply_update_batch(&g, b).unwrap().0;
        let want = restart(&g, kind);
        let got = external_states(&ps.net, &ps.st);
        let d = max_state_difference(&got, &want).ok_or(format!("batch {i}: vertex sets differ"))?;
        if d > tolerance(kind) {
            return Err(format!("batch {i}: difference {d}"));
        }
        worst = worst.max(d);
    }
    Ok(worst)
}

/// A small graph with one designated community of at most 30 vertices and a
/// few outside vertices feeding into and out of it.
pub struct SubgraphCase {
    pub g: Graph,
    pub inside: Vec<VertexId>,
    pub source: VertexId,
}

pub fn random_subgraph(seed: u64) -> SubgraphCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let k = rng.gen_range(3..=30);
    let outside = rng.gen_range(2..=8);
    let mut g = Graph::new(true);
    for v in 0..(k + outside) {
        g.add_vertex(Some(v as u64));
    }
    let w = |rng: &mut ChaCha8Rng| rng.gen_range(1..=10) as f64;
    let p = (rng.gen_range(1.5..4.0) / k as f64).min(1.0);
    for a in 0..k {
        for b in 0..k {
            if a != b && rng.gen_bool(p) {
                let x = w(&mut rng);
                g.insert_edge(a as VertexId, b as VertexId, x);
            }
        }
    }
    for _ in 0..rng.gen_range(1..=4) {
        let o = rng.gen_range(k..k + outside) as VertexId;
        for _ in 0..rng.gen_range(1..=3) {
            let x = w(&mut rng);
            g.insert_edge(o, rng.gen_range(0..k) as VertexId, x);
        }
    }
    for _ in 0..rng.gen_range(1..=4) {
        let o = rng.gen_range(k..k + outside) as VertexId;
        for _ in 0..rng.gen_range(1..=3) {
            let x = w(&mut rng);
            g.insert_edge(rng.gen_range(0..k) as VertexId, o, x);
        }
    }
    let source = rng.gen_range(0..k + outside) as VertexId;
    SubgraphCase {
        g,
        inside: (0..k as VertexId).collect(),
        source,
    }
}

/// Network, partition and shortcuts of the designated community, which is
/// kept whether or not it is dense. With `replicas`, hosts sending more than
/// one edge into it get replicas when the result stays a subgraph.
pub fn subgraph_shortcuts(
    case: &SubgraphCase,
    spec: &dyn Algorithm,
    replicas: bool,
) -> (Network, Partition, SubgraphShortcuts) {
    let roots = root_vertices(&case.g, spec);
    let (net, part) = match replicas {
        true => {
            let (net, part) = replicate(&case.g, std::slice::from_ref(&case.inside), &roots, 1, 64);
            if part.subgraph(0).is_some() {
                (net, part)
            } else {
                plain_partition(case, roots)
            }
        }
        false => plain_partition(case, roots),
    };
    let sc = compute_subgraph(
        &net,
        &part,
        part.subgraph(0).unwrap(),
        spec,
        &mut ActivationCounter::new(),
    );
    (net, part, sc)
}

fn plain_partition(case: &SubgraphCase, roots: BTreeSet<VertexId>) -> (Network, Partition) {
    let net = Network::plain(case.g.clone());
    let mut part = Partition::from_communities(&net, std::slice::from_ref(&case.inside));
    part.set_roots(&net, roots);
    (net, part)
}

/// Applies a random change confined to the community: edge insertions,
/// deletions and reweights, and sometimes the loss of one member.
pub fn mutate_inside(case: &SubgraphCase, seed: u64) -> SubgraphCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1b5_4a32_d192_ed03);
    let mut g = case.g.clone();
    let mut inside = case.inside.clone();
    let pick = |rng: &mut ChaCha8Rng, inside: &[VertexId]| inside[rng.gen_range(0..inside.len())];
    for _ in 0..rng.gen_range(1..=5) {
        let internal: Vec<(VertexId, VertexId)> = g
            .edges()
            .filter(|(a, b, _)| inside.contains(a) && inside.contains(b))
            .map(|(a, b, _)| (a, b))
            .collect();
        match rng.gen_range(0..3) {
            0 if !internal.is_empty() => {
                let (a, b) = internal[rng.gen_range(0..internal.len())];
                g.remove_edge(a, b);
            }
            1 if !internal.is_empty() => {
                let (a, b) = internal[rng.gen_range(0..internal.len())];
                g.insert_edge(a, b, rng.gen_range(1..=10) as f64);
            }
            _ => {
                let (a, b) = (pick(&mut rng, &inside), pick(&mut rng, &inside));
                if a != b {
                    g.insert_edge(a, b, rng.gen_range(1..=10) as f64);
                }
            }
        }
    }
    if inside.len() > 3 && rng.gen_bool(0.2) {
        let v = pick(&mut rng, &inside);
        if v != case.source {
            g.remove_vertex(v);
            inside.retain(|&x| x != v);
        }
    }
    SubgraphCase {
        g,
        inside,
        source: case.source,
    }
}

/// Checks the structural invariants of a preprocessed graph and returns a
/// description of every violation.
pub fn structural_violations(g: &Graph, lg: &LayeredGraph, kind: AlgorithmKind) -> Vec<String> {
    let mut bad = Vec::new();
    let net = &lg.net;
    let part = &lg.part;
    let spec = kind.build(g.internal(0).unwrap());
    let spec = spec.as_ref();

    let mut seen = BTreeSet::new();
    for sg in part.live_subgraphs() {
        for &v in &sg.vertices {
            if !seen.insert(v) {
                bad.push(format!("vertex {v} sits in two subgraphs"));
            }
            if part.subgraph_of(v) != Some(sg.id) || !net.is_live(v) {
                bad.push(format!("membership of {v} disagrees with subgraph {}", sg.id));
            }
        }
        if !sg.is_dense() {
            bad.push(format!("subgraph {} fails the density test", sg.id));
        }
        if sg.vertices.len() > lg.cap {
            bad.push(format!(
                "subgraph {} has {} > {} vertices",
                sg.id,
                sg.vertices.len(),
                lg.cap
            ));
        }
    }
    for v in net.graph().vertices() {
        if part.subgraph_of(v).is_some() && !seen.contains(&v) {
            bad.push(format!("vertex {v} claims a subgraph that does not list it"));
        }
    }
    let mut fresh = part.clone();
    for id in 0..fresh.subgraphs.len() as u32 {
        fresh.recompute(net, id);
    }
    if &fresh != part {
        bad.push("stored roles differ from recomputed roles".into());
    }

    let (mut upper, mut lower, mut mixed, mut links) = (0, 0, 0, 0);
    for (a, b, _) in net.graph().edges() {
        if net.is_link(a, b) {
            links += 1;
        }
        if !part.is_internal_edge(a, b) {
            upper += 1;
            if part.membership(a).is_internal() || part.membership(b).is_internal() {
                bad.push(format!("edge ({a}, {b}) leaves a subgraph from an internal vertex"));
            }
        } else if part.membership(a).is_internal() && part.membership(b).is_internal() {
            lower += 1;
        } else {
            mixed += 1;
        }
    }
    let internal: usize = part.live_subgraphs().map(|s| s.internal_edges).sum();
    if upper + lower + mixed != net.graph().edge_count() || lower + mixed != internal {
        bad.push(format!("edge families {upper}+{lower}+{mixed} do not add up"));
    }
    if net.graph().edge_count() - links != g.edge_count() {
        bad.push(format!(
            "{} rerouted edges for {} original edges",
            net.graph().edge_count() - links,
            g.edge_count()
        ));
    }

    let bound: usize = part.live_subgraphs().map(|s| s.entries.len() * s.vertices.len()).sum();
    if lg.shortcuts.size(spec) > bound {
        bad.push(format!(
            "{} shortcuts exceed the bound {bound}",
            lg.shortcuts.size(spec)
        ));
    }

    let (st, _) = run_from_scratch(net, spec, &EngineConfig::default()).unwrap();
    let got = external_states(net, &st);
    match max_state_difference(&got, &restart(g, kind)) {
        Some(d) if d <= tolerance(kind) => {}
        Some(d) => bad.push(format!("replicated network differs from the graph by {d}")),
        None => bad.push("replicated network has a different vertex set".into()),
    }
    bad
}

/// Power iteration of `x = (1 - d) + d * sum(x_u / N_u)` to a step below 1e-13.
pub fn power_iteration_pagerank(g: &Graph) -> Vec<(u64, f64)> {
    let d = 0.85;
    let n = g.num_slots();
    let mut x = vec![1.0 - d; n];
    loop {
        let mut next = vec![1.0 - d; n];
        for (u, v, _) in g.edges() {
            next[v as usize] += d * x[u as usize] / g.out_degree(u) as f64;
        }
        let step: f64 = g.vertices().map(|v| (next[v as usize] - x[v as usize]).abs()).sum();
        x = next;
        if step < 1e-13 {
            break;
        }
    }
    let mut out: Vec<(u64, f64)> = g.vertices().map(|v| (g.external(v).unwrap(), x[v as usize])).collect();
    out.sort_by_key(|p| p.0);
    out
}

/// Hop levels from `source` by breadth-first search.
pub fn queue_bfs(g: &Graph, source: VertexId) -> Vec<(u64, f64)> {
    let mut level = vec![f64::INFINITY; g.num_slots()];
    let mut queue = VecDeque::from([source]);
    level[source as usize] = 0.0;
    while let Some(u) = queue.pop_front() {
        for e in g.out_edges(u) {
            if level[e.to as usize] == f64::INFINITY {
                level[e.to as usize] = level[u as usize] + 1.0;
                queue.push_back(e.to);
            }
        }
    }
    let mut out: Vec<(u64, f64)> = g
        .vertices()
        .map(|v| (g.external(v).unwrap(), level[v as usize]))
        .collect();
    out.sort_by_key(|p| p.0);
    out
}

fn fresh_layered(g: &Graph, kind: AlgorithmKind, k: usize) -> LayeredState {
    let spec = kind.build(g.internal(0).unwrap());
    let cfg = LayerConfig {
        k: Some(k),
        ..LayerConfig::default()
    };
    let lg = build_layered_graph(g, spec.as_ref(), &cfg, &mut ActivationCounter::new());
    let (st, _) = run_from_scratch(&lg.net, spec.as_ref(), &EngineConfig::default()).unwrap();
    LayeredState::new(lg, spec.as_ref(), st)
}

/// An empty batch must leave states and shortcuts bit-identical and cost
/// nothing, in both incremental engines.
pub fn empty_batch_is_free(case: &Case, kind: AlgorithmKind) -> Result<(), String> {
    let spec = kind.build(case.g.internal(0).unwrap());
    let spec = spec.as_ref();
    let ecfg = EngineConfig::default();
    let empty = UpdateBatch::default();
    let mut ls = fresh_layered(&case.g, kind, case.k);
    let before = ls.clone();
    let out = run_incremental_layered(&mut ls, &empty, spec, &ecfg, false).map_err(|e| e.to_string())?;
    if out.total_activations() != 0 || out.counters.vertex_updates() != 0 {
        return Err(format!(
            "layered: {} activations on an empty batch",
            out.total_activations()
        ));
    }
    if ls.st != before.st || ls.lg.part != before.lg.part {
        return Err("layered: states or partition changed".into());
    }
    for (id, sc) in &before.lg.shortcuts.subgraphs {
        if ls.lg.shortcuts.subgraphs[id].rows.iter().ne(sc.rows.iter()) {
            return Err(format!("layered: shortcuts of subgraph {id} changed"));
        }
    }
    let net = Network::plain(case.g.clone());
    let (st, _) = run_from_scratch(&net, spec, &ecfg).map_err(|e| e.to_string())?;
    let mut ps = PlainState::new(net, spec, st.clone());
    let out = run_incremental_plain(&mut ps, &empty, spec, &ecfg, false).map_err(|e| e.to_string())?;
    if out.total_activations() != 0 || ps.st != st {
        return Err(format!(
            "plain: {} activations on an empty batch",
            out.total_activations()
        ));
    }
    Ok(())
}

/// Applying the batches of `case` one after another must agree with
/// applying them merged into one batch, and both with a restart.
pub fn batches_compose(case: &Case, kind: AlgorithmKind) -> Result<(), String> {
    let spec = kind.build(case.g.internal(0).unwrap());
    let spec = spec.as_ref();
    let ecfg = EngineConfig::default();
    let mut seq = fresh_layered(&case.g, kind, case.k);
    let mut merged_state = seq.clone();
    let mut merged = UpdateBatch::default();
    let mut g = case.g.clone();
    for b in &case.batches {
        run_incremental_layered(&mut seq, b, spec, &ecfg, false).map_err(|e| e.to_string())?;
        merged = merged.merged(b);
        g = apply_update_batch(&g, b).map_err(|e| e.to_string())?.0;
    }
    run_incremental_layered(&mut merged_state, &merged, spec, &ecfg, false).map_err(|e| e.to_string())?;
    let want = restart(&g, kind);
    for (name, ls) in [("sequential", &seq), ("merged", &merged_state)] {
        let got = external_states(&ls.lg.net, &ls.st);
        match max_state_difference(&got, &want) {
            Some(d) if d <= tolerance(kind) => {}
            Some(d) => return Err(format!("{name}: differs from restart by {d}")),
            None => return Err(format!("{name}: vertex sets differ")),
        }
    }
    Ok(())
}

/// Outcome of one layered-versus-plain comparison on a planted graph.
pub struct Containment {
    pub upload_violations: usize,
    pub upper_violations: usize,
    pub layered: u64,
    pub plain: u64,
    pub subgraphs: usize,
}

/// Planted partition with 10^4 vertices in 50 blocks (p_in = 0.03,
/// p_out = 1e-6), K = 256 and 100 random edge updates. The layered run is
/// traced to find message generations that leave the upper layer.
pub fn containment_experiment(seed: u64, kind: AlgorithmKind) -> Containment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (g, _) = planted_partition(10_000, 50, 0.03, 1e-6, true, &mut rng);
    let batch = random_edge_updates(&g, 100, 0.5, &mut rng);
    let mut ls = fresh_layered(&g, kind, 256);
    let spec = kind.build(g.internal(0).unwrap());
    let spec = spec.as_ref();
    let ecfg = EngineConfig::default();
    let subgraphs = ls.lg.part.live_count();
    let lay = run_incremental_layered(&mut ls, &batch, spec, &ecfg, true).unwrap();
    let (upload_violations, upper_violations) = containment_violations(&ls.lg.part, &lay);
    let net = Network::plain(g.clone());
    let (st, _) = run_from_scratch(&net, spec, &ecfg).unwrap();
    let mut ps = PlainState::new(net, spec, st);
    let plain = run_incremental_plain(&mut ps, &batch, spec, &ecfg, false).unwrap();
    Containment {
        upload_violations,
        upper_violations,
        layered: lay.total_activations(),
        plain: plain.total_activations(),
        subgraphs,
    }
}
