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

//! Splitting a graph into dense subgraphs and an upper layer.

pub mod louvain;
pub mod partition;

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algo::{Aggregation, Algorithm};
use crate::engine::ActivationCounter;
use crate::error::{Error, Result};
use crate::graph::{Graph, VertexId};
use crate::network::{Network, ProxyKind, ProxySpec, SubgraphId};
use crate::shortcuts::{compute_shortcuts, ShortcutStore};

pub use louvain::louvain_communities;
pub use partition::{DenseSubgraph, Membership, Partition};

pub const DEFAULT_REPLICATION_THRESHOLD: usize = 2;
pub const DEFAULT_REBUILD_THRESHOLD: usize = 100_000;

/// Default subgraph size cap: 0.02% of the vertices, clamped to [16, 100000].
pub fn default_k(vertices: usize) -> usize {
    ((vertices as f64 * 0.0002).ceil() as usize).clamp(16, 100_000)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    /// Subgraph size cap; `None` picks [`default_k`].
    pub k: Option<usize>,
    pub replication: bool,
    /// A host gets a replica when strictly more edges than this connect it
    /// with one subgraph.
    pub replication_threshold: usize,
    /// Accumulated unit updates after which the partition is rediscovered.
    pub rebuild_threshold: usize,
    pub seed: u64,
    /// Fixed communities (internal ids) instead of clustering.
    #[serde(skip)]
    pub communities: Option<Vec<Vec<VertexId>>>,
}

impl Default for LayerConfig {
    fn default() -> Self {
        LayerConfig {
            k: None,
            replication: true,
            replication_threshold: DEFAULT_REPLICATION_THRESHOLD,
            rebuild_threshold: DEFAULT_REBUILD_THRESHOLD,
            seed: 0x5eed,
            communities: None,
        }
    }
}

impl LayerConfig {
    pub fn cap(&self, vertices: usize) -> usize {
        self.k.unwrap_or_else(|| default_k(vertices)).max(2)
    }
}

/// Candidate communities: Louvain output (or the pinned communities) with
/// singletons dropped.
pub fn discover_candidates(g: &Graph, cfg: &LayerConfig) -> Vec<Vec<VertexId>> {
    let cap = cfg.cap(g.live_count());
    let comms = match &cfg.communities {
        Some(c) => c.clone(),
        None => louvain_communities(g, cap, cfg.seed),
    };
    comms.into_iter().filter(|c| c.len() >= 2 && c.len() <= cap).collect()
}

/// Reads one community per line as whitespace-separated external ids.
/// Blank lines and `#` comments are skipped.
pub fn parse_communities<R: BufRead>(reader: R, g: &Graph, path: &Path) -> Result<Vec<Vec<VertexId>>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let mut c = Vec::new();
        for t in line.split_whitespace() {
            let x: u64 = t.parse().map_err(|_| err(format!("bad vertex id `{t}`")))?;
            c.push(g.internal(x).ok_or_else(|| err(format!("unknown vertex {x}")))?);
        }
        out.push(c);
    }
    Ok(out)
}

/// Dense subgraphs of `g` without replication.
pub fn discover_subgraphs(g: &Graph, cfg: &LayerConfig) -> (Network, Partition) {
    let net = Network::plain(g.clone());
    let mut part = Partition::from_communities(&net, &discover_candidates(g, cfg));
    part.filter_dense(&net);
    (net, part)
}

/// Picks replicas for candidate subgraphs of a replica-free network: first
/// into replicas for every subgraph, then out-of replicas over the edges the
/// first pass left alone.
pub fn choose_proxies(g: &Graph, part: &Partition, threshold: usize, cap: usize) -> Vec<ProxySpec> {
    let mut specs = Vec::new();
    let mut added: BTreeMap<SubgraphId, usize> = BTreeMap::new();
    let mut into: BTreeSet<(VertexId, SubgraphId)> = BTreeSet::new();
    for sg in part.live_subgraphs() {
        let mut count: BTreeMap<VertexId, usize> = BTreeMap::new();
        for &x in &sg.vertices {
            for e in g.in_edges(x) {
                if part.subgraph_of(e.to) != Some(sg.id) {
                    *count.entry(e.to).or_default() += 1;
                }
            }
        }
        for (h, c) in count {
            let n = added.entry(sg.id).or_default();
            if c > threshold && sg.vertices.len() + *n < cap {
                *n += 1;
                into.insert((h, sg.id));
                specs.push(ProxySpec {
                    host: h,
                    subgraph: sg.id,
                    kind: ProxyKind::Into,
                });
            }
        }
    }
    for sg in part.live_subgraphs() {
        let mut count: BTreeMap<VertexId, usize> = BTreeMap::new();
        for &x in &sg.vertices {
            for e in g.out_edges(x) {
                let h = e.to;
                if part.subgraph_of(h) == Some(sg.id) {
                    continue;
                }
                let covered = part.subgraph_of(h).is_some_and(|sh| into.contains(&(x, sh)));
                if !covered {
                    *count.entry(h).or_default() += 1;
                }
            }
        }
        for (h, c) in count {
            let n = added.entry(sg.id).or_default();
            if c > threshold && sg.vertices.len() + *n < cap {
                *n += 1;
                specs.push(ProxySpec {
                    host: h,
                    subgraph: sg.id,
                    kind: ProxyKind::OutOf,
                });
            }
        }
    }
    specs
}

/// Adds replicas to candidate communities and keeps the ones that pass the
/// density test. Replicas of dissolved communities are dropped and the network
/// is rebuilt until the retained set is stable.
pub fn replicate(
    g: &Graph,
    communities: &[Vec<VertexId>],
    roots: &BTreeSet<VertexId>,
    threshold: usize,
    cap: usize,
) -> (Network, Partition) {
    let plain = Network::plain(g.clone());
    let cand = Partition::from_communities(&plain, communities);
    let all_specs = choose_proxies(g, &cand, threshold, cap);
    let mut alive: BTreeSet<SubgraphId> = cand.live_subgraphs().map(|s| s.id).collect();
    loop {
        let specs: Vec<ProxySpec> = all_specs
            .iter()
            .copied()
            .filter(|s| alive.contains(&s.subgraph))
            .collect();
        let member = |v: VertexId| cand.subgraph_of(v).filter(|s| alive.contains(s));
        let net = Network::build(g.clone(), &specs, &member);
        let mut groups: BTreeMap<SubgraphId, Vec<VertexId>> = BTreeMap::new();
        for sg in cand.live_subgraphs() {
            groups.insert(sg.id, sg.vertices.clone());
        }
        for (p, info) in net.proxies() {
            groups.get_mut(&info.subgraph).unwrap().push(p);
        }
        let mut part = Partition::with_roots(net.num_slots(), roots.clone());
        let mut next_id = 0;
        for (id, vs) in groups {
            while next_id < id {
                part.subgraphs.push(None);
                next_id += 1;
            }
            if alive.contains(&id) {
                part.add_subgraph(&net, vs);
            } else {
                part.subgraphs.push(None);
            }
            next_id += 1;
        }
        for id in alive.iter().copied() {
            part.recompute(&net, id);
        }
        let failing: Vec<SubgraphId> = part.live_subgraphs().filter(|s| !s.is_dense()).map(|s| s.id).collect();
        if failing.is_empty() {
            return (net, part);
        }
        for id in failing {
            alive.remove(&id);
        }
    }
}

/// Partitioned network plus shortcuts: everything the layered engine needs.
#[derive(Clone, Debug)]
pub struct LayeredGraph {
    pub net: Network,
    pub part: Partition,
    pub shortcuts: ShortcutStore,
    pub cfg: LayerConfig,
    pub cap: usize,
    /// Unit updates applied since the partition was last discovered.
    pub updates_since_rebuild: usize,
}

/// Vertices whose state a `Min` algorithm seeds directly. Treating them as
/// entries keeps every internal state reachable from entry states alone.
pub fn root_vertices(g: &Graph, spec: &dyn Algorithm) -> BTreeSet<VertexId> {
    if spec.aggregation() != Aggregation::Min {
        return BTreeSet::new();
    }
    g.vertices()
        .filter(|&v| spec.initial_message(v) != spec.bottom())
        .collect()
}

/// Discovers subgraphs, adds replicas and computes all shortcuts.
pub fn build_layered_graph(
    g: &Graph,
    spec: &dyn Algorithm,
    cfg: &LayerConfig,
    counter: &mut ActivationCounter,
) -> LayeredGraph {
    let cap = cfg.cap(g.live_count());
    let candidates = discover_candidates(g, cfg);
    let roots = root_vertices(g, spec);
    let (net, part) = if cfg.replication {
        replicate(g, &candidates, &roots, cfg.replication_threshold, cap)
    } else {
        let net = Network::plain(g.clone());
        let mut part = Partition::from_communities(&net, &candidates);
        part.set_roots(&net, roots);
        part.filter_dense(&net);
        (net, part)
    };
    let shortcuts = compute_shortcuts(&net, &part, spec, counter);
    log::info!(
        "layered graph: {} subgraphs, {} replicas, {} shortcuts",
        part.live_count(),
        net.proxy_count(),
        shortcuts.size(spec)
    );
    LayeredGraph {
        net,
        part,
        shortcuts,
        cfg: cfg.clone(),
        cap,
        updates_since_rebuild: 0,
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct LayerStats {
    pub vertices: usize,
    pub edges: usize,
    pub k: usize,
    pub subgraphs: usize,
    pub proxies: usize,
    pub outliers: usize,
    pub entries: usize,
    pub exits: usize,
    pub upper_vertices: usize,
    /// Cross edges plus shortcuts between upper vertices of one subgraph.
    pub upper_links: usize,
    pub lower_vertices: usize,
    pub internal_edges: usize,
    pub shortcuts: usize,
    /// `sum(|entries| * |members|)`, the shortcut space bound.
    pub shortcut_bound: usize,
    /// `(size, count)` pairs.
    pub size_histogram: Vec<(usize, usize)>,
}

impl LayeredGraph {
    pub fn stats(&self, spec: &dyn Algorithm) -> LayerStats {
        let net = &self.net;
        let part = &self.part;
        let g = net.graph();
        let mut s = LayerStats {
            vertices: net.original_count(),
            edges: g.edge_count(),
            k: self.cap,
            subgraphs: part.live_count(),
            proxies: net.proxy_count(),
            shortcuts: self.shortcuts.size(spec),
            ..Default::default()
        };
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for sg in part.live_subgraphs() {
            *hist.entry(sg.vertices.len()).or_default() += 1;
            s.entries += sg.entries.len();
            s.exits += sg.exits.len();
            s.internal_edges += sg.internal_edges;
            s.shortcut_bound += sg.entries.len() * sg.vertices.len();
        }
        s.size_histogram = hist.into_iter().collect();
        for v in g.vertices() {
            let m = part.membership(v);
            if m.subgraph.is_none() {
                s.outliers += 1;
            }
            if m.is_upper() {
                s.upper_vertices += 1;
            } else {
                s.lower_vertices += 1;
            }
        }
        let cross = g.edges().filter(|&(u, v, _)| !part.is_internal_edge(u, v)).count();
        let mut skeleton = 0;
        for sc in self.shortcuts.subgraphs.values() {
            for (&u, row) in &sc.rows {
                for (i, &w) in row.val.iter().enumerate() {
                    if w != spec.bottom() && sc.lg.upper[i] && sc.lg.verts[i] != u {
                        skeleton += 1;
                    }
                }
            }
        }
        s.upper_links = cross + skeleton;
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_k_clamps() {
        assert_eq!(default_k(10), 16);
        assert_eq!(default_k(1_000_000), 200);
        assert_eq!(default_k(10_000_000_000), 100_000);
    }
}
