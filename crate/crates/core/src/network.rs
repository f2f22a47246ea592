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

//! A graph together with its replica vertices.
//!
//! A replica stands in for an external host inside one subgraph. An *into*
//! replica takes over the host's out-edges into the subgraph and is fed by a
//! link `host -> replica`; an *out-of* replica takes over edges from the
//! subgraph to the host and forwards them over a link `replica -> host`. Links
//! pass messages through unchanged, so states of original vertices are the
//! same as on the collapsed graph.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::algo::SenderContext;
use crate::error::{Error, Result};
use crate::graph::{check_weight, Delta, DeltaBuilder, Graph, UnitUpdate, UpdateBatch, VertexId};

pub type SubgraphId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyKind {
    Into,
    OutOf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyInfo {
    pub host: VertexId,
    pub kind: ProxyKind,
    pub subgraph: SubgraphId,
}

/// Request for a replica of `host` inside `subgraph`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProxySpec {
    pub host: VertexId,
    pub subgraph: SubgraphId,
    pub kind: ProxyKind,
}

#[derive(Clone, Debug)]
pub struct Network {
    graph: Graph,
    proxy: Vec<Option<ProxyInfo>>,
    by_host: HashMap<VertexId, Vec<VertexId>>,
    lookup: HashMap<(VertexId, SubgraphId, ProxyKind), VertexId>,
    ctx: Vec<SenderContext>,
}

impl Network {
    /// A network without replicas.
    pub fn plain(g: Graph) -> Self {
        let ctx = (0..g.num_slots() as VertexId)
            .map(|v| SenderContext {
                out_degree: g.out_degree(v) as u32,
                out_weight: g.out_weight(v),
            })
            .collect();
        Network {
            proxy: vec![None; g.num_slots()],
            graph: g,
            by_host: HashMap::new(),
            lookup: HashMap::new(),
            ctx,
        }
    }

    /// Adds the requested replicas to `base` and reroutes every edge they cover.
    /// An edge `(a, b)` goes to an into replica of `a` in the subgraph of `b` if
    /// there is one, otherwise to an out-of replica of `b` in the subgraph of `a`.
    pub fn build(base: Graph, proxies: &[ProxySpec], membership: &dyn Fn(VertexId) -> Option<SubgraphId>) -> Self {
        let mut net = Network::plain(base);
        let snapshot: Vec<(VertexId, VertexId, f64)> = net.graph.edges().collect();
        for spec in proxies {
            net.add_proxy(*spec);
        }
        for (a, b, w) in snapshot {
            let (s, t) = net.route(a, b, membership);
            if (s, t) != (a, b) {
                net.graph.remove_edge(a, b);
                net.graph.insert_edge(s, t, w);
            }
        }
        net
    }

    fn add_proxy(&mut self, spec: ProxySpec) -> VertexId {
        let p = self.graph.add_vertex(None);
        self.proxy.push(Some(ProxyInfo {
            host: spec.host,
            kind: spec.kind,
            subgraph: spec.subgraph,
        }));
        self.ctx.push(match spec.kind {
            ProxyKind::Into => self.ctx[spec.host as usize],
            ProxyKind::OutOf => SenderContext::default(),
        });
        self.by_host.entry(spec.host).or_default().push(p);
        self.lookup.insert((spec.host, spec.subgraph, spec.kind), p);
        match spec.kind {
            ProxyKind::Into => self.graph.insert_edge(spec.host, p, 1.0),
            ProxyKind::OutOf => self.graph.insert_edge(p, spec.host, 1.0),
        };
        p
    }

    fn route(
        &self,
        a: VertexId,
        b: VertexId,
        membership: &dyn Fn(VertexId) -> Option<SubgraphId>,
    ) -> (VertexId, VertexId) {
        if let Some(sb) = membership(b) {
            if let Some(&p) = self.lookup.get(&(a, sb, ProxyKind::Into)) {
                if self.graph.is_live(p) {
                    return (p, b);
                }
            }
        }
        if let Some(sa) = membership(a) {
            if let Some(&p) = self.lookup.get(&(b, sa, ProxyKind::OutOf)) {
                if self.graph.is_live(p) {
                    return (a, p);
                }
            }
        }
        (a, b)
    }

    /// Where the original edge `(a, b)` currently lives, if present.
    fn locate(&self, a: VertexId, b: VertexId) -> Option<(VertexId, VertexId, f64)> {
        if let Some(w) = self.graph.edge_weight(a, b) {
            if !self.is_link(a, b) {
                return Some((a, b, w));
            }
        }
        for &p in self.proxies_of(a) {
            if self.kind(p) == Some(ProxyKind::Into) {
                if let Some(w) = self.graph.edge_weight(p, b) {
                    return Some((p, b, w));
                }
            }
        }
        for &p in self.proxies_of(b) {
            if self.kind(p) == Some(ProxyKind::OutOf) {
                if let Some(w) = self.graph.edge_weight(a, p) {
                    return Some((a, p, w));
                }
            }
        }
        None
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn num_slots(&self) -> usize {
        self.graph.num_slots()
    }

    pub fn is_live(&self, v: VertexId) -> bool {
        self.graph.is_live(v)
    }

    pub fn proxy_info(&self, v: VertexId) -> Option<ProxyInfo> {
        self.proxy.get(v as usize).copied().flatten()
    }

    pub fn is_proxy(&self, v: VertexId) -> bool {
        self.proxy_info(v).is_some()
    }

    pub fn host(&self, v: VertexId) -> Option<VertexId> {
        self.proxy_info(v).map(|p| p.host)
    }

    fn kind(&self, v: VertexId) -> Option<ProxyKind> {
        self.proxy_info(v).map(|p| p.kind)
    }

    pub fn proxies_of(&self, host: VertexId) -> &[VertexId] {
        self.by_host.get(&host).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// Every replica slot, live or not, in id order.
    pub fn proxies(&self) -> impl Iterator<Item = (VertexId, ProxyInfo)> + '_ {
        self.proxy
            .iter()
            .enumerate()
            .filter_map(|(v, p)| p.map(|p| (v as VertexId, p)))
    }

    pub fn proxy_count(&self) -> usize {
        self.proxies().filter(|(p, _)| self.graph.is_live(*p)).count()
    }

    /// True for the pass-through edge between a replica and its host.
    pub fn is_link(&self, u: VertexId, v: VertexId) -> bool {
        self.host(u) == Some(v) || self.host(v) == Some(u)
    }

    pub fn ctx(&self, v: VertexId) -> SenderContext {
        self.ctx[v as usize]
    }

    /// Live vertices that are not replicas.
    pub fn originals(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.graph.vertices().filter(move |&v| !self.is_proxy(v))
    }

    pub fn original_count(&self) -> usize {
        self.originals().count()
    }

    /// The sender an edge leaving `s` is attributed to in the collapsed graph.
    pub fn base_source(&self, s: VertexId) -> VertexId {
        match self.proxy_info(s) {
            Some(ProxyInfo {
                host,
                kind: ProxyKind::Into,
                ..
            }) => host,
            _ => s,
        }
    }

    /// Collapses replicas back into their hosts. Slot ids are preserved and
    /// replica slots are left dead.
    pub fn base_graph(&self) -> Graph {
        let mut g = self.graph.clone();
        let mut rerouted = Vec::new();
        for (p, info) in self.proxies() {
            if !g.is_live(p) {
                continue;
            }
            match info.kind {
                ProxyKind::Into => {
                    for e in self.graph.out_edges(p) {
                        rerouted.push((info.host, e.to, e.weight));
                    }
                }
                ProxyKind::OutOf => {
                    for e in self.graph.in_edges(p) {
                        rerouted.push((e.to, info.host, e.weight));
                    }
                }
            }
            g.remove_vertex(p);
        }
        for (a, b, w) in rerouted {
            g.insert_edge(a, b, w);
        }
        g
    }

    fn refresh_ctx(&mut self, v: VertexId, changed: &mut BTreeSet<VertexId>) {
        let mut c = SenderContext::default();
        let mut add = |g: &Graph, s: VertexId, skip_links: bool, net: &Network| {
            for e in g.out_edges(s) {
                if skip_links && net.is_link(s, e.to) {
                    continue;
                }
                c.out_degree += 1;
                c.out_weight += e.weight;
            }
        };
        add(&self.graph, v, true, self);
        for &p in self.proxies_of(v) {
            if self.kind(p) == Some(ProxyKind::Into) && self.graph.is_live(p) {
                add(&self.graph, p, false, self);
            }
        }
        if self.ctx[v as usize] != c {
            self.ctx[v as usize] = c;
            changed.insert(v);
            let into: Vec<VertexId> = self
                .proxies_of(v)
                .iter()
                .copied()
                .filter(|&p| self.kind(p) == Some(ProxyKind::Into))
                .collect();
            for p in into {
                self.ctx[p as usize] = c;
                changed.insert(p);
            }
        }
    }

    fn ensure(&mut self, ext: u64, delta: &mut DeltaBuilder) -> VertexId {
        match self.graph.internal(ext) {
            Some(v) => v,
            None => self.new_vertex(ext, delta),
        }
    }

    fn new_vertex(&mut self, ext: u64, delta: &mut DeltaBuilder) -> VertexId {
        let v = self.graph.add_vertex(Some(ext));
        self.proxy.push(None);
        self.ctx.push(SenderContext::default());
        delta.born(v);
        v
    }

    /// Applies a batch of external-id updates, rerouting new edges through
    /// existing replicas. Returns the new network, the consolidated delta and
    /// the vertices whose sender context changed.
    pub fn apply_batch(
        &self,
        batch: &UpdateBatch,
        membership: &dyn Fn(VertexId) -> Option<SubgraphId>,
    ) -> Result<(Network, Delta, BTreeSet<VertexId>)> {
        let mut net = self.clone();
        let mut delta = DeltaBuilder::default();
        let mut sources = BTreeSet::new();
        let weighted = net.graph.is_weighted();
        for (i, u) in batch.updates.iter().enumerate() {
            let err = |reason: &str| Error::Update {
                index: i,
                update: u.to_string(),
                reason: reason.to_string(),
            };
            match *u {
                UnitUpdate::InsertEdge { src, dst, weight } => {
                    let w = if weighted { weight } else { 1.0 };
                    check_weight(w).map_err(|r| err(&r))?;
                    let a = net.ensure(src, &mut delta);
                    let b = net.ensure(dst, &mut delta);
                    let (s, t) = match net.locate(a, b) {
                        Some((s, t, _)) => (s, t),
                        None => net.route(a, b, membership),
                    };
                    let old = net.graph.insert_edge(s, t, w);
                    delta.record(s, t, old, Some(w));
                    sources.insert(a);
                }
                UnitUpdate::DeleteEdge { src, dst } => {
                    let (Some(a), Some(b)) = (net.graph.internal(src), net.graph.internal(dst)) else {
                        return Err(err("endpoint does not exist"));
                    };
                    let (s, t, w) = net.locate(a, b).ok_or_else(|| err("edge does not exist"))?;
                    net.graph.remove_edge(s, t);
                    delta.record(s, t, Some(w), None);
                    sources.insert(a);
                }
                UnitUpdate::InsertVertex(x) => {
                    if net.graph.internal(x).is_some() {
                        return Err(err("vertex already exists"));
                    }
                    net.new_vertex(x, &mut delta);
                }
                UnitUpdate::DeleteVertex(x) => {
                    let v = net.graph.internal(x).ok_or_else(|| err("vertex does not exist"))?;
                    let reps: Vec<VertexId> = net.proxies_of(v).to_vec();
                    for p in reps {
                        if !net.graph.is_live(p) {
                            continue;
                        }
                        for (s, t, w) in net.graph.remove_vertex(p) {
                            delta.record(s, t, Some(w), None);
                            if !net.is_link(s, t) {
                                sources.insert(net.base_source(s));
                            }
                        }
                        delta.died(p);
                    }
                    for (s, t, w) in net.graph.remove_vertex(v) {
                        delta.record(s, t, Some(w), None);
                        if !net.is_link(s, t) {
                            sources.insert(net.base_source(s));
                        }
                    }
                    delta.died(v);
                }
            }
        }
        let mut ctx_changed = BTreeSet::new();
        for s in sources {
            net.refresh_ctx(s, &mut ctx_changed);
        }
        Ok((net, delta.finish(), ctx_changed))
    }
}
