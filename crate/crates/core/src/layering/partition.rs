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

//! Dense subgraphs, vertex roles and the density test.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::graph::VertexId;
use crate::network::{Network, SubgraphId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub subgraph: Option<SubgraphId>,
    pub entry: bool,
    pub exit: bool,
}

impl Membership {
    /// Outliers, entries and exits form the upper layer.
    pub fn is_upper(&self) -> bool {
        self.subgraph.is_none() || self.entry || self.exit
    }

    pub fn is_internal(&self) -> bool {
        self.subgraph.is_some() && !self.entry && !self.exit
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseSubgraph {
    pub id: SubgraphId,
    /// Sorted member ids.
    pub vertices: Vec<VertexId>,
    pub entries: Vec<VertexId>,
    pub exits: Vec<VertexId>,
    pub internal_edges: usize,
}

impl DenseSubgraph {
    /// A community is worth a subgraph when its shortcut skeleton,
    /// `|entries| * |exits|`, is smaller than its internal edge set.
    pub fn is_dense(&self) -> bool {
        self.vertices.len() >= 2 && self.entries.len() * self.exits.len() < self.internal_edges
    }

    /// Entries and exits, sorted and deduplicated.
    pub fn boundary(&self) -> Vec<VertexId> {
        let s: BTreeSet<VertexId> = self.entries.iter().chain(&self.exits).copied().collect();
        s.into_iter().collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Indexed by subgraph id; dissolved subgraphs leave `None`.
    pub subgraphs: Vec<Option<DenseSubgraph>>,
    member: Vec<Membership>,
    /// Vertices that start with a root message. They always count as entries
    /// so that every internal state derives from entry states.
    #[serde(default)]
    roots: BTreeSet<VertexId>,
}

impl Partition {
    /// Everything is an outlier.
    pub fn empty(n: usize) -> Self {
        Partition {
            subgraphs: Vec::new(),
            member: vec![Membership::default(); n],
            roots: BTreeSet::new(),
        }
    }

    pub fn with_roots(n: usize, roots: BTreeSet<VertexId>) -> Self {
        Partition {
            roots,
            ..Partition::empty(n)
        }
    }

    /// Marks `roots` as forced entries and recomputes every subgraph.
    pub fn set_roots(&mut self, net: &Network, roots: BTreeSet<VertexId>) {
        self.roots = roots;
        for id in 0..self.subgraphs.len() as SubgraphId {
            self.recompute(net, id);
        }
    }

    pub fn roots(&self) -> &BTreeSet<VertexId> {
        &self.roots
    }

    /// Assigns one subgraph per community (singletons stay outliers) and
    /// computes roles. No density filtering happens here.
    pub fn from_communities(net: &Network, communities: &[Vec<VertexId>]) -> Self {
        let mut p = Partition::empty(net.num_slots());
        for c in communities.iter().filter(|c| c.len() >= 2) {
            let id = p.subgraphs.len() as SubgraphId;
            let mut vertices = c.clone();
            vertices.sort_unstable();
            for &v in &vertices {
                p.member[v as usize].subgraph = Some(id);
            }
            p.subgraphs.push(Some(DenseSubgraph {
                id,
                vertices,
                entries: Vec::new(),
                exits: Vec::new(),
                internal_edges: 0,
            }));
        }
        for id in 0..p.subgraphs.len() as SubgraphId {
            p.recompute(net, id);
        }
        p
    }

    pub fn num_slots(&self) -> usize {
        self.member.len()
    }

    pub fn ensure_len(&mut self, n: usize) {
        if self.member.len() < n {
            self.member.resize(n, Membership::default());
        }
    }

    pub fn membership(&self, v: VertexId) -> Membership {
        self.member.get(v as usize).copied().unwrap_or_default()
    }

    pub fn subgraph_of(&self, v: VertexId) -> Option<SubgraphId> {
        self.membership(v).subgraph
    }

    pub fn subgraph(&self, id: SubgraphId) -> Option<&DenseSubgraph> {
        self.subgraphs.get(id as usize).and_then(|s| s.as_ref())
    }

    pub fn live_subgraphs(&self) -> impl Iterator<Item = &DenseSubgraph> {
        self.subgraphs.iter().flatten()
    }

    pub fn live_count(&self) -> usize {
        self.live_subgraphs().count()
    }

    /// Adds a subgraph over `vertices` (sorted or not) and computes its roles.
    pub fn add_subgraph(&mut self, net: &Network, vertices: Vec<VertexId>) -> SubgraphId {
        let id = self.subgraphs.len() as SubgraphId;
        let mut vertices = vertices;
        vertices.sort_unstable();
        self.ensure_len(net.num_slots());
        for &v in &vertices {
            self.member[v as usize].subgraph = Some(id);
        }
        self.subgraphs.push(Some(DenseSubgraph {
            id,
            vertices,
            entries: Vec::new(),
            exits: Vec::new(),
            internal_edges: 0,
        }));
        self.recompute(net, id);
        id
    }

    /// Drops dead members and recomputes entries, exits and the internal edge
    /// count of one subgraph from the network.
    pub fn recompute(&mut self, net: &Network, id: SubgraphId) {
        self.ensure_len(net.num_slots());
        let Some(sg) = self.subgraphs[id as usize].take() else {
            return;
        };
        let mut vertices = sg.vertices;
        for &v in &vertices {
            if !net.is_live(v) {
                self.member[v as usize] = Membership::default();
            }
        }
        vertices.retain(|&v| net.is_live(v));
        let g = net.graph();
        let mut entries = Vec::new();
        let mut exits = Vec::new();
        let mut internal = 0;
        for &v in &vertices {
            let is_entry = self.roots.contains(&v) || g.in_edges(v).iter().any(|e| self.subgraph_of(e.to) != Some(id));
            let mut is_exit = false;
            for e in g.out_edges(v) {
                if self.subgraph_of(e.to) == Some(id) {
                    internal += 1;
                } else {
                    is_exit = true;
                }
            }
            let m = &mut self.member[v as usize];
            m.entry = is_entry;
            m.exit = is_exit;
            if is_entry {
                entries.push(v);
            }
            if is_exit {
                exits.push(v);
            }
        }
        self.subgraphs[id as usize] = Some(DenseSubgraph {
            id,
            vertices,
            entries,
            exits,
            internal_edges: internal,
        });
    }

    /// Turns every member of a subgraph into an outlier.
    pub fn dissolve(&mut self, id: SubgraphId) -> Option<DenseSubgraph> {
        let sg = self.subgraphs.get_mut(id as usize)?.take()?;
        for &v in &sg.vertices {
            self.member[v as usize] = Membership::default();
        }
        Some(sg)
    }

    /// Dissolves every subgraph failing the density test, lowest id first.
    /// Roles of neighbouring subgraphs are refreshed after each dissolution.
    pub fn filter_dense(&mut self, net: &Network) -> Vec<SubgraphId> {
        let mut dissolved = Vec::new();
        loop {
            let failing = self.live_subgraphs().find(|s| !s.is_dense()).map(|s| s.id);
            let Some(id) = failing else { break };
            let sg = self.dissolve(id).unwrap();
            dissolved.push(id);
            for nb in neighbour_subgraphs(self, net, &sg.vertices) {
                self.recompute(net, nb);
            }
        }
        dissolved
    }

    /// Upper-layer vertices: live outliers, entries and exits.
    pub fn upper_vertices<'a>(&'a self, net: &'a Network) -> impl Iterator<Item = VertexId> + 'a {
        net.graph().vertices().filter(move |&v| self.membership(v).is_upper())
    }

    /// True when both endpoints sit in the same subgraph.
    pub fn is_internal_edge(&self, u: VertexId, v: VertexId) -> bool {
        match (self.subgraph_of(u), self.subgraph_of(v)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }
}

/// Subgraphs owning a neighbour of any vertex in `vs`.
pub(crate) fn neighbour_subgraphs(p: &Partition, net: &Network, vs: &[VertexId]) -> BTreeSet<SubgraphId> {
    let g = net.graph();
    let mut out = BTreeSet::new();
    for &v in vs {
        if (v as usize) >= g.num_slots() {
            continue;
        }
        for e in g.out_edges(v).iter().chain(g.in_edges(v)) {
            if let Some(s) = p.subgraph_of(e.to) {
                out.insert(s);
            }
        }
    }
    out
}
