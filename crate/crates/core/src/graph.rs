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

//! Directed weighted graphs, external id mapping and batched updates.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type VertexId = u32;

/// An adjacency entry. In an out-list `to` is the head, in an in-list it is the tail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub to: VertexId,
    pub weight: f64,
}

/// Bijection between external ids and dense internal ids, restricted to live vertices.
/// Vertices without an external id (replicas) map to `None`.
#[derive(Clone, Debug, Default)]
pub struct VertexIdMap {
    to_ext: Vec<Option<u64>>,
    to_int: HashMap<u64, VertexId>,
}

impl VertexIdMap {
    pub fn external(&self, v: VertexId) -> Option<u64> {
        self.to_ext.get(v as usize).copied().flatten()
    }

    pub fn internal(&self, ext: u64) -> Option<VertexId> {
        self.to_int.get(&ext).copied()
    }

    pub fn len(&self) -> usize {
        self.to_ext.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_ext.is_empty()
    }
}

/// Directed graph with positive finite edge weights, tombstoned vertex deletion and
/// at most one edge per ordered pair.
#[derive(Clone, Debug)]
pub struct Graph {
    out: Vec<Vec<Edge>>,
    inc: Vec<Vec<Edge>>,
    live: Vec<bool>,
    ids: VertexIdMap,
    weighted: bool,
    edges: usize,
}

impl Graph {
    pub fn new(weighted: bool) -> Self {
        Graph {
            out: Vec::new(),
            inc: Vec::new(),
            live: Vec::new(),
            ids: VertexIdMap::default(),
            weighted,
            edges: 0,
        }
    }

    /// Builds a graph from external-id triples. Ids are assigned in first-seen order.
    pub fn from_edges<I>(weighted: bool, edges: I) -> Self
    where
        I: IntoIterator<Item = (u64, u64, f64)>,
    {
        let mut g = Graph::new(weighted);
        for (s, d, w) in edges {
            let u = g.ensure_vertex(s);
            let v = g.ensure_vertex(d);
            g.insert_edge(u, v, if weighted { w } else { 1.0 });
        }
        g
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    /// Number of id slots, dead vertices included.
    pub fn num_slots(&self) -> usize {
        self.live.len()
    }

    pub fn live_count(&self) -> usize {
        self.live.iter().filter(|&&l| l).count()
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }

    pub fn is_live(&self, v: VertexId) -> bool {
        self.live.get(v as usize).copied().unwrap_or(false)
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        (0..self.live.len() as VertexId).filter(move |&v| self.live[v as usize])
    }

    pub fn out_edges(&self, v: VertexId) -> &[Edge] {
        &self.out[v as usize]
    }

    pub fn in_edges(&self, v: VertexId) -> &[Edge] {
        &self.inc[v as usize]
    }

    pub fn out_degree(&self, v: VertexId) -> usize {
        self.out[v as usize].len()
    }

    pub fn out_weight(&self, v: VertexId) -> f64 {
        self.out[v as usize].iter().map(|e| e.weight).sum()
    }

    pub fn edge_weight(&self, u: VertexId, v: VertexId) -> Option<f64> {
        self.out[u as usize].iter().find(|e| e.to == v).map(|e| e.weight)
    }

    pub fn edges(&self) -> impl Iterator<Item = (VertexId, VertexId, f64)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(u, es)| es.iter().map(move |e| (u as VertexId, e.to, e.weight)))
    }

    pub fn ids(&self) -> &VertexIdMap {
        &self.ids
    }

    pub fn external(&self, v: VertexId) -> Option<u64> {
        self.ids.external(v)
    }

    pub fn internal(&self, ext: u64) -> Option<VertexId> {
        self.ids.internal(ext)
    }

    /// Appends a fresh live vertex.
    pub fn add_vertex(&mut self, ext: Option<u64>) -> VertexId {
        let v = self.live.len() as VertexId;
        self.out.push(Vec::new());
        self.inc.push(Vec::new());
        self.live.push(true);
        self.ids.to_ext.push(ext);
        if let Some(x) = ext {
            self.ids.to_int.insert(x, v);
        }
        v
    }

    /// Returns the live vertex with this external id, creating it if needed.
    pub fn ensure_vertex(&mut self, ext: u64) -> VertexId {
        match self.ids.internal(ext) {
            Some(v) => v,
            None => self.add_vertex(Some(ext)),
        }
    }

    /// Inserts or re-weights an edge; returns the previous weight.
    pub fn insert_edge(&mut self, u: VertexId, v: VertexId, w: f64) -> Option<f64> {
        if let Some(e) = self.out[u as usize].iter_mut().find(|e| e.to == v) {
            let old = e.weight;
            e.weight = w;
            let back = self.inc[v as usize].iter_mut().find(|e| e.to == u).unwrap();
            back.weight = w;
            return Some(old);
        }
        self.out[u as usize].push(Edge { to: v, weight: w });
        self.inc[v as usize].push(Edge { to: u, weight: w });
        self.edges += 1;
        None
    }

    pub fn remove_edge(&mut self, u: VertexId, v: VertexId) -> Option<f64> {
        let out = &mut self.out[u as usize];
        let i = out.iter().position(|e| e.to == v)?;
        let w = out.remove(i).weight;
        let inc = &mut self.inc[v as usize];
        let j = inc.iter().position(|e| e.to == u).unwrap();
        inc.remove(j);
        self.edges -= 1;
        Some(w)
    }

    /// Tombstones a vertex and drops its incident edges, which are returned.
    pub fn remove_vertex(&mut self, v: VertexId) -> Vec<(VertexId, VertexId, f64)> {
        let mut removed = Vec::new();
        let outs: Vec<Edge> = self.out[v as usize].clone();
        for e in outs {
            self.remove_edge(v, e.to);
            removed.push((v, e.to, e.weight));
        }
        let ins: Vec<Edge> = self.inc[v as usize].clone();
        for e in ins {
            self.remove_edge(e.to, v);
            removed.push((e.to, v, e.weight));
        }
        self.live[v as usize] = false;
        if let Some(x) = self.ids.to_ext[v as usize] {
            self.ids.to_int.remove(&x);
        }
        removed
    }
}

/// One element of an update batch, expressed in external ids.
#[derive(Clone, Debug, PartialEq)]
pub enum UnitUpdate {
    InsertEdge { src: u64, dst: u64, weight: f64 },
    DeleteEdge { src: u64, dst: u64 },
    InsertVertex(u64),
    DeleteVertex(u64),
}

impl fmt::Display for UnitUpdate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitUpdate::InsertEdge { src, dst, weight } => write!(f, "a {src} {dst} {weight}"),
            UnitUpdate::DeleteEdge { src, dst } => write!(f, "d {src} {dst}"),
            UnitUpdate::InsertVertex(v) => write!(f, "av {v}"),
            UnitUpdate::DeleteVertex(v) => write!(f, "dv {v}"),
        }
    }
}

/// Ordered sequence of unit updates, applied in sequence semantics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateBatch {
    pub updates: Vec<UnitUpdate>,
}

impl UpdateBatch {
    pub fn new(updates: Vec<UnitUpdate>) -> Self {
        UpdateBatch { updates }
    }

    pub fn len(&self) -> usize {
        self.updates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.updates.is_empty()
    }

    /// Concatenation, equivalent to applying `self` then `other`.
    pub fn merged(&self, other: &UpdateBatch) -> UpdateBatch {
        let mut updates = self.updates.clone();
        updates.extend(other.updates.iter().cloned());
        UpdateBatch { updates }
    }
}

/// Net effect of a batch on one ordered pair. `None` means absent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeChange {
    pub src: VertexId,
    pub dst: VertexId,
    pub old: Option<f64>,
    pub new: Option<f64>,
}

/// Consolidated difference between two versions of a graph sharing an id space.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Delta {
    pub edges: Vec<EdgeChange>,
    pub born: Vec<VertexId>,
    pub died: Vec<VertexId>,
}

impl Delta {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.born.is_empty() && self.died.is_empty()
    }

    /// Every vertex that is an endpoint of a changed edge, born or died.
    pub fn touched(&self) -> BTreeSet<VertexId> {
        let mut t = BTreeSet::new();
        for c in &self.edges {
            t.insert(c.src);
            t.insert(c.dst);
        }
        t.extend(self.born.iter().copied());
        t.extend(self.died.iter().copied());
        t
    }

    /// Sources whose out-adjacency changed.
    pub fn changed_sources(&self) -> BTreeSet<VertexId> {
        self.edges.iter().map(|c| c.src).collect()
    }
}

/// Accumulates raw edge events into a consolidated [`Delta`].
#[derive(Default)]
pub(crate) struct DeltaBuilder {
    edges: BTreeMap<(VertexId, VertexId), (Option<f64>, Option<f64>)>,
    born: BTreeSet<VertexId>,
    died: BTreeSet<VertexId>,
}

impl DeltaBuilder {
    pub(crate) fn record(&mut self, u: VertexId, v: VertexId, old: Option<f64>, new: Option<f64>) {
        self.edges.entry((u, v)).and_modify(|e| e.1 = new).or_insert((old, new));
    }

    pub(crate) fn born(&mut self, v: VertexId) {
        self.born.insert(v);
    }

    pub(crate) fn died(&mut self, v: VertexId) {
        if !self.born.remove(&v) {
            self.died.insert(v);
        }
    }

    pub(crate) fn finish(self) -> Delta {
        let edges = self
            .edges
            .into_iter()
            .filter(|(_, (o, n))| o != n)
            .map(|((src, dst), (old, new))| EdgeChange { src, dst, old, new })
            .collect();
        Delta {
            edges,
            born: self.born.into_iter().collect(),
            died: self.died.into_iter().collect(),
        }
    }
}

fn update_err(index: usize, u: &UnitUpdate, reason: impl Into<String>) -> Error {
    Error::Update {
        index,
        update: u.to_string(),
        reason: reason.into(),
    }
}

pub(crate) fn check_weight(w: f64) -> std::result::Result<(), String> {
    if w.is_finite() && w > 0.0 {
        Ok(())
    } else {
        Err(format!("edge weight must be finite and positive, got {w}"))
    }
}

/// Applies `batch` to a copy of `g`. The input graph is left untouched so callers
/// can diff both versions.
pub fn apply_update_batch(g: &Graph, batch: &UpdateBatch) -> Result<(Graph, Delta)> {
    let mut h = g.clone();
    let mut delta = DeltaBuilder::default();
    for (i, u) in batch.updates.iter().enumerate() {
        match *u {
            UnitUpdate::InsertEdge { src, dst, weight } => {
                let w = if h.weighted { weight } else { 1.0 };
                check_weight(w).map_err(|r| update_err(i, u, r))?;
                let a = resolve_or_create(&mut h, &mut delta, src);
                let b = resolve_or_create(&mut h, &mut delta, dst);
                let old = h.insert_edge(a, b, w);
                delta.record(a, b, old, Some(w));
            }
            UnitUpdate::DeleteEdge { src, dst } => {
                let (a, b) = match (h.internal(src), h.internal(dst)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(update_err(i, u, "endpoint does not exist")),
                };
                let old = h
                    .remove_edge(a, b)
                    .ok_or_else(|| update_err(i, u, "edge does not exist"))?;
                delta.record(a, b, Some(old), None);
            }
            UnitUpdate::InsertVertex(x) => {
                if h.internal(x).is_some() {
                    return Err(update_err(i, u, "vertex already exists"));
                }
                let v = h.add_vertex(Some(x));
                delta.born(v);
            }
            UnitUpdate::DeleteVertex(x) => {
                let v = h.internal(x).ok_or_else(|| update_err(i, u, "vertex does not exist"))?;
                for (a, b, w) in h.remove_vertex(v) {
                    delta.record(a, b, Some(w), None);
                }
                delta.died(v);
            }
        }
    }
    Ok((h, delta.finish()))
}

fn resolve_or_create(h: &mut Graph, delta: &mut DeltaBuilder, ext: u64) -> VertexId {
    match h.internal(ext) {
        Some(v) => v,
        None => {
            let v = h.add_vertex(Some(ext));
            delta.born(v);
            v
        }
    }
}

/// Full comparison of two graph versions over a shared id space.
pub fn diff_summary(old: &Graph, new: &Graph) -> Delta {
    let mut d = DeltaBuilder::default();
    let n = old.num_slots().max(new.num_slots());
    for v in 0..n as VertexId {
        let was = old.is_live(v);
        let is = new.is_live(v);
        if is && !was && (v as usize) >= old.num_slots() {
            d.born(v);
        } else if was && !is {
            d.died.insert(v);
        }
        let before: BTreeMap<VertexId, f64> = if (v as usize) < old.num_slots() {
            old.out_edges(v).iter().map(|e| (e.to, e.weight)).collect()
        } else {
            BTreeMap::new()
        };
        let after: BTreeMap<VertexId, f64> = if (v as usize) < new.num_slots() {
            new.out_edges(v).iter().map(|e| (e.to, e.weight)).collect()
        } else {
            BTreeMap::new()
        };
        let keys: BTreeSet<VertexId> = before.keys().chain(after.keys()).copied().collect();
        for t in keys {
            let (o, n) = (before.get(&t).copied(), after.get(&t).copied());
            if o != n {
                d.record(v, t, o, n);
            }
        }
    }
    d.finish()
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_id(path: &Path, line: usize, tok: &str) -> Result<u64> {
    tok.parse::<u64>()
        .map_err(|_| parse_err(path, line, format!("invalid vertex id `{tok}`")))
}

fn parse_weight(path: &Path, line: usize, tok: &str) -> Result<f64> {
    let w = tok
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("invalid weight `{tok}`")))?;
    check_weight(w).map_err(|m| parse_err(path, line, m))?;
    Ok(w)
}

fn content_lines(line: &str) -> Option<Vec<&str>> {
    let body = line.split('#').next().unwrap_or("").trim();
    if body.is_empty() {
        None
    } else {
        Some(body.split_whitespace().collect())
    }
}

/// Parses an edge list: one `src dst` (unweighted) or `src dst weight` (weighted)
/// per line, `#` starts a comment. Repeated pairs keep the last weight.
pub fn parse_edge_list<R: BufRead>(reader: R, weighted: bool, path: &Path) -> Result<Graph> {
    let mut g = Graph::new(weighted);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let no = i + 1;
        let Some(tok) = content_lines(&line) else { continue };
        let w = match (tok.len(), weighted) {
            (2, false) => 1.0,
            (3, true) => parse_weight(path, no, tok[2])?,
            (3, false) => return Err(parse_err(path, no, "weight given for an unweighted graph")),
            (2, true) => return Err(parse_err(path, no, "missing weight")),
            _ => {
                return Err(parse_err(
                    path,
                    no,
                    format!("expected 2 or 3 fields, got {}", tok.len()),
                ))
            }
        };
        let s = parse_id(path, no, tok[0])?;
        let d = parse_id(path, no, tok[1])?;
        let u = g.ensure_vertex(s);
        let v = g.ensure_vertex(d);
        g.insert_edge(u, v, w);
    }
    Ok(g)
}

pub fn load_edge_list(path: impl AsRef<Path>, weighted: bool) -> Result<Graph> {
    let path = path.as_ref();
    let f = std::fs::File::open(path)?;
    parse_edge_list(BufReader::new(f), weighted, path)
}

pub fn write_edge_list<W: Write>(g: &Graph, mut out: W) -> Result<()> {
    for (u, v, w) in g.edges() {
        let (a, b) = (g.external(u), g.external(v));
        let (Some(a), Some(b)) = (a, b) else { continue };
        if g.is_weighted() {
            writeln!(out, "{a} {b} {w}")?;
        } else {
            writeln!(out, "{a} {b}")?;
        }
    }
    Ok(())
}

/// Parses update lines `a u v [w]`, `d u v`, `av v`, `dv v`.
pub fn parse_updates<R: BufRead>(reader: R, path: &Path) -> Result<UpdateBatch> {
    let mut updates = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let no = i + 1;
        let Some(tok) = content_lines(&line) else { continue };
        let u = match (tok[0], tok.len()) {
            ("a", 3) => UnitUpdate::InsertEdge {
                src: parse_id(path, no, tok[1])?,
                dst: parse_id(path, no, tok[2])?,
                weight: 1.0,
            },
            ("a", 4) => UnitUpdate::InsertEdge {
                src: parse_id(path, no, tok[1])?,
                dst: parse_id(path, no, tok[2])?,
                weight: parse_weight(path, no, tok[3])?,
            },
            ("d", 3) => UnitUpdate::DeleteEdge {
                src: parse_id(path, no, tok[1])?,
                dst: parse_id(path, no, tok[2])?,
            },
            ("av", 2) => UnitUpdate::InsertVertex(parse_id(path, no, tok[1])?),
            ("dv", 2) => UnitUpdate::DeleteVertex(parse_id(path, no, tok[1])?),
            _ => return Err(parse_err(path, no, format!("malformed update `{}`", tok.join(" ")))),
        };
        updates.push(u);
    }
    Ok(UpdateBatch { updates })
}

pub fn load_updates(path: impl AsRef<Path>) -> Result<UpdateBatch> {
    let path = path.as_ref();
    let f = std::fs::File::open(path)?;
    parse_updates(BufReader::new(f), path)
}

pub fn write_updates<W: Write>(batch: &UpdateBatch, mut out: W) -> Result<()> {
    for u in &batch.updates {
        writeln!(out, "{u}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Graph {
        Graph::from_edges(true, [(0, 1, 1.0), (1, 2, 2.0), (2, 0, 3.0)])
    }

    #[test]
    fn insert_replaces_weight() {
        let mut g = fixture();
        assert_eq!(g.insert_edge(0, 1, 5.0), Some(1.0));
        assert_eq!(g.edge_count(), 3);
        assert_eq!(g.edge_weight(0, 1), Some(5.0));
        assert_eq!(g.in_edges(1)[0].weight, 5.0);
    }

    #[test]
    fn delete_missing_edge_names_the_update() {
        let g = fixture();
        let b = UpdateBatch::new(vec![
            UnitUpdate::DeleteEdge { src: 0, dst: 1 },
            UnitUpdate::DeleteEdge { src: 0, dst: 2 },
        ]);
        let err = apply_update_batch(&g, &b).unwrap_err().to_string();
        assert!(err.contains("#1"), "{err}");
        assert!(err.contains("d 0 2"), "{err}");
    }

    #[test]
    fn vertex_delete_drops_incident_edges() {
        let g = fixture();
        let b = UpdateBatch::new(vec![UnitUpdate::DeleteVertex(1)]);
        let (h, d) = apply_update_batch(&g, &b).unwrap();
        assert_eq!(h.edge_count(), 1);
        assert!(!h.is_live(1));
        assert_eq!(h.internal(1), None);
        assert_eq!(d.died, vec![1]);
        assert_eq!(d, diff_summary(&g, &h));
    }

    #[test]
    fn insert_edge_creates_endpoints() {
        let g = fixture();
        let b = UpdateBatch::new(vec![UnitUpdate::InsertEdge {
            src: 7,
            dst: 0,
            weight: 2.0,
        }]);
        let (h, d) = apply_update_batch(&g, &b).unwrap();
        assert_eq!(h.live_count(), 4);
        assert_eq!(d.born, vec![3]);
        assert_eq!(h.external(3), Some(7));
    }

    #[test]
    fn insert_then_delete_cancels() {
        let g = fixture();
        let b = UpdateBatch::new(vec![
            UnitUpdate::InsertEdge {
                src: 0,
                dst: 2,
                weight: 1.0,
            },
            UnitUpdate::DeleteEdge { src: 0, dst: 2 },
        ]);
        let (_, d) = apply_update_batch(&g, &b).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn parses_edge_lists() {
        let text = "# comment\n0 1 2.5\n\n1 2 1 # trailing\n";
        let g = parse_edge_list(text.as_bytes(), true, Path::new("mem")).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.edge_weight(0, 1), Some(2.5));

        let err = parse_edge_list("0 1 2\n".as_bytes(), false, Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("mem:1"), "{err}");
        let err = parse_edge_list("0 1\n0 x\n".as_bytes(), false, Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("mem:2"), "{err}");
        let err = parse_edge_list("0 1 -1\n".as_bytes(), true, Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("positive"), "{err}");

        let g = parse_edge_list("".as_bytes(), false, Path::new("mem")).unwrap();
        assert_eq!(g.live_count(), 0);
    }

    #[test]
    fn update_file_round_trip() {
        let b = UpdateBatch::new(vec![
            UnitUpdate::InsertEdge {
                src: 1,
                dst: 2,
                weight: 3.5,
            },
            UnitUpdate::DeleteEdge { src: 4, dst: 5 },
            UnitUpdate::InsertVertex(9),
            UnitUpdate::DeleteVertex(3),
        ]);
        let mut buf = Vec::new();
        write_updates(&b, &mut buf).unwrap();
        let back = parse_updates(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(b, back);
    }
}
