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

//! Binary container for a preprocessed layered graph.
//!
//! Layout: an 8-byte magic, a little-endian `u32` format version, then a
//! sequence of sections `(tag: [u8; 4], len: u64, payload)`:
//!
//! * `META` JSON header ([`ContainerMeta`]),
//! * `PART` partition table,
//! * `PRXY` replica table,
//! * `SCUT` shortcut tables, one per subgraph, as `(entry, target, weight)`
//!   triples,
//! * `END\0` SHA-256 of every preceding byte.
//!
//! The graph itself is not stored. Loading takes the graph the container was
//! built from and refuses it if its fingerprint differs.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algo::Algorithm;
use crate::engine::ActivationCounter;
use crate::error::{Error, Result};
use crate::graph::{Graph, VertexId};
use crate::layering::{DenseSubgraph, LayerConfig, LayerStats, LayeredGraph, Partition};
use crate::network::{Network, ProxyKind, ProxySpec, SubgraphId};
use crate::shortcuts::{rebuild_memo, LocalGraph, ShortcutStore, SubgraphShortcuts};

pub const MAGIC: [u8; 8] = *b"LAYGRAPH";
pub const FORMAT_VERSION: u32 = 1;
pub const STATS_SCHEMA_VERSION: u32 = 1;

const TAG_META: [u8; 4] = *b"META";
const TAG_PART: [u8; 4] = *b"PART";
const TAG_PRXY: [u8; 4] = *b"PRXY";
const TAG_SCUT: [u8; 4] = *b"SCUT";
const TAG_END: [u8; 4] = *b"END\0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainerMeta {
    pub algorithm: String,
    /// External id of the source vertex, for single-source algorithms.
    pub source: Option<u64>,
    pub graph_fingerprint: String,
    pub slots: usize,
    pub cap: usize,
    pub config: LayerConfig,
}

/// Statistics written next to the container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub schema_version: u32,
    pub algorithm: String,
    #[serde(flatten)]
    pub layers: LayerStats,
    pub shortcut_rows: usize,
    pub elapsed_ms: f64,
    /// No subgraph survived: the lower layer is empty.
    pub degenerate: bool,
}

impl PreprocessStats {
    pub fn new(lg: &LayeredGraph, spec: &dyn Algorithm, algorithm: &str, elapsed_ms: f64) -> Self {
        let layers = lg.stats(spec);
        PreprocessStats {
            schema_version: STATS_SCHEMA_VERSION,
            algorithm: algorithm.to_string(),
            shortcut_rows: lg.shortcuts.subgraphs.values().map(|s| s.rows.len()).sum(),
            elapsed_ms,
            degenerate: layers.subgraphs == 0,
            layers,
        }
    }
}

/// Hash of the live vertex set and edge list in external ids.
pub fn graph_fingerprint(g: &Graph) -> String {
    let ext = |v: VertexId| g.external(v).unwrap_or(u64::MAX);
    let mut verts: Vec<u64> = g.vertices().map(ext).collect();
    verts.sort_unstable();
    let mut edges: Vec<(u64, u64, u64)> = g.edges().map(|(a, b, w)| (ext(a), ext(b), w.to_bits())).collect();
    edges.sort_unstable();
    let mut h = Sha256::new();
    h.update([g.is_weighted() as u8]);
    for v in verts {
        h.update(v.to_le_bytes());
    }
    for (a, b, w) in edges {
        h.update(a.to_le_bytes());
        h.update(b.to_le_bytes());
        h.update(w.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Container(msg.into())
}

fn put_ids(buf: &mut Vec<u8>, ids: &[VertexId]) {
    buf.write_u32::<LE>(ids.len() as u32).unwrap();
    for &v in ids {
        buf.write_u32::<LE>(v).unwrap();
    }
}

fn get_ids(r: &mut Cursor<&[u8]>) -> Result<Vec<VertexId>> {
    let n = r.read_u32::<LE>()? as usize;
    if n > r.get_ref().len() / 4 {
        return Err(bad("id list longer than its section"));
    }
    (0..n).map(|_| Ok(r.read_u32::<LE>()?)).collect()
}

fn encode_partition(part: &Partition) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.write_u32::<LE>(part.subgraphs.len() as u32).unwrap();
    put_ids(&mut buf, &part.roots().iter().copied().collect::<Vec<_>>());
    for slot in &part.subgraphs {
        match slot {
            None => buf.push(0),
            Some(sg) => {
                buf.push(1);
                put_ids(&mut buf, &sg.vertices);
                put_ids(&mut buf, &sg.entries);
                put_ids(&mut buf, &sg.exits);
                buf.write_u64::<LE>(sg.internal_edges as u64).unwrap();
            }
        }
    }
    buf
}

fn encode_proxies(net: &Network) -> Vec<u8> {
    let mut buf = Vec::new();
    let live: Vec<_> = net.proxies().filter(|(p, _)| net.is_live(*p)).collect();
    buf.write_u32::<LE>(live.len() as u32).unwrap();
    for (p, info) in live {
        buf.write_u32::<LE>(p).unwrap();
        buf.write_u32::<LE>(info.host).unwrap();
        buf.write_u32::<LE>(info.subgraph).unwrap();
        buf.push(match info.kind {
            ProxyKind::Into => 0,
            ProxyKind::OutOf => 1,
        });
    }
    buf
}

fn encode_shortcuts(store: &ShortcutStore, spec: &dyn Algorithm) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.write_u32::<LE>(store.subgraphs.len() as u32).unwrap();
    for (&id, sc) in &store.subgraphs {
        buf.write_u32::<LE>(id).unwrap();
        let entries: Vec<VertexId> = sc.rows.keys().copied().collect();
        put_ids(&mut buf, &entries);
        let triples: Vec<(VertexId, VertexId, f64)> = entries
            .iter()
            .flat_map(|&u| sc.row_entries(u, spec).map(move |(t, w)| (u, t, w)))
            .collect();
        buf.write_u64::<LE>(triples.len() as u64).unwrap();
        for (u, t, w) in triples {
            buf.write_u32::<LE>(u).unwrap();
            buf.write_u32::<LE>(t).unwrap();
            buf.write_f64::<LE>(w).unwrap();
        }
    }
    buf
}

fn put_section(out: &mut Vec<u8>, tag: [u8; 4], payload: &[u8]) {
    out.extend_from_slice(&tag);
    out.write_u64::<LE>(payload.len() as u64).unwrap();
    out.extend_from_slice(payload);
}

/// Serializes `lg` into container bytes.
pub fn encode(lg: &LayeredGraph, spec: &dyn Algorithm, algorithm: &str, source: Option<u64>) -> Result<Vec<u8>> {
    let meta = ContainerMeta {
        algorithm: algorithm.to_string(),
        source,
        graph_fingerprint: graph_fingerprint(&lg.net.base_graph()),
        slots: lg.net.num_slots(),
        cap: lg.cap,
        config: lg.cfg.clone(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.write_u32::<LE>(FORMAT_VERSION)?;
    put_section(&mut out, TAG_META, &serde_json::to_vec(&meta)?);
    put_section(&mut out, TAG_PART, &encode_partition(&lg.part));
    put_section(&mut out, TAG_PRXY, &encode_proxies(&lg.net));
    put_section(&mut out, TAG_SCUT, &encode_shortcuts(&lg.shortcuts, spec));
    let digest = Sha256::digest(&out);
    put_section(&mut out, TAG_END, &digest);
    Ok(out)
}

pub fn write_container(
    path: impl AsRef<Path>,
    lg: &LayeredGraph,
    spec: &dyn Algorithm,
    algorithm: &str,
    source: Option<u64>,
) -> Result<()> {
    let bytes = encode(lg, spec, algorithm, source)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

fn split_sections(bytes: &[u8]) -> Result<BTreeMap<[u8; 4], &[u8]>> {
    if bytes.len() < 12 || bytes[..8] != MAGIC {
        return Err(bad("not a layered graph container"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let mut sections = BTreeMap::new();
    let mut pos = 12;
    loop {
        if pos + 12 > bytes.len() {
            return Err(bad("truncated section header"));
        }
        let tag: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
        let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().unwrap()) as usize;
        let start = pos + 12;
        if len > bytes.len() - start {
            return Err(bad(format!(
                "section {} overruns the file",
                String::from_utf8_lossy(&tag)
            )));
        }
        let payload = &bytes[start..start + len];
        if tag == TAG_END {
            if Sha256::digest(&bytes[..pos]).as_slice() != payload {
                return Err(bad("checksum mismatch"));
            }
            if start + len != bytes.len() {
                return Err(bad("trailing bytes after the end section"));
            }
            return Ok(sections);
        }
        if sections.insert(tag, payload).is_some() {
            return Err(bad(format!("duplicate section {}", String::from_utf8_lossy(&tag))));
        }
        pos = start + len;
    }
}

fn section<'a>(s: &BTreeMap<[u8; 4], &'a [u8]>, tag: [u8; 4]) -> Result<&'a [u8]> {
    s.get(&tag)
        .copied()
        .ok_or_else(|| bad(format!("missing section {}", String::from_utf8_lossy(&tag))))
}

struct StoredSubgraph {
    vertices: Vec<VertexId>,
    entries: Vec<VertexId>,
    exits: Vec<VertexId>,
    internal_edges: usize,
}

fn decode_partition(payload: &[u8]) -> Result<(Vec<VertexId>, Vec<Option<StoredSubgraph>>)> {
    let mut r = Cursor::new(payload);
    let n = r.read_u32::<LE>()? as usize;
    if n > payload.len() {
        return Err(bad("partition table too long"));
    }
    let roots = get_ids(&mut r)?;
    let mut subs = Vec::with_capacity(n);
    for _ in 0..n {
        subs.push(match r.read_u8()? {
            0 => None,
            1 => Some(StoredSubgraph {
                vertices: get_ids(&mut r)?,
                entries: get_ids(&mut r)?,
                exits: get_ids(&mut r)?,
                internal_edges: r.read_u64::<LE>()? as usize,
            }),
            t => return Err(bad(format!("bad subgraph tag {t}"))),
        });
    }
    Ok((roots, subs))
}

fn decode_proxies(payload: &[u8]) -> Result<Vec<(VertexId, ProxySpec)>> {
    let mut r = Cursor::new(payload);
    let n = r.read_u32::<LE>()? as usize;
    if n > payload.len() / 13 {
        return Err(bad("replica table too long"));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let slot = r.read_u32::<LE>()?;
        let host = r.read_u32::<LE>()?;
        let subgraph = r.read_u32::<LE>()?;
        let kind = match r.read_u8()? {
            0 => ProxyKind::Into,
            1 => ProxyKind::OutOf,
            t => return Err(bad(format!("bad replica kind {t}"))),
        };
        out.push((slot, ProxySpec { host, subgraph, kind }));
    }
    Ok(out)
}

type Triples = Vec<(VertexId, VertexId, f64)>;

fn decode_shortcuts(payload: &[u8]) -> Result<BTreeMap<SubgraphId, (Vec<VertexId>, Triples)>> {
    let mut r = Cursor::new(payload);
    let n = r.read_u32::<LE>()?;
    let mut out = BTreeMap::new();
    for _ in 0..n {
        let id = r.read_u32::<LE>()?;
        let entries = get_ids(&mut r)?;
        let m = r.read_u64::<LE>()? as usize;
        if m > payload.len() / 16 {
            return Err(bad("shortcut table too long"));
        }
        let mut triples = Vec::with_capacity(m);
        for _ in 0..m {
            triples.push((r.read_u32::<LE>()?, r.read_u32::<LE>()?, r.read_f64::<LE>()?));
        }
        out.insert(id, (entries, triples));
    }
    Ok(out)
}

/// Reads container bytes back into a layered graph over `g`.
pub fn decode(bytes: &[u8], g: &Graph, spec: &dyn Algorithm) -> Result<(LayeredGraph, ContainerMeta)> {
    let sections = split_sections(bytes)?;
    let meta: ContainerMeta = serde_json::from_slice(section(&sections, TAG_META)?)?;
    if meta.graph_fingerprint != graph_fingerprint(g) {
        return Err(bad("container was built for a different graph"));
    }
    let (roots, stored) = decode_partition(section(&sections, TAG_PART)?)?;
    let proxies = decode_proxies(section(&sections, TAG_PRXY)?)?;
    let rows = decode_shortcuts(section(&sections, TAG_SCUT)?)?;

    let mut member: Vec<Option<SubgraphId>> = vec![None; meta.slots];
    for (id, sg) in stored.iter().enumerate() {
        for &v in sg.iter().flat_map(|s| &s.vertices) {
            *member
                .get_mut(v as usize)
                .ok_or_else(|| bad("member id out of range"))? = Some(id as SubgraphId);
        }
    }
    let specs: Vec<ProxySpec> = proxies.iter().map(|p| p.1).collect();
    let net = Network::build(g.clone(), &specs, &|v| member.get(v as usize).copied().flatten());
    let rebuilt: Vec<VertexId> = net.proxies().map(|p| p.0).collect();
    if rebuilt != proxies.iter().map(|p| p.0).collect::<Vec<_>>() || net.num_slots() != meta.slots {
        return Err(bad("replica table does not match the graph"));
    }

    let mut part = Partition::with_roots(net.num_slots(), roots.into_iter().collect());
    for sg in &stored {
        match sg {
            Some(s) => {
                part.add_subgraph(&net, s.vertices.clone());
            }
            None => part.subgraphs.push(None),
        }
    }
    for id in 0..part.subgraphs.len() as SubgraphId {
        part.recompute(&net, id);
    }
    for (sg, s) in part.subgraphs.iter().zip(&stored) {
        let same = match (sg, s) {
            (None, None) => true,
            (Some(a), Some(b)) => a.entries == b.entries && a.exits == b.exits && a.internal_edges == b.internal_edges,
            _ => false,
        };
        if !same {
            return Err(bad("partition roles do not match the graph"));
        }
    }

    let mut counter = ActivationCounter::new();
    let mut store = ShortcutStore::default();
    let bottom = spec.bottom();
    for sg in part.live_subgraphs() {
        let (entries, triples) = rows
            .get(&sg.id)
            .ok_or_else(|| bad(format!("no shortcut table for subgraph {}", sg.id)))?;
        store.subgraphs.insert(
            sg.id,
            load_subgraph(&net, &part, sg, spec, entries, triples, bottom, &mut counter)?,
        );
    }
    if counter.edges > 0 {
        log::warn!("recomputed shortcut rows cost {} activations", counter.edges);
    }
    let lg = LayeredGraph {
        net,
        part,
        shortcuts: store,
        cfg: meta.config.clone(),
        cap: meta.cap,
        updates_since_rebuild: 0,
    };
    Ok((lg, meta))
}

#[allow(clippy::too_many_arguments)]
fn load_subgraph(
    net: &Network,
    part: &Partition,
    sg: &DenseSubgraph,
    spec: &dyn Algorithm,
    entries: &[VertexId],
    triples: &Triples,
    bottom: f64,
    counter: &mut ActivationCounter,
) -> Result<SubgraphShortcuts> {
    let lg = LocalGraph::build(net, part, sg, spec);
    let mut vals: BTreeMap<VertexId, Vec<f64>> = BTreeMap::new();
    for &u in entries {
        if !part.membership(u).entry || part.subgraph_of(u) != Some(sg.id) {
            return Err(bad(format!("shortcut row for non-entry {u}")));
        }
        vals.insert(u, vec![bottom; lg.len()]);
    }
    for &(u, t, w) in triples {
        let row = vals
            .get_mut(&u)
            .ok_or_else(|| bad(format!("triple for unknown row {u}")))?;
        let l = lg
            .local(t)
            .ok_or_else(|| bad(format!("shortcut target {t} outside subgraph {}", sg.id)))?;
        row[l as usize] = w;
    }
    let rows = vals
        .into_iter()
        .map(|(u, val)| (u, rebuild_memo(&lg, spec, lg.local(u).unwrap(), val, counter)))
        .collect();
    Ok(SubgraphShortcuts { lg, rows })
}

pub fn read_container(
    path: impl AsRef<Path>,
    g: &Graph,
    spec: &dyn Algorithm,
) -> Result<(LayeredGraph, ContainerMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes, g, spec)
}

pub fn write_stats(path: impl AsRef<Path>, stats: &PreprocessStats) -> Result<()> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(f, stats)?;
    Ok(())
}
