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

//! The nine-vertex example graph with two dense subgraphs, shipped as text
//! assets so the CLI and the tests read the same files.

use std::path::Path;

use serde::Serialize;

use crate::algo::Sssp;
use crate::engine::{run_from_scratch, ActivationCounter, EngineConfig};
use crate::error::Result;
use crate::graph::{apply_update_batch, parse_edge_list, parse_updates, Graph, UpdateBatch, VertexId};
use crate::incremental::{run_incremental_layered, run_incremental_plain, LayeredState, PlainState};
use crate::layering::{build_layered_graph, parse_communities, LayerConfig, LayeredGraph};
use crate::network::Network;

pub const EDGES: &str = include_str!("../assets/sample/edges.txt");
pub const UPDATES: &str = include_str!("../assets/sample/updates.txt");
pub const COMMUNITIES: &str = include_str!("../assets/sample/communities.txt");

/// SSSP states from v0 before the update.
pub const STATES_BEFORE: [f64; 9] = [0.0, 1.0, 4.0, 1.0, 2.0, 5.0, 6.0, 7.0, 7.0];
/// SSSP states from v0 after the update.
pub const STATES_AFTER: [f64; 9] = [0.0, 1.0, 3.0, 1.0, 4.0, 7.0, 8.0, 9.0, 9.0];

pub fn graph() -> Graph {
    parse_edge_list(EDGES.as_bytes(), true, Path::new("sample/edges.txt")).expect("bundled fixture parses")
}

pub fn updates() -> UpdateBatch {
    parse_updates(UPDATES.as_bytes(), Path::new("sample/updates.txt")).expect("bundled updates parse")
}

/// Communities as internal ids of `g`.
pub fn communities(g: &Graph) -> Vec<Vec<VertexId>> {
    parse_communities(COMMUNITIES.as_bytes(), g, Path::new("sample/communities.txt"))
        .expect("bundled communities parse")
}

/// Layering configuration that pins the two fixture subgraphs.
pub fn layer_config(g: &Graph) -> LayerConfig {
    LayerConfig {
        k: Some(8),
        communities: Some(communities(g)),
        ..LayerConfig::default()
    }
}

/// Outcome of one fixture check.
#[derive(Clone, Debug, Serialize)]
pub struct FixtureCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check<T: PartialEq + std::fmt::Debug>(name: &'static str, got: T, want: T) -> FixtureCheck {
    FixtureCheck {
        name,
        passed: got == want,
        detail: format!("got {got:?}, want {want:?}"),
    }
}

/// Runs the fixture through every engine and checks each published value:
/// converged states before and after the update, the upper layer size, the
/// shortcut row of v0 before and after the update, and agreement of the
/// restart, plain incremental and layered engines.
pub fn verify() -> Result<Vec<FixtureCheck>> {
    let g = graph();
    let batch = updates();
    let spec = Sssp {
        source: g.internal(0).expect("fixture has v0"),
    };
    let cfg = EngineConfig::default();
    let by_ext = |g: &Graph, x: &[f64]| -> Vec<f64> { (0..9).map(|e| x[g.internal(e).unwrap() as usize]).collect() };
    let row = |lg: &LayeredGraph| -> Vec<Option<f64>> {
        let v0 = g.internal(0).unwrap();
        (1..5)
            .map(|e| lg.shortcuts.weight(&lg.part, &spec, v0, g.internal(e).unwrap()))
            .collect()
    };
    let mut out = Vec::new();

    let (st, _) = run_from_scratch(&Network::plain(g.clone()), &spec, &cfg)?;
    out.push(check(
        "restart before update",
        by_ext(&g, &st.x),
        STATES_BEFORE.to_vec(),
    ));

    let lg = build_layered_graph(&g, &spec, &layer_config(&g), &mut ActivationCounter::new());
    let stats = lg.stats(&spec);
    out.push(check(
        "upper layer vertices and links",
        (stats.subgraphs, stats.upper_vertices, stats.upper_links),
        (2, 3, 3),
    ));
    out.push(check(
        "shortcuts of v0",
        row(&lg),
        [1.0, 4.0, 1.0, 2.0].map(Some).to_vec(),
    ));

    let (st, _) = run_from_scratch(&lg.net, &spec, &cfg)?;
    let mut ls = LayeredState::new(lg, &spec, st);
    let lay = run_incremental_layered(&mut ls, &batch, &spec, &cfg, false)?;
    out.push(check(
        "updated shortcuts of v0",
        row(&ls.lg),
        [1.0, 3.0, 1.0, 4.0].map(Some).to_vec(),
    ));
    out.push(check(
        "layered states after update",
        by_ext(&g, &ls.st.x),
        STATES_AFTER.to_vec(),
    ));

    let net = Network::plain(g.clone());
    let (st, _) = run_from_scratch(&net, &spec, &cfg)?;
    let mut ps = PlainState::new(net, &spec, st);
    let plain = run_incremental_plain(&mut ps, &batch, &spec, &cfg, false)?;
    out.push(check(
        "plain incremental states after update",
        by_ext(&g, &ps.st.x),
        STATES_AFTER.to_vec(),
    ));

    let (h, _) = apply_update_batch(&g, &batch)?;
    let (st, _) = run_from_scratch(&Network::plain(h.clone()), &spec, &cfg)?;
    out.push(check("restart after update", by_ext(&h, &st.x), STATES_AFTER.to_vec()));

    let p = &lay.phases;
    let propagation = p.upload.activations + p.upper_iter.activations + p.assign.activations;
    out.push(FixtureCheck {
        name: "layered propagation within plain activations",
        passed: propagation <= plain.total_activations(),
        detail: format!(
            "layered {} (plus {} for shortcut upkeep), plain {}",
            propagation,
            p.layer_update.activations,
            plain.total_activations()
        ),
    });
    Ok(out)
}
