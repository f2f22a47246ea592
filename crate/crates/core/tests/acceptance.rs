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

//! Acceptance run: one line per criterion with its measured values.
//!
//! The process exits successfully even when a criterion fails so that the
//! rest of the test suite still runs; set `ACCEPTANCE_STRICT=1` to turn any
//! failure into a non-zero exit status.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{
    batches_compose, containment_experiment, empty_batch_is_free, layered_vs_restart, mutate_inside,
    power_iteration_pagerank, queue_bfs, random_case, random_subgraph, structural_violations, subgraph_shortcuts,
};
use layered::algo::{Aggregation, AlgorithmKind, Bfs, PageRank};
use layered::engine::{external_states, run_from_scratch, ActivationCounter, EngineConfig};
use layered::fixture;
use layered::generators::random_graph;
use layered::layering::{build_layered_graph, LayerConfig};
use layered::network::Network;
use layered::shortcuts::{update_subgraph, verify_shortcut_equivalence, LocalGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn row_limit(kind: AlgorithmKind) -> f64 {
    match kind.aggregation() {
        Aggregation::Min => 0.0,
        Aggregation::Sum => 1e-6,
    }
}

fn fixture_exactness() -> Verdict {
    match fixture::verify() {
        Ok(checks) => {
            let failed: Vec<String> = checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| format!("{}: {}", c.name, c.detail))
                .collect();
            Verdict {
                passed: failed.is_empty(),
                detail: if failed.is_empty() {
                    format!("{} checks, final states {:?}", checks.len(), fixture::STATES_AFTER)
                } else {
                    failed.join("; ")
                },
            }
        }
        Err(e) => Verdict {
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn oracle_equivalence() -> Verdict {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let case = random_case(seed, true);
        for kind in AlgorithmKind::ALL {
            match layered_vs_restart(&case, kind) {
                Ok(d) => worst = worst.max(d),
                Err(e) => failures.push(format!("seed {seed} {kind}: {e}")),
            }
        }
    }
    Verdict {
        passed: failures.is_empty(),
        detail: format!(
            "400 runs, {} mismatches, worst sum difference {worst:.2e} {}",
            failures.len(),
            failures.join("; ")
        ),
    }
}

fn shortcut_equivalence() -> Verdict {
    let mut worst = [0.0f64; 2];
    let mut failures = Vec::new();
    for seed in 0..200 {
        let case = random_subgraph(seed);
        for kind in AlgorithmKind::ALL {
            let spec = kind.build(case.source);
            let (_, _, sc) = subgraph_shortcuts(&case, spec.as_ref(), seed % 2 == 1);
            let d = verify_shortcut_equivalence(&sc, spec.as_ref(), 100, seed);
            let slot = (kind.aggregation() == Aggregation::Sum) as usize;
            worst[slot] = worst[slot].max(d);
            if d > row_limit(kind) {
                failures.push(format!("subgraph {seed} {kind}: {d:e}"));
            }
        }
    }
    Verdict {
        passed: failures.is_empty(),
        detail: format!(
            "200 subgraphs x 100 vectors x 4 algorithms, worst min {:.1e} sum {:.1e} {}",
            worst[0],
            worst[1],
            failures.join("; ")
        ),
    }
}

fn shortcut_maintenance() -> Verdict {
    let mut worst = [0.0f64; 2];
    let mut failures = Vec::new();
    for seed in 0..100 {
        let case = random_subgraph(1000 + seed);
        let next = mutate_inside(&case, seed);
        for kind in AlgorithmKind::ALL {
            let spec = kind.build(case.source);
            let spec = spec.as_ref();
            let (_, _, old) = subgraph_shortcuts(&case, spec, false);
            let (net, part, want) = subgraph_shortcuts(&next, spec, false);
            let lg = LocalGraph::build(&net, &part, part.subgraph(0).unwrap(), spec);
            let mut got = update_subgraph(&old, lg, spec, &mut ActivationCounter::new());
            got.ensure_all_rows(spec, &mut ActivationCounter::new());
            if got.rows.keys().ne(want.rows.keys()) {
                failures.push(format!("pair {seed} {kind}: entry sets differ"));
                continue;
            }
            let slot = (kind.aggregation() == Aggregation::Sum) as usize;
            for (u, row) in &want.rows {
                for (a, b) in got.rows[u].val.iter().zip(&row.val) {
                    let d = if a == b { 0.0 } else { (a - b).abs() };
                    worst[slot] = worst[slot].max(d);
                    if d > row_limit(kind) {
                        failures.push(format!("pair {seed} {kind} entry {u}: {a} vs {b}"));
                    }
                }
            }
        }
    }
    Verdict {
        passed: failures.is_empty(),
        detail: format!(
            "100 pairs x 4 algorithms, worst min {:.1e} sum {:.1e} {}",
            worst[0],
            worst[1],
            failures.join("; ")
        ),
    }
}

fn containment_and_reduction() -> Verdict {
    let mut passed = true;
    let mut parts = Vec::new();
    for kind in [AlgorithmKind::Sssp, AlgorithmKind::PageRank] {
        let c = containment_experiment(0, kind);
        let contained = c.upload_violations == 0 && c.upper_violations == 0;
        let fewer = c.layered < c.plain;
        passed &= contained && fewer;
        parts.push(format!(
            "{kind}: {} subgraphs, stray upload/upper activations {}/{}, layph {} vs plain-inc {} (ratio {:.3}{})",
            c.subgraphs,
            c.upload_violations,
            c.upper_violations,
            c.layered,
            c.plain,
            c.layered as f64 / c.plain as f64,
            if fewer { "" } else { ", not fewer" }
        ));
    }
    Verdict {
        passed,
        detail: parts.join("; "),
    }
}

fn model_validity() -> Verdict {
    let mut worst_l1 = 0.0f64;
    let mut bfs_mismatch = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.gen_range(2000..=6000);
        let g = random_graph(1000, m, true, &mut rng);
        let net = Network::plain(g.clone());
        let (st, _) = run_from_scratch(&net, &PageRank::default(), &EngineConfig::default()).unwrap();
        let got = external_states(&net, &st);
        let l1: f64 = got
            .iter()
            .zip(power_iteration_pagerank(&g))
            .map(|(a, b)| (a.1 - b.1).abs())
            .sum();
        worst_l1 = worst_l1.max(l1);
        let (st, _) = run_from_scratch(&net, &Bfs { source: 0 }, &EngineConfig::default()).unwrap();
        if external_states(&net, &st) != queue_bfs(&g, 0) {
            bfs_mismatch += 1;
        }
    }
    Verdict {
        passed: worst_l1 <= 1e-5 && bfs_mismatch == 0,
        detail: format!("20 graphs, worst PageRank L1 {worst_l1:.2e}, BFS mismatches {bfs_mismatch}"),
    }
}

fn structural_invariants() -> Verdict {
    let mut failures = Vec::new();
    let (mut subgraphs, mut proxies) = (0, 0);
    for seed in 0..20 {
        let case = random_case(seed, false);
        let cfg = LayerConfig {
            k: Some(case.k),
            ..LayerConfig::default()
        };
        for kind in AlgorithmKind::ALL {
            let spec = kind.build(case.g.internal(0).unwrap());
            let lg = build_layered_graph(&case.g, spec.as_ref(), &cfg, &mut ActivationCounter::new());
            subgraphs += lg.part.live_count();
            proxies += lg.net.proxy_count();
            for v in structural_violations(&case.g, &lg, kind) {
                failures.push(format!("graph {seed} {kind}: {v}"));
            }
        }
    }
    Verdict {
        passed: failures.is_empty(),
        detail: format!(
            "20 graphs x 4 algorithms, {subgraphs} subgraphs, {proxies} replicas, {} violations {}",
            failures.len(),
            failures.join("; ")
        ),
    }
}

fn composition_and_idempotence() -> Verdict {
    let mut failures = Vec::new();
    for seed in 0..20 {
        let case = random_case(500 + seed, true);
        for kind in AlgorithmKind::ALL {
            if let Err(e) = empty_batch_is_free(&case, kind) {
                failures.push(format!("seed {seed} {kind} empty batch: {e}"));
            }
            if let Err(e) = batches_compose(&case, kind) {
                failures.push(format!("seed {seed} {kind} composition: {e}"));
            }
        }
    }
    Verdict {
        passed: failures.is_empty(),
        detail: format!(
            "20 seeds x 4 algorithms, {} failures {}",
            failures.len(),
            failures.join("; ")
        ),
    }
}

fn main() -> ExitCode {
    type Check = fn() -> Verdict;
    let criteria: [(&str, Duration, Check); 8] = [
        ("fixture exactness", Duration::from_secs(1), fixture_exactness),
        ("oracle equivalence", Duration::from_secs(300), oracle_equivalence),
        ("shortcut equivalence", Duration::from_secs(60), shortcut_equivalence),
        (
            "incremental shortcut maintenance",
            Duration::from_secs(60),
            shortcut_maintenance,
        ),
        (
            "activation containment and reduction",
            Duration::from_secs(120),
            containment_and_reduction,
        ),
        ("model validity", Duration::from_secs(60), model_validity),
        ("structural invariants", Duration::from_secs(60), structural_invariants),
        (
            "composition and idempotence",
            Duration::from_secs(60),
            composition_and_idempotence,
        ),
    ];
    let mut passed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = check();
        let elapsed = t.elapsed();
        let ok = v.passed && elapsed <= *budget;
        passed += ok as usize;
        println!(
            "criterion {} {} {name}: {} [{:.2} s of {} s]",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            v.detail.trim_end(),
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {passed} of {} criteria pass", criteria.len());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < criteria.len() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
