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

//! Engine comparison over a sweep of batch sizes.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use layered::engine::{EngineConfig, Mode};
use layered::generators::{exact_updates, planted_partition, UpdateCounts};
use layered::graph::Graph;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::exec::{execute, prepare, verify};
use crate::{AlgoArgs, LayerArgs};

pub const BENCH_SCHEMA_VERSION: u32 = 1;

#[derive(Args)]
pub struct BenchArgs {
    /// Edge list to benchmark on.
    #[arg(long, required_unless_present = "planted", conflicts_with = "planted")]
    graph: Option<PathBuf>,
    #[arg(long)]
    unweighted: bool,
    /// Generate a planted-partition graph instead: `n,blocks,p_in,p_out`.
    #[arg(long)]
    planted: Option<String>,
    #[command(flatten)]
    algo: AlgoArgs,
    #[command(flatten)]
    layers: LayerArgs,
    /// Batch sizes; each batch is half insertions, half deletions.
    #[arg(long, value_delimiter = ',', default_values_t = [10_000usize])]
    batch_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values = ["restart", "plain-inc", "layph"])]
    modes: Vec<Mode>,
    /// Seeds the update batches and the generated graph.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    parallel: bool,
    /// Cross-check every run against a restart.
    #[arg(long)]
    verify: bool,
    /// Directory for `bench.csv` and `bench_config.json`; CSV goes to stdout
    /// when absent.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// The recorded parameters of one benchmark.
#[derive(Debug, Serialize)]
pub struct BenchConfig {
    pub schema_version: u32,
    pub dataset: String,
    pub algorithm: String,
    pub source: Option<u64>,
    pub k: Option<usize>,
    pub replication_threshold: usize,
    pub batch_sizes: Vec<usize>,
    pub modes: Vec<Mode>,
    pub seed: u64,
    pub out_dir: Option<String>,
}

impl BenchConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            bail!("batch sizes must be positive");
        }
        if self.k.is_some_and(|k| k < 2) {
            bail!("--k must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct BenchRow {
    pub schema_version: u32,
    pub mode: Mode,
    pub algo: String,
    pub batch_size: usize,
    pub activations: u64,
    pub vertex_updates: u64,
    pub layer_update_ms: f64,
    pub upload_ms: f64,
    pub upper_iter_ms: f64,
    pub assign_ms: f64,
    pub global_ms: f64,
    pub total_ms: f64,
    pub verified: Option<bool>,
}

fn planted(spec: &str, weighted: bool, seed: u64) -> Result<Graph> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let [n, blocks, p_in, p_out] = parts[..] else {
        bail!("--planted expects n,blocks,p_in,p_out");
    };
    let n: usize = n.parse().context("planted n")?;
    let blocks: usize = blocks.parse().context("planted blocks")?;
    let p_in: f64 = p_in.parse().context("planted p_in")?;
    let p_out: f64 = p_out.parse().context("planted p_out")?;
    if n == 0 || blocks == 0 || blocks > n {
        bail!("planted graph needs 0 < blocks <= n");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(planted_partition(n, blocks, p_in, p_out, weighted, &mut rng).0)
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        schema_version: BENCH_SCHEMA_VERSION,
        dataset: match (&a.graph, &a.planted) {
            (Some(p), _) => p.display().to_string(),
            (None, Some(s)) => format!("planted:{s}"),
            (None, None) => bail!("either --graph or --planted is required"),
        },
        algorithm: a.algo.algo.as_str().to_string(),
        source: a.algo.recorded_source(),
        k: a.layers.k,
        replication_threshold: a.layers.threshold,
        batch_sizes: a.batch_sizes.clone(),
        modes: a.modes.clone(),
        seed: a.seed,
        out_dir: a.out_dir.as_ref().map(|p| p.display().to_string()),
    };
    cfg.validate()?;
    let g = match (&a.graph, &a.planted) {
        (Some(p), _) => load(p, !a.unweighted)?,
        (None, Some(s)) => planted(s, !a.unweighted, a.seed)?,
        (None, None) => unreachable!(),
    };
    let kind = a.algo.algo;
    let spec = kind.build(a.algo.source_id(&g)?);
    let spec = spec.as_ref();
    let ecfg = EngineConfig {
        parallel: a.parallel,
        ..EngineConfig::default()
    };
    let layer_cfg = a.layers.config(&g)?;

    let batches = a
        .batch_sizes
        .iter()
        .map(|&b| {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(b as u64));
            let adds = b / 2;
            let counts = UpdateCounts {
                add: adds,
                del: b - adds,
                ..UpdateCounts::default()
            };
            exact_updates(&g, counts, &mut rng).with_context(|| format!("batch size {b}"))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &mode in &a.modes {
        let prepared = prepare(mode, &g, spec, &layer_cfg, None, &a.algo, &ecfg)?;
        for (&size, batch) in a.batch_sizes.iter().zip(&batches) {
            let exec = execute(prepared.clone(), batch, spec, &ecfg)?;
            let verified = if a.verify {
                Some(verify(&g, batch, kind, spec, &exec.states)?)
            } else {
                None
            };
            let p = &exec.phases;
            log::info!("{mode:?} batch {size}: {} activations", p.total_activations());
            rows.push(BenchRow {
                schema_version: BENCH_SCHEMA_VERSION,
                mode,
                algo: kind.as_str().to_string(),
                batch_size: size,
                activations: p.total_activations(),
                vertex_updates: exec.vertex_updates,
                layer_update_ms: p.layer_update.ms,
                upload_ms: p.upload.ms,
                upper_iter_ms: p.upper_iter.ms,
                assign_ms: p.assign.ms,
                global_ms: p.global.ms,
                total_ms: p.total_ms(),
                verified,
            });
        }
    }

    match &a.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let mut w = csv::Writer::from_path(dir.join("bench.csv"))?;
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
            let f = std::fs::File::create(dir.join("bench_config.json"))?;
            serde_json::to_writer_pretty(f, &cfg)?;
        }
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
    }
    if rows.iter().any(|r| r.verified == Some(false)) {
        bail!("some runs differ from a restart");
    }
    Ok(())
}

fn load(path: &std::path::Path, weighted: bool) -> Result<Graph> {
    layered::graph::load_edge_list(path, weighted).with_context(|| format!("reading {}", path.display()))
}
