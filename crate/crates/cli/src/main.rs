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

//! `layph`: preprocessing, update generation, incremental runs and
//! benchmarks for the layered graph engine.

mod bench;
mod exec;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use layered::algo::AlgorithmKind;
use layered::container::{write_container, write_stats, PreprocessStats};
use layered::engine::{ActivationCounter, Mode};
use layered::generators::{exact_updates, UpdateCounts};
use layered::graph::{load_edge_list, load_updates, write_updates, Graph, VertexId};
use layered::layering::{
    build_layered_graph, parse_communities, LayerConfig, DEFAULT_REBUILD_THRESHOLD, DEFAULT_REPLICATION_THRESHOLD,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "layph", version, about = "Layered incremental graph processing")]
struct Cli {
    /// Worker threads for the parallel parts of the engines.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a graph, add replicas and compute shortcuts.
    Preprocess(PreprocessArgs),
    /// Write a random update file for a graph.
    GenUpdates(GenUpdatesArgs),
    /// Apply an update file with one engine and report the cost.
    Run(RunArgs),
    /// Compare engines over several batch sizes.
    Bench(bench::BenchArgs),
    /// Check the bundled nine-vertex example end to end.
    VerifyFixture(VerifyFixtureArgs),
}

#[derive(Args, Clone)]
pub struct GraphArgs {
    /// Edge list, `src dst weight` per line.
    #[arg(long)]
    pub graph: PathBuf,
    /// Read `src dst` lines with unit weights.
    #[arg(long)]
    pub unweighted: bool,
}

impl GraphArgs {
    pub fn load(&self) -> Result<Graph> {
        load_edge_list(&self.graph, !self.unweighted).with_context(|| format!("reading {}", self.graph.display()))
    }
}

#[derive(Args, Clone)]
pub struct AlgoArgs {
    /// sssp, bfs, pagerank or php.
    #[arg(long)]
    pub algo: AlgorithmKind,
    /// External id of the source vertex.
    #[arg(long, default_value_t = 0)]
    pub source: u64,
}

impl AlgoArgs {
    pub fn source_id(&self, g: &Graph) -> Result<VertexId> {
        match g.internal(self.source) {
            Some(v) => Ok(v),
            None if self.algo == AlgorithmKind::PageRank => Ok(0),
            None => bail!("source vertex {} is not in the graph", self.source),
        }
    }

    /// Source recorded in containers; PageRank has none.
    pub fn recorded_source(&self) -> Option<u64> {
        (self.algo != AlgorithmKind::PageRank).then_some(self.source)
    }
}

#[derive(Args, Clone)]
pub struct LayerArgs {
    /// Subgraph size cap; defaults to 0.02% of the vertices within [16, 100000].
    #[arg(long)]
    pub k: Option<usize>,
    /// Replica threshold: a host gets a replica above this many edges into one subgraph.
    #[arg(long, default_value_t = DEFAULT_REPLICATION_THRESHOLD)]
    pub threshold: usize,
    #[arg(long)]
    pub no_replication: bool,
    /// Unit updates after which the partition is rediscovered.
    #[arg(long, default_value_t = DEFAULT_REBUILD_THRESHOLD)]
    pub rebuild_threshold: usize,
    /// Fixed communities, one line of external ids each, instead of clustering.
    #[arg(long)]
    pub communities: Option<PathBuf>,
    #[arg(long, default_value_t = 0x5eed)]
    pub cluster_seed: u64,
}

impl LayerArgs {
    pub fn config(&self, g: &Graph) -> Result<LayerConfig> {
        if self.k.is_some_and(|k| k < 2) {
            bail!("--k must be at least 2");
        }
        let communities = match &self.communities {
            Some(p) => {
                let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                Some(parse_communities(std::io::BufReader::new(f), g, p)?)
            }
            None => None,
        };
        Ok(LayerConfig {
            k: self.k,
            replication: !self.no_replication,
            replication_threshold: self.threshold,
            rebuild_threshold: self.rebuild_threshold,
            seed: self.cluster_seed,
            communities,
        })
    }
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    algo: AlgoArgs,
    #[command(flatten)]
    layers: LayerArgs,
    /// Container path.
    #[arg(long)]
    out: PathBuf,
    /// Statistics path; defaults to the container path plus `.stats.json`.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct GenUpdatesArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Edges to insert.
    #[arg(long, default_value_t = 0)]
    add: usize,
    /// Edges to delete.
    #[arg(long, default_value_t = 0)]
    del: usize,
    /// Vertices to insert.
    #[arg(long, default_value_t = 0)]
    vadd: usize,
    /// Vertices to delete, with all their edges.
    #[arg(long, default_value_t = 0)]
    vdel: usize,
    /// Random edges wired to each added vertex; 0 adds isolated vertices.
    #[arg(long, default_value_t = 0)]
    vadd_degree: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct RunArgs {
    /// restart, plain-inc or layph.
    #[arg(long)]
    pub mode: Mode,
    #[command(flatten)]
    pub graph: GraphArgs,
    /// Update file: `a u v w`, `d u v`, `av v`, `dv v` per line.
    #[arg(long)]
    pub updates: PathBuf,
    #[command(flatten)]
    pub algo: AlgoArgs,
    #[command(flatten)]
    pub layers: LayerArgs,
    /// Preprocessed container to start the layph mode from.
    #[arg(long)]
    pub container: Option<PathBuf>,
    /// Cross-check the result against a restart; exit code 2 on mismatch.
    #[arg(long)]
    pub verify: bool,
    /// Inject a fault before running (`corrupt-shortcut`).
    #[arg(long)]
    pub fault: Option<exec::Fault>,
    /// Frontier-parallel propagation.
    #[arg(long)]
    pub parallel: bool,
    /// Write final states as CSV.
    #[arg(long)]
    pub states: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyFixtureArgs {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            serde_json::to_writer_pretty(&mut w, value)?;
            writeln!(w)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, value)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let g = a.graph.load()?;
    let spec = a.algo.algo.build(a.algo.source_id(&g)?);
    let cfg = a.layers.config(&g)?;
    let t = Instant::now();
    let lg = build_layered_graph(&g, spec.as_ref(), &cfg, &mut ActivationCounter::new());
    let elapsed = t.elapsed().as_secs_f64() * 1e3;
    write_container(
        &a.out,
        &lg,
        spec.as_ref(),
        a.algo.algo.as_str(),
        a.algo.recorded_source(),
    )
    .with_context(|| format!("writing {}", a.out.display()))?;
    let stats = PreprocessStats::new(&lg, spec.as_ref(), a.algo.algo.as_str(), elapsed);
    let stats_path = a.stats.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".stats.json");
        p.into()
    });
    write_stats(&stats_path, &stats)?;
    if stats.degenerate {
        log::warn!("no dense subgraph found; the lower layer is empty");
    }
    log::info!("wrote {} and {}", a.out.display(), stats_path.display());
    Ok(())
}

fn gen_updates(a: &GenUpdatesArgs) -> Result<()> {
    let g = a.graph.load()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let counts = UpdateCounts {
        add: a.add,
        del: a.del,
        vadd: a.vadd,
        vdel: a.vdel,
        vadd_degree: a.vadd_degree,
    };
    let batch = exact_updates(&g, counts, &mut rng)?;
    let mut w = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    write_updates(&batch, &mut w)?;
    w.flush()?;
    Ok(())
}

fn run(a: &RunArgs) -> Result<ExitCode> {
    let g = a.graph.load()?;
    let batch = load_updates(&a.updates).with_context(|| format!("reading {}", a.updates.display()))?;
    let report = exec::run_command(a, &g, &batch)?;
    write_json(a.report.as_deref(), &report)?;
    if report.verified == Some(false) {
        eprintln!("verification failed: states differ from a restart");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(serde::Serialize)]
struct FixtureReport {
    schema_version: u32,
    passed: bool,
    checks: Vec<layered::fixture::FixtureCheck>,
}

fn verify_fixture(a: &VerifyFixtureArgs) -> Result<ExitCode> {
    let checks = layered::fixture::verify()?;
    let report = FixtureReport {
        schema_version: 1,
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    write_json(a.report.as_deref(), &report)?;
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LAYPH_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match &cli.cmd {
        Command::Preprocess(a) => preprocess(a).map(|_| ExitCode::SUCCESS),
        Command::GenUpdates(a) => gen_updates(a).map(|_| ExitCode::SUCCESS),
        Command::Run(a) => run(a),
        Command::Bench(a) => bench::bench(a).map(|_| ExitCode::SUCCESS),
        Command::VerifyFixture(a) => verify_fixture(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
