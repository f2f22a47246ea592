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

//! Engine preparation and execution shared by `run` and `bench`.

use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use layered::algo::{Aggregation, Algorithm, AlgorithmKind};
use layered::container::read_container;
use layered::engine::{
    external_states, max_state_difference, run_from_scratch, run_from_scratch_with, states_digest, ActivationCounter,
    EngineConfig, Mode, PhaseStat, Phases, RunReport,
};
use layered::graph::{apply_update_batch, Graph, UpdateBatch};
use layered::incremental::{run_incremental_layered, run_incremental_plain, LayeredState, PlainState};
use layered::layering::{build_layered_graph, LayerConfig, LayeredGraph};
use layered::network::Network;

use crate::{AlgoArgs, RunArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Perturb every stored shortcut weight.
    CorruptShortcut,
}

/// Converged starting point of one engine.
#[derive(Clone)]
pub enum Prepared {
    Restart(Graph),
    Plain(Box<PlainState>),
    Layph(Box<LayeredState>),
}

/// Result of applying one batch.
pub struct Execution {
    pub phases: Phases,
    pub vertex_updates: u64,
    pub states: Vec<(u64, f64)>,
}

/// Builds the engine state for `mode`, including the converged run on `g`
/// that incremental modes start from. `container` replaces preprocessing
/// for the layph mode.
pub fn prepare(
    mode: Mode,
    g: &Graph,
    spec: &dyn Algorithm,
    layer_cfg: &LayerConfig,
    container: Option<&Path>,
    algo: &AlgoArgs,
    ecfg: &EngineConfig,
) -> Result<Prepared> {
    Ok(match mode {
        Mode::Restart => Prepared::Restart(g.clone()),
        Mode::PlainInc => {
            let net = Network::plain(g.clone());
            let (st, _) = run_from_scratch(&net, spec, ecfg)?;
            Prepared::Plain(Box::new(PlainState::new(net, spec, st)))
        }
        Mode::Layph => {
            let lg = match container {
                Some(p) => {
                    let (lg, meta) = read_container(p, g, spec).with_context(|| format!("loading {}", p.display()))?;
                    if meta.algorithm != algo.algo.as_str() || meta.source != algo.recorded_source() {
                        bail!(
                            "container was built for {} with source {:?}, not {} with source {:?}",
                            meta.algorithm,
                            meta.source,
                            algo.algo,
                            algo.recorded_source()
                        );
                    }
                    lg
                }
                None => build_layered_graph(g, spec, layer_cfg, &mut ActivationCounter::new()),
            };
            let (st, _) = run_from_scratch(&lg.net, spec, ecfg)?;
            Prepared::Layph(Box::new(LayeredState::new(lg, spec, st)))
        }
    })
}

pub fn execute(
    prepared: Prepared,
    batch: &UpdateBatch,
    spec: &dyn Algorithm,
    ecfg: &EngineConfig,
) -> Result<Execution> {
    match prepared {
        Prepared::Restart(g) => {
            let t = Instant::now();
            let (h, _) = apply_update_batch(&g, batch)?;
            let net = Network::plain(h);
            let mut counter = ActivationCounter::new();
            let st = run_from_scratch_with(&net, spec, ecfg, &mut counter)?;
            let phases = Phases {
                global: PhaseStat {
                    ms: t.elapsed().as_secs_f64() * 1e3,
                    activations: counter.edges,
                },
                ..Default::default()
            };
            Ok(Execution {
                phases,
                vertex_updates: counter.vertex_updates,
                states: external_states(&net, &st),
            })
        }
        Prepared::Plain(mut ps) => {
            let out = run_incremental_plain(&mut ps, batch, spec, ecfg, false)?;
            Ok(Execution {
                phases: out.phases,
                vertex_updates: out.counters.vertex_updates(),
                states: external_states(&ps.net, &ps.st),
            })
        }
        Prepared::Layph(mut ls) => {
            let out = run_incremental_layered(&mut ls, batch, spec, ecfg, false)?;
            Ok(Execution {
                phases: out.phases,
                vertex_updates: out.counters.vertex_updates(),
                states: external_states(&ls.lg.net, &ls.st),
            })
        }
    }
}

/// Largest per-vertex difference a correct engine may show.
pub fn tolerance(kind: AlgorithmKind) -> f64 {
    match kind.aggregation() {
        Aggregation::Min => 1e-9,
        Aggregation::Sum => 1e-5,
    }
}

/// Compares `states` with a restart on `g` after `batch`.
pub fn verify(
    g: &Graph,
    batch: &UpdateBatch,
    kind: AlgorithmKind,
    spec: &dyn Algorithm,
    states: &[(u64, f64)],
) -> Result<bool> {
    let (h, _) = apply_update_batch(g, batch)?;
    let net = Network::plain(h);
    let (st, _) = run_from_scratch(&net, spec, &EngineConfig::default())?;
    let want = external_states(&net, &st);
    Ok(match max_state_difference(states, &want) {
        Some(d) => {
            log::info!("largest difference from restart: {d:e}");
            d <= tolerance(kind)
        }
        None => {
            log::info!("vertex sets differ from restart");
            false
        }
    })
}

/// Moves every stored shortcut weight away from its true value. Returns how
/// many weights were changed.
pub fn corrupt_shortcuts(lg: &mut LayeredGraph, spec: &dyn Algorithm) -> usize {
    let bottom = spec.bottom();
    let mut changed = 0;
    for sc in lg.shortcuts.subgraphs.values_mut() {
        for (u, row) in sc.rows.iter_mut() {
            let own = sc.lg.local(*u).map(|l| l as usize);
            for (i, w) in row.val.iter_mut().enumerate() {
                if *w == bottom || Some(i) == own {
                    continue;
                }
                *w = match spec.aggregation() {
                    Aggregation::Min => *w + 1.0,
                    Aggregation::Sum => *w * 1.5,
                };
                changed += 1;
            }
        }
    }
    changed
}

fn write_states(path: &Path, states: &[(u64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["vertex", "state"])?;
    for (v, x) in states {
        w.write_record([v.to_string(), x.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_command(a: &RunArgs, g: &Graph, batch: &UpdateBatch) -> Result<RunReport> {
    let kind = a.algo.algo;
    let spec = kind.build(a.algo.source_id(g)?);
    let spec = spec.as_ref();
    let ecfg = EngineConfig {
        parallel: a.parallel,
        ..EngineConfig::default()
    };
    let layer_cfg = a.layers.config(g)?;
    let mut prepared = prepare(a.mode, g, spec, &layer_cfg, a.container.as_deref(), &a.algo, &ecfg)?;
    if let Some(Fault::CorruptShortcut) = a.fault {
        match &mut prepared {
            Prepared::Layph(ls) => {
                let n = corrupt_shortcuts(&mut ls.lg, spec);
                log::warn!("fault injection: corrupted {n} shortcut weights");
            }
            _ => bail!("--fault corrupt-shortcut needs --mode layph"),
        }
    }
    let exec = execute(prepared, batch, spec, &ecfg)?;
    let mut report = RunReport::new(
        kind.as_str(),
        a.mode,
        &exec.phases,
        exec.vertex_updates,
        states_digest(&exec.states),
    );
    if let Some(p) = &a.states {
        write_states(p, &exec.states)?;
        report.states_path = Some(p.display().to_string());
    }
    if a.verify {
        report.verified = Some(verify(g, batch, kind, spec, &exec.states)?);
    }
    Ok(report)
}
