//! Experiment orchestration: one run per seed, rows streamed to a sink, and
//! a per-run summary written next to them.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hierlearn_core::byzantine_learning::{run_byzantine_learning, ByzantineOptions};
use hierlearn_core::dropout_learning::{run_learning, LearningOptions};
use hierlearn_core::faults::{make_schedule, ByzantinePlan, DropSchedule};
use hierlearn_core::oracle::RoundMatrices;
use hierlearn_core::pushsum::run_consensus;
use hierlearn_core::rng::SeedStreams;
use hierlearn_core::signals::SignalModel;
use hierlearn_core::topology::DEFAULT_ENUMERATION_CAP;
use serde::Serialize;

use crate::config::{ExperimentConfig, FaultModel, Format};
use crate::sink::Sink;

/// Overrides the output directory when `--out` is not given.
pub const OUT_DIR_ENV: &str = "HIERLEARN_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Consensus,
    LearnDrop,
    LearnByz,
}

impl Mode {
    pub fn stem(self) -> &'static str {
        match self {
            Self::Consensus => "consensus",
            Self::LearnDrop => "learn_drop",
            Self::LearnByz => "learn_byz",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub rounds: usize,
    pub format: Format,
    pub out_dir: PathBuf,
    pub dump_matrices: bool,
}

impl RunOptions {
    /// Output directory: the explicit flag, then the environment, then the
    /// config, then `out`.
    pub fn resolve_out_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
        flag.or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .or_else(|| config.run.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            rounds: config.run.rounds,
            format: config.run.format,
            out_dir: Self::resolve_out_dir(None, config),
            dump_matrices: false,
        }
    }

    pub fn rows_path(&self, mode: Mode, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{}_seed{seed}.{}", mode.stem(), self.format.extension()))
    }

    pub fn summary_path(&self, mode: Mode, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{}_seed{seed}_summary.json", mode.stem()))
    }
}

#[derive(Serialize)]
struct ConsensusRow {
    seed: u64,
    round: usize,
    agent: usize,
    coord: usize,
    estimate: f64,
    error: f64,
    fused: bool,
    mass_residual: f64,
    value_residual: f64,
}

#[derive(Serialize)]
struct LearnRow {
    seed: u64,
    round: usize,
    agent: usize,
    theta: usize,
    mu: f64,
    log_ratio: f64,
    bound: Option<f64>,
    consensus_error: f64,
}

#[derive(Serialize)]
struct ByzRow {
    seed: u64,
    round: usize,
    agent: usize,
    theta_a: usize,
    theta_b: usize,
    r: f64,
    r_over_t2: f64,
    decoded: Option<usize>,
    faulty: bool,
    in_c: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RunSummary {
    Consensus {
        seed: u64,
        rounds: usize,
        average: Vec<f64>,
        final_max_error: f64,
        max_mass_residual: f64,
        max_value_residual: f64,
    },
    LearnDrop {
        seed: u64,
        rounds: usize,
        final_beliefs: Vec<Vec<f64>>,
        settle_round: Option<usize>,
        bound_violated: bool,
        drop_rate: f64,
    },
    LearnByz {
        seed: u64,
        rounds: usize,
        decoded: Vec<Option<usize>>,
        stable_from: Vec<Option<usize>>,
        faulty: Vec<bool>,
        /// Per agent, mean of `min_θ r(θ*,θ)/t²` over the final fifth of
        /// the run.
        growth_mean: Vec<f64>,
    },
}

/// Drop schedule of one seed: sampled for `drops`, reliable otherwise.
pub fn drop_schedule(config: &ExperimentConfig, rounds: usize, seeds: &SeedStreams) -> Result<DropSchedule> {
    let topo = &config.topology;
    Ok(match &config.faults {
        FaultModel::Drops { prob, placement } => make_schedule(topo, *prob, rounds, *placement, &mut seeds.drops())?,
        _ => DropSchedule::reliable(topo.links().len(), rounds, topo.window_b()),
    })
}

fn require_model(config: &ExperimentConfig) -> Result<&SignalModel> {
    match &config.model {
        Some(m) => Ok(m),
        None => bail!("this mode needs a [signals] section"),
    }
}

/// Writes every round matrix to `matrices_seed{N}.txt`.
pub fn dump_matrices(config: &ExperimentConfig, schedule: &DropSchedule, path: &Path) -> Result<()> {
    let mats = RoundMatrices::new(&config.topology, schedule, schedule.horizon())?;
    let mut text = String::new();
    for t in 1..=schedule.horizon() {
        let fused = mats.system().is_fusion_round(t);
        text.push_str(&format!("# round {t}{}\n{}\n", if fused { " fused" } else { "" }, mats.matrix(t)));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs one seed of `mode` and writes its rows and summary under
/// `opts.out_dir`.
pub fn run_experiment(config: &ExperimentConfig, mode: Mode, seed: u64, opts: &RunOptions) -> Result<RunSummary> {
    fs::create_dir_all(&opts.out_dir).with_context(|| format!("creating {}", opts.out_dir.display()))?;
    let seeds = SeedStreams::new(seed);
    let rounds = opts.rounds;
    let mut sink = Sink::create(&opts.rows_path(mode, seed), opts.format)?;
    let topo = &config.topology;

    let summary = match mode {
        Mode::Consensus => {
            let schedule = drop_schedule(config, rounds, &seeds)?;
            if opts.dump_matrices {
                dump_matrices(config, &schedule, &opts.out_dir.join(format!("matrices_seed{seed}.txt")))?;
            }
            let trace = run_consensus(topo, config.run.inputs.clone(), &schedule, rounds)?;
            for r in &trace.rounds {
                for (agent, est) in r.estimates.iter().enumerate() {
                    for (coord, &estimate) in est.iter().enumerate() {
                        sink.write(&ConsensusRow {
                            seed,
                            round: r.round,
                            agent,
                            coord,
                            estimate,
                            error: r.errors[agent],
                            fused: r.fused,
                            mass_residual: r.mass_residual,
                            value_residual: r.value_residual,
                        })?;
                    }
                }
            }
            RunSummary::Consensus {
                seed,
                rounds,
                average: trace.average.clone(),
                final_max_error: trace.max_error(rounds),
                max_mass_residual: trace.rounds.iter().map(|r| r.mass_residual).fold(0.0, f64::max),
                max_value_residual: trace.rounds.iter().map(|r| r.value_residual).fold(0.0, f64::max),
            }
        }
        Mode::LearnDrop => {
            let model = require_model(config)?;
            let schedule = drop_schedule(config, rounds, &seeds)?;
            if opts.dump_matrices {
                dump_matrices(config, &schedule, &opts.out_dir.join(format!("matrices_seed{seed}.txt")))?;
            }
            let options = LearningOptions { delta: config.run.delta, ..LearningOptions::default() };
            let trace = run_learning(topo, model, &schedule, rounds, &seeds, options)?;
            for r in &trace.rounds {
                for (agent, mu) in r.mu.iter().enumerate() {
                    for (theta, &p) in mu.iter().enumerate() {
                        sink.write(&LearnRow {
                            seed,
                            round: r.round,
                            agent,
                            theta,
                            mu: p,
                            log_ratio: r.log_ratios[agent][theta],
                            bound: r.bounds[theta].map(|b| b.simplified.min(b.exact)),
                            consensus_error: r.consensus_error,
                        })?;
                    }
                }
            }
            RunSummary::LearnDrop {
                seed,
                rounds,
                final_beliefs: trace.final_states.iter().map(|s| s.mu.clone()).collect(),
                settle_round: trace.settle_round(model.truth(), 0.99),
                bound_violated: trace.bound_violated(),
                drop_rate: schedule.drop_rate(),
            }
        }
        Mode::LearnByz => {
            let model = require_model(config)?;
            let (plan, c_set) = match &config.faults {
                FaultModel::Byzantine { plan, c_set } => (plan.clone(), c_set.clone()),
                _ => (ByzantinePlan::honest(0), (0..topo.m_count()).collect()),
            };
            let options = ByzantineOptions { certify: config.run.certify, enumeration_cap: DEFAULT_ENUMERATION_CAP };
            let trace = run_byzantine_learning(topo, model, &plan, &c_set, rounds, &seeds, options)?;
            for (i, per_agent) in trace.r.iter().enumerate() {
                let t = i + 1;
                for (agent, values) in per_agent.iter().enumerate() {
                    for (p, &(a, b)) in trace.pairs.iter().enumerate() {
                        sink.write(&ByzRow {
                            seed,
                            round: t,
                            agent,
                            theta_a: a,
                            theta_b: b,
                            r: values[p],
                            r_over_t2: values[p] / (t * t) as f64,
                            decoded: trace.decoded[i][agent],
                            faulty: trace.faulty[agent],
                            in_c: trace.setup.in_c[agent],
                        })?;
                    }
                }
            }
            let truth = model.truth();
            let tail_start = rounds - rounds / 5;
            let growth_mean = (0..topo.n_agents())
                .map(|agent| {
                    let vals: Vec<f64> = (tail_start..rounds)
                        .map(|i| {
                            let t = (i + 1) as f64;
                            trace
                                .pairs
                                .iter()
                                .zip(&trace.r[i][agent])
                                .filter(|((a, _), _)| *a == truth)
                                .map(|(_, v)| v / (t * t))
                                .fold(f64::INFINITY, f64::min)
                        })
                        .collect();
                    vals.iter().sum::<f64>() / vals.len().max(1) as f64
                })
                .collect();
            RunSummary::LearnByz {
                seed,
                rounds,
                decoded: trace.decoded.last().cloned().unwrap_or_default(),
                stable_from: (0..topo.n_agents()).map(|a| trace.stable_from(a, truth)).collect(),
                faulty: trace.faulty.clone(),
                growth_mean,
            }
        }
    };
    sink.finish()?;
    let path = opts.summary_path(mode, seed);
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(summary)
}
