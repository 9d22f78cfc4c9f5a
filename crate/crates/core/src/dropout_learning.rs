//! Non-Bayesian learning over lossy links: HPS consensus on accumulated
//! log-likelihoods, one fresh signal per agent per round, and beliefs from the
//! closed-form dual-averaging projection (softmax of `z/m` under a uniform
//! prior).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::faults::DropSchedule;
use crate::math;
use crate::oracle::{consensus_term_bound, theorem2_bound, LearningBound};
use crate::pushsum::{AgentState, HpsSystem};
use crate::rng::SeedStreams;
use crate::signals::{check_global_observability, sample_signal, SignalModel};
use crate::topology::{compute_metrics, SystemTopology};
use crate::{AgentId, Error, Result};

/// Default confidence parameter for bound reporting.
pub const DEFAULT_DELTA: f64 = 0.1;

/// An agent's learning variables.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub z_theta: Vec<f64>,
    pub mass: f64,
    pub mu: Vec<f64>,
}

impl BeliefState {
    pub fn from_agent(agent: &AgentState) -> Result<Self> {
        Ok(Self { z_theta: agent.z.clone(), mass: agent.m, mu: belief_project(&agent.z, agent.m)? })
    }
}

/// `μ(θ) ∝ exp(z(θ)/m)`, the uniform-prior projection onto the simplex.
pub fn belief_project(z_theta: &[f64], mass: f64) -> Result<Vec<f64>> {
    if !(mass > 0.0) {
        return Err(Error::NonpositiveMass(mass));
    }
    let scaled: Vec<f64> = z_theta.iter().map(|z| z / mass).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|s| math::exp(s - max)).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Draws one signal for `agent` and adds its log-likelihood under every
/// hypothesis to `z`. Returns the signal.
pub fn innovation_step<R: Rng + ?Sized>(
    state: &mut AgentState,
    model: &SignalModel,
    agent: AgentId,
    rng: &mut R,
) -> usize {
    let s = sample_signal(model, agent, rng);
    add_log_likelihoods(state, model, agent, s);
    s
}

fn add_log_likelihoods(state: &mut AgentState, model: &SignalModel, agent: AgentId, signal: usize) {
    for (theta, z) in state.z.iter_mut().enumerate() {
        *z += model.log_likelihood(agent, signal, theta);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningOptions {
    pub delta: f64,
    /// Refuse models that fail global observability.
    pub require_observability: bool,
}

impl Default for LearningOptions {
    fn default() -> Self {
        Self { delta: DEFAULT_DELTA, require_observability: true }
    }
}

/// Diagnostics of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningRound {
    pub round: usize,
    /// `μ_j(θ)`, per agent.
    pub mu: Vec<Vec<f64>>,
    /// `log μ_j(θ)/μ_j(θ*)` per agent and hypothesis (0 at `θ*`), computed as
    /// `(z_j(θ) − z_j(θ*))/m_j` to avoid underflow.
    pub log_ratios: Vec<Vec<f64>>,
    /// Per hypothesis, the bound on the log-ratio (`None` at `θ*` and before
    /// `2Γ` rounds).
    pub bounds: Vec<Option<LearningBound>>,
    /// Global average `z̄(θ)` of all injected log-likelihoods.
    pub z_bar: Vec<f64>,
    /// `max_j |z̄(θ*) − z_j(θ*)/m_j|`.
    pub consensus_error: f64,
    /// `max_θ |total augmented z(θ)/N − z̄(θ)|`.
    pub average_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningTrace {
    pub rounds: Vec<LearningRound>,
    /// `signals[t-1][j]`.
    pub signals: Vec<Vec<usize>>,
    /// Geometric-sum bound on the consensus-error term (valid for `t ≥ 2Γ`).
    pub consensus_bound: f64,
    pub fusion_period: usize,
    /// End-of-run values and masses.
    pub final_states: Vec<BeliefState>,
}

impl LearningTrace {
    /// First round from which every agent keeps `μ(θ*) > threshold` to the end.
    pub fn settle_round(&self, truth: usize, threshold: f64) -> Option<usize> {
        let mut settled = None;
        for r in &self.rounds {
            if r.mu.iter().all(|mu| mu[truth] > threshold) {
                settled.get_or_insert(r.round);
            } else {
                settled = None;
            }
        }
        settled
    }

    /// Whether some round `t ≥ 2Γ`, agent and wrong hypothesis has a
    /// log-ratio above the smaller of the two bound versions.
    pub fn bound_violated(&self) -> bool {
        self.rounds.iter().any(|r| {
            r.log_ratios.iter().any(|per_agent| {
                per_agent.iter().zip(&r.bounds).any(|(lr, b)| b.is_some_and(|b| *lr > b.simplified.min(b.exact)))
            })
        })
    }

    /// Largest consensus-error term over rounds `t ≥ 2Γ`.
    pub fn max_consensus_error_after_warmup(&self) -> f64 {
        self.rounds
            .iter()
            .filter(|r| r.round >= 2 * self.fusion_period)
            .map(|r| r.consensus_error)
            .fold(0.0, f64::max)
    }
}

/// Runs learning for `rounds` rounds: HPS with `z = 0`, `m = 1`, the
/// innovation applied after each round's push-sum update (before fusion), and
/// beliefs taken from the end-of-round state.
pub fn run_learning(
    topology: &SystemTopology,
    model: &SignalModel,
    schedule: &DropSchedule,
    rounds: usize,
    seeds: &SeedStreams,
    options: LearningOptions,
) -> Result<LearningTrace> {
    let n = topology.n_agents();
    if model.agents() != n {
        return Err(Error::InvalidModel(alloc::format!(
            "model has {} agents, topology has {n}",
            model.agents()
        )));
    }
    if options.require_observability {
        let report = check_global_observability(model);
        if !report.passed {
            return Err(Error::IdentifiabilityFailure { min_kl: report.min_kl });
        }
    }
    let metrics = compute_metrics(topology)?;
    let hyps = model.hypotheses();
    let truth = model.truth();
    let mut streams: Vec<_> = (0..n).map(|j| seeds.signals(j)).collect();
    let mut sys = HpsSystem::zeros(topology, hyps)?;
    let mut cumulative = vec![0.0; hyps];
    let mut signals = Vec::with_capacity(rounds);
    let mut out = Vec::with_capacity(rounds);

    for t in 1..=rounds {
        let mut drawn = vec![0; n];
        sys.step_with(schedule.round(t)?, |j, st| {
            drawn[j] = innovation_step(st, model, j, &mut streams[j]);
        })?;
        for (j, &s) in drawn.iter().enumerate() {
            for (theta, c) in cumulative.iter_mut().enumerate() {
                *c += model.log_likelihood(j, s, theta);
            }
        }
        signals.push(drawn);

        let z_bar: Vec<f64> = cumulative.iter().map(|c| c / n as f64).collect();
        let mut mu = Vec::with_capacity(n);
        let mut log_ratios = Vec::with_capacity(n);
        let mut consensus_error: f64 = 0.0;
        for a in sys.agents() {
            mu.push(belief_project(&a.z, a.m)?);
            log_ratios.push(a.z.iter().map(|z| (z - a.z[truth]) / a.m).collect::<Vec<_>>());
            consensus_error = consensus_error.max(math::abs(z_bar[truth] - a.z[truth] / a.m));
        }
        let total = sys.total_value();
        let average_residual =
            total.iter().zip(&z_bar).map(|(tv, zb)| math::abs(tv / n as f64 - zb)).fold(0.0, f64::max);
        let bounds = (0..hyps)
            .map(|theta| {
                if theta == truth || t < 2 * metrics.fusion_period {
                    Ok(None)
                } else {
                    theorem2_bound(&metrics, model, theta, n, t, options.delta).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(LearningRound { round: t, mu, log_ratios, bounds, z_bar, consensus_error, average_residual });
    }

    let final_states = sys.agents().iter().map(BeliefState::from_agent).collect::<Result<Vec<_>>>()?;
    Ok(LearningTrace {
        rounds: out,
        signals,
        consensus_bound: consensus_term_bound(&metrics, model.l_bound(), n),
        fusion_period: metrics.fusion_period,
        final_states,
    })
}
