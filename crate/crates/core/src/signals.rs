//! Finite-support likelihood models, signal sampling and KL divergences.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::{AgentId, Error, HypothesisId, Result};

/// Smallest admissible likelihood; keeps every log-ratio finite.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

/// Threshold separating a genuinely positive KL sum from rounding noise.
pub const KL_TOLERANCE: f64 = 1e-9;

/// Input rows must sum to one within this tolerance before flooring.
const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Per-agent likelihood table: one row `ℓ_j(·|θ)` per hypothesis over the
/// agent's signal alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodTable {
    rows: Vec<Vec<f64>>,
}

impl LikelihoodTable {
    pub fn row(&self, theta: HypothesisId) -> &[f64] {
        &self.rows[theta]
    }

    pub fn alphabet(&self) -> usize {
        self.rows[0].len()
    }
}

/// Raises entries below the floor to the floor and takes the added mass from
/// the largest entry, so the row keeps summing to one.
fn floor_row(row: &mut [f64]) {
    let mut added = 0.0;
    for p in row.iter_mut() {
        if *p < LIKELIHOOD_FLOOR {
            added += LIKELIHOOD_FLOOR - *p;
            *p = LIKELIHOOD_FLOOR;
        }
    }
    if added > 0.0 {
        let (imax, _) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        row[imax] -= added;
    }
    let total: f64 = row.iter().sum();
    for p in row.iter_mut() {
        *p /= total;
    }
}

/// The hypothesis set, the true hypothesis and every agent's likelihood table.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalModel {
    hypotheses: usize,
    truth: HypothesisId,
    tables: Vec<LikelihoodTable>,
    l_bound: f64,
}

impl SignalModel {
    /// `tables[j][θ][w]` is `ℓ_j(w|θ)`. Rows are floored at
    /// [`LIKELIHOOD_FLOOR`] and renormalised.
    pub fn new(hypotheses: usize, truth: HypothesisId, tables: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if hypotheses < 2 {
            return Err(Error::InvalidModel("at least two hypotheses are required".into()));
        }
        if truth >= hypotheses {
            return Err(Error::InvalidModel(format!("truth {truth} is not a hypothesis")));
        }
        let mut out = Vec::with_capacity(tables.len());
        for (agent, mut rows) in tables.into_iter().enumerate() {
            if rows.len() != hypotheses {
                return Err(Error::InvalidModel(format!(
                    "agent {agent} has {} rows for {hypotheses} hypotheses",
                    rows.len()
                )));
            }
            let width = rows[0].len();
            if width == 0 {
                return Err(Error::InvalidModel(format!("agent {agent} has an empty alphabet")));
            }
            for (theta, row) in rows.iter_mut().enumerate() {
                if row.len() != width {
                    return Err(Error::InvalidModel(format!(
                        "agent {agent} rows have different alphabet sizes"
                    )));
                }
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "agent {agent}, hypothesis {theta}: negative or non-finite likelihood"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if math::abs(sum - 1.0) > ROW_SUM_TOLERANCE {
                    return Err(Error::InvalidModel(format!(
                        "agent {agent}, hypothesis {theta}: row sums to {sum}"
                    )));
                }
                floor_row(row);
            }
            out.push(LikelihoodTable { rows });
        }
        let mut model = Self { hypotheses, truth, tables: out, l_bound: 0.0 };
        model.l_bound = model.recompute_l_bound();
        Ok(model)
    }

    /// The same table for every one of `agents` agents.
    pub fn uniform_tables(
        hypotheses: usize,
        truth: HypothesisId,
        agents: usize,
        table: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::new(hypotheses, truth, (0..agents).map(|_| table.clone()).collect())
    }

    pub fn hypotheses(&self) -> usize {
        self.hypotheses
    }

    pub fn truth(&self) -> HypothesisId {
        self.truth
    }

    pub fn agents(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, agent: AgentId) -> &LikelihoodTable {
        &self.tables[agent]
    }

    /// `L`: the largest log-likelihood ratio over agents, signals and pairs.
    pub fn l_bound(&self) -> f64 {
        self.l_bound
    }

    /// Recomputes `L` from the tables.
    pub fn recompute_l_bound(&self) -> f64 {
        let mut best: f64 = 0.0;
        for table in &self.tables {
            for w in 0..table.alphabet() {
                let (lo, hi) = table.rows.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), row| {
                    (lo.min(row[w]), hi.max(row[w]))
                });
                best = best.max(math::ln(hi / lo));
            }
        }
        best
    }

    /// `log ℓ_j(s|θ)`.
    pub fn log_likelihood(&self, agent: AgentId, signal: usize, theta: HypothesisId) -> f64 {
        math::ln(self.tables[agent].rows[theta][signal])
    }

    /// `D_KL(ℓ_j(·|p) ‖ ℓ_j(·|q))` for one agent.
    pub fn agent_kl(&self, agent: AgentId, p: HypothesisId, q: HypothesisId) -> f64 {
        let table = &self.tables[agent];
        kl_divergence(&table.rows[p], &table.rows[q]).expect("rows share an alphabet")
    }

    /// KL between the joint signal distributions, which factorises over the
    /// independent agents: `Σ_j D_KL(ℓ_j(·|p) ‖ ℓ_j(·|q))`.
    pub fn joint_kl(&self, p: HypothesisId, q: HypothesisId) -> f64 {
        (0..self.agents()).map(|j| self.agent_kl(j, p, q)).sum()
    }
}

/// Draws one signal of `agent` from `ℓ_agent(·|θ*)`.
pub fn sample_signal<R: Rng + ?Sized>(model: &SignalModel, agent: AgentId, rng: &mut R) -> usize {
    let row = &model.tables[agent].rows[model.truth];
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (w, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return w;
        }
    }
    row.len() - 1
}

pub fn log_likelihood(model: &SignalModel, agent: AgentId, signal: usize, theta: HypothesisId) -> f64 {
    model.log_likelihood(agent, signal, theta)
}

/// `Σ p_k log(p_k / q_k)`; zero-probability terms of `p` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch(p.len(), q.len()));
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &qk)| pk * math::ln(pk / qk))
        .sum())
}

/// Joint KL for one ordered hypothesis pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDivergence {
    /// Hypothesis generating the signals.
    pub from: HypothesisId,
    pub to: HypothesisId,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub pairs: Vec<PairDivergence>,
    pub min_kl: f64,
    pub passed: bool,
}

/// Global observability: every ordered pair of distinct hypotheses has a
/// positive joint KL divergence.
pub fn check_global_observability(model: &SignalModel) -> ObservabilityReport {
    let mut pairs = Vec::new();
    for from in 0..model.hypotheses() {
        for to in 0..model.hypotheses() {
            if from != to {
                pairs.push(PairDivergence { from, to, kl: model.joint_kl(from, to) });
            }
        }
    }
    let min_kl = pairs.iter().map(|p| p.kl).fold(f64::INFINITY, f64::min);
    ObservabilityReport { pairs, min_kl, passed: min_kl > KL_TOLERANCE }
}
