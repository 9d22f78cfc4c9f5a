//! Fault models: B-bounded packet-drop schedules for the lossy links and
//! message forging for Byzantine agents.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::topology::SystemTopology;
use crate::{AgentId, Error, Result};

/// Where the forced delivery lands when a link has been silent too long.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForcedPlacement {
    /// Force delivery on the last round of the window (after `B − 1` drops).
    #[default]
    WindowEnd,
    /// After every delivery, draw the next forced-delivery deadline uniformly
    /// among the following `B` rounds.
    Uniform,
}

/// Link-operational indicator for rounds `1..=horizon` over the topology's
/// link list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropSchedule {
    links: usize,
    horizon: usize,
    window_b: usize,
    operational: Vec<bool>,
}

impl DropSchedule {
    /// Every link delivers every round.
    pub fn reliable(links: usize, horizon: usize, window_b: usize) -> Self {
        Self { links, horizon, window_b, operational: vec![true; links * horizon] }
    }

    /// Schedule from explicit per-round rows (`rows[t-1][link]`). No
    /// B-boundedness check is made; use [`DropSchedule::validate_b_bounded`].
    pub fn from_rows(window_b: usize, links: usize, rows: &[Vec<bool>]) -> Result<Self> {
        let mut operational = Vec::with_capacity(links * rows.len());
        for (t, row) in rows.iter().enumerate() {
            if row.len() != links {
                return Err(Error::InvalidParameter(format!(
                    "round {} has {} link entries, expected {links}",
                    t + 1,
                    row.len()
                )));
            }
            operational.extend_from_slice(row);
        }
        Ok(Self { links, horizon: rows.len(), window_b, operational })
    }

    pub fn links(&self) -> usize {
        self.links
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn window_b(&self) -> usize {
        self.window_b
    }

    /// Operational flags of every link at `round` (1-based).
    pub fn round(&self, round: usize) -> Result<&[bool]> {
        if round == 0 || round > self.horizon {
            return Err(Error::ScheduleHorizon { round, horizon: self.horizon });
        }
        let start = (round - 1) * self.links;
        Ok(&self.operational[start..start + self.links])
    }

    pub fn is_operational(&self, link: usize, round: usize) -> Result<bool> {
        Ok(self.round(round)?[link])
    }

    /// Scans every window of `B` consecutive rounds; returns the first
    /// `(link, window_start)` with no delivery.
    pub fn validate_b_bounded(&self) -> core::result::Result<(), (usize, usize)> {
        if self.horizon < self.window_b {
            return Ok(());
        }
        for link in 0..self.links {
            for start in 1..=self.horizon + 1 - self.window_b {
                let delivered = (start..start + self.window_b)
                    .any(|t| self.operational[(t - 1) * self.links + link]);
                if !delivered {
                    return Err((link, start));
                }
            }
        }
        Ok(())
    }

    /// Fraction of (link, round) slots that dropped.
    pub fn drop_rate(&self) -> f64 {
        if self.operational.is_empty() {
            return 0.0;
        }
        self.operational.iter().filter(|&&ok| !ok).count() as f64 / self.operational.len() as f64
    }
}

/// I.i.d. Bernoulli drops per (link, round), overridden so every link delivers
/// at least once in every `B` consecutive rounds.
pub fn make_schedule<R: Rng + ?Sized>(
    topology: &SystemTopology,
    drop_prob: f64,
    horizon: usize,
    placement: ForcedPlacement,
    rng: &mut R,
) -> Result<DropSchedule> {
    if !(0.0..1.0).contains(&drop_prob) {
        return Err(Error::InvalidParameter(format!("drop probability {drop_prob} not in [0, 1)")));
    }
    let links = topology.links().len();
    let b = topology.window_b();
    let mut operational = vec![false; links * horizon];
    // WindowEnd: consecutive drops so far. Uniform: rounds left until the deadline.
    let mut counter: Vec<usize> = match placement {
        ForcedPlacement::WindowEnd => vec![0; links],
        ForcedPlacement::Uniform => (0..links).map(|_| rng.random_range(1..=b)).collect(),
    };
    for t in 0..horizon {
        for link in 0..links {
            let dropped = drop_prob > 0.0 && rng.random::<f64>() < drop_prob;
            let ok = match placement {
                ForcedPlacement::WindowEnd => {
                    let ok = !dropped || counter[link] + 1 >= b;
                    counter[link] = if ok { 0 } else { counter[link] + 1 };
                    ok
                }
                ForcedPlacement::Uniform => {
                    let ok = !dropped || counter[link] == 1;
                    counter[link] = if ok { rng.random_range(1..=b) } else { counter[link] - 1 };
                    ok
                }
            };
            operational[t * links + link] = ok;
        }
    }
    Ok(DropSchedule { links, horizon, window_b: b, operational })
}

/// Default magnitude used by the colluding extreme strategy.
pub const DEFAULT_EXTREME: f64 = 1e6;

/// How a Byzantine agent forges the scalars it sends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Constant(f64),
    Negate,
    Amplify(f64),
    Random { low: f64, high: f64 },
    /// `±magnitude`, opposing the sign of the honest consensus.
    ColludeExtreme { magnitude: f64 },
}

impl Strategy {
    /// Name used in configuration files.
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Constant(_) => "constant",
            Strategy::Negate => "negate",
            Strategy::Amplify(_) => "amplify",
            Strategy::Random { .. } => "random",
            Strategy::ColludeExtreme { .. } => "collude_extreme",
        }
    }
}

/// Who receives a forged message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Receiver {
    Agent(AgentId),
    Server,
}

/// What the adversary knows when forging one message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForgeInput {
    /// The value the agent would have sent had it been honest.
    pub honest_value: f64,
    /// Current honest consensus (e.g. mean over normal agents).
    pub honest_consensus: f64,
}

/// The faulty set `A` (at most `F` agents) and each one's strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct ByzantinePlan {
    f_bound: usize,
    strategies: BTreeMap<AgentId, Strategy>,
}

impl ByzantinePlan {
    pub fn new(f_bound: usize, agents: Vec<(AgentId, Strategy)>) -> Result<Self> {
        let strategies: BTreeMap<_, _> = agents.into_iter().collect();
        if strategies.len() > f_bound {
            return Err(Error::InvalidParameter(format!(
                "{} faulty agents exceed the bound F = {f_bound}",
                strategies.len()
            )));
        }
        if let Some(Strategy::Random { low, high }) =
            strategies.values().find(|s| matches!(s, Strategy::Random { low, high } if !(low < high)))
        {
            return Err(Error::InvalidParameter(format!("empty random range [{low}, {high})")));
        }
        Ok(Self { f_bound, strategies })
    }

    /// No faulty agents, tolerance `F` kept for the filters.
    pub fn honest(f_bound: usize) -> Self {
        Self { f_bound, strategies: BTreeMap::new() }
    }

    pub fn f_bound(&self) -> usize {
        self.f_bound
    }

    pub fn is_faulty(&self, agent: AgentId) -> bool {
        self.strategies.contains_key(&agent)
    }

    pub fn faulty(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.strategies.keys().copied()
    }

    pub fn strategy(&self, agent: AgentId) -> Option<&Strategy> {
        self.strategies.get(&agent)
    }
}

/// The scalar a faulty `sender` transmits to `receiver` at `round`. Messages
/// are point-to-point, so different receivers may get different values.
pub fn forge<R: Rng + ?Sized>(
    plan: &ByzantinePlan,
    sender: AgentId,
    _receiver: Receiver,
    input: ForgeInput,
    _round: usize,
    rng: &mut R,
) -> Result<f64> {
    let strategy = plan.strategy(sender).ok_or(Error::NotFaulty(sender))?;
    Ok(match *strategy {
        Strategy::Constant(c) => c,
        Strategy::Negate => -input.honest_value,
        Strategy::Amplify(kappa) => kappa * input.honest_value,
        Strategy::Random { low, high } => rng.random_range(low..high),
        Strategy::ColludeExtreme { magnitude } => {
            if input.honest_consensus >= 0.0 {
                -magnitude
            } else {
                magnitude
            }
        }
    })
}
