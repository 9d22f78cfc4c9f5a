use alloc::string::String;
use alloc::vec::Vec;

use crate::topology::CertFailure;
use crate::AgentId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("sub-network {0} is not strongly connected")]
    NotStronglyConnected(usize),
    #[error("reduced-graph enumeration would produce {count} graphs (cap {cap})")]
    ExplosionGuard { count: u128, cap: usize },
    #[error("certification failed for {} case(s)", .0.len())]
    ToleranceViolation(Vec<CertFailure>),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid signal model: {0}")]
    InvalidModel(String),
    #[error("distributions have different support sizes ({0} vs {1})")]
    SupportMismatch(usize, usize),
    #[error("link {sender} -> {receiver} is not an incoming link of the receiving agent")]
    UnknownLink { sender: AgentId, receiver: AgentId },
    #[error("fusion expects {expected} designated agents, got {got}")]
    MissingDesignated { expected: usize, got: usize },
    #[error("agent {0} is not in the faulty set")]
    NotFaulty(AgentId),
    #[error("mass must be positive, got {0}")]
    NonpositiveMass(f64),
    #[error("model is not globally observable (min pairwise KL {min_kl:e})")]
    IdentifiabilityFailure { min_kl: f64 },
    #[error("trimming {f_bound} from each side needs at least {needed} values, got {got}")]
    TooFewValues { got: usize, needed: usize, f_bound: usize },
    #[error("agent {agent} has {got} incoming neighbours, needs at least {needed}")]
    TooFewNeighbors { agent: AgentId, got: usize, needed: usize },
    #[error("assumption violated: {0}")]
    AssumptionViolation(String),
    #[error("matrix is not row-stochastic (row {row} sums to {sum})")]
    NotRowStochastic { row: usize, sum: f64 },
    #[error("bound needs t >= {min}, got {t}")]
    HorizonTooSmall { t: usize, min: usize },
    #[error("instance too large for dense oracle: {size} > {cap}")]
    InstanceTooLarge { size: usize, cap: usize },
    #[error("schedule covers rounds 1..={horizon}, round {round} requested")]
    ScheduleHorizon { round: usize, horizon: usize },
}
