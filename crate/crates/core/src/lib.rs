//! Simulation and verification core for hierarchical fault-tolerant social
//! learning.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! * [`topology`]: sub-networks, graph metrics, reduced graphs and
//!   source-component certification.
//! * [`signals`]: finite-support likelihood models, sampling and KL machinery.
//! * [`faults`]: B-bounded packet-drop schedules and Byzantine message forging.
//! * [`pushsum`]: robust push-sum with parameter-server fusion (HPS).
//! * [`dropout_learning`]: non-Bayesian learning on top of HPS.
//! * [`byzantine_learning`]: pairwise trimmed-mean learning with
//!   representative gossip at the parameter server.
//! * [`oracle`]: augmented-graph matrices, matrix products, ergodic
//!   coefficients and bound evaluators used to check the simulations.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod byzantine_learning;
pub mod dropout_learning;
mod error;
pub mod faults;
pub(crate) mod math;
pub mod oracle;
pub mod pushsum;
pub mod rng;
pub mod signals;
pub mod topology;

pub use error::{Error, Result};

/// Dense agent index, assigned `0..N` in sub-network order.
pub type AgentId = usize;

/// Hypothesis index into the model's hypothesis list.
pub type HypothesisId = usize;
