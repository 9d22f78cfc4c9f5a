//! Robust push-sum with hierarchical fusion (HPS).
//!
//! Every agent keeps a value vector `z`, a mass `m`, running totals of what it
//! has pushed out (`σ`, `σ̃`) and, per incoming link, the running totals it has
//! received (`ρ`, `ρ̃`). A dropped packet only delays the transfer: the next
//! delivery carries the full cumulative total, so nothing is lost. Every `Γ`
//! rounds the designated agents exchange half of their value and mass with
//! the parameter server.

use alloc::vec;
use alloc::vec::Vec;

use crate::faults::DropSchedule;
use crate::math;
use crate::topology::SystemTopology;
use crate::{AgentId, Error, Result};

/// Cumulative totals received over one incoming link.
#[derive(Debug, Clone, PartialEq)]
pub struct IncomingCounter {
    pub sender: AgentId,
    pub rho: Vec<f64>,
    pub rho_tilde: f64,
}

/// Per-agent push-sum variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub z: Vec<f64>,
    pub m: f64,
    pub sigma: Vec<f64>,
    pub sigma_tilde: f64,
    incoming: Vec<IncomingCounter>,
}

/// Cumulative totals an agent broadcasts in the first half of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub sender: AgentId,
    pub sigma_plus: Vec<f64>,
    pub sigma_tilde_plus: f64,
    pub round: usize,
}

impl Broadcast {
    /// The copy of this broadcast that travels over `sender → receiver`.
    pub fn to(&self, receiver: AgentId) -> LinkMessage {
        LinkMessage {
            sender: self.sender,
            receiver,
            sigma_plus: self.sigma_plus.clone(),
            sigma_tilde_plus: self.sigma_tilde_plus,
            round: self.round,
        }
    }
}

/// A broadcast as delivered over one link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkMessage {
    pub sender: AgentId,
    pub receiver: AgentId,
    pub sigma_plus: Vec<f64>,
    pub sigma_tilde_plus: f64,
    pub round: usize,
}

impl AgentState {
    /// Initial state: `z = w`, `m = 1`, all counters zero.
    pub fn new(w: Vec<f64>, senders: impl IntoIterator<Item = AgentId>) -> Self {
        let d = w.len();
        let incoming = senders
            .into_iter()
            .map(|sender| IncomingCounter { sender, rho: vec![0.0; d], rho_tilde: 0.0 })
            .collect();
        Self { z: w, m: 1.0, sigma: vec![0.0; d], sigma_tilde: 0.0, incoming }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn incoming(&self) -> &[IncomingCounter] {
        &self.incoming
    }

    /// `z / m`.
    pub fn estimate(&self) -> Vec<f64> {
        self.z.iter().map(|v| v / self.m).collect()
    }

    /// First-half totals `σ⁺ = σ + z/(d+1)` and `σ̃⁺ = σ̃ + m/(d+1)`.
    pub fn broadcast(&self, sender: AgentId, out_degree: usize, round: usize) -> Broadcast {
        let k = (out_degree + 1) as f64;
        Broadcast {
            sender,
            sigma_plus: self.sigma.iter().zip(&self.z).map(|(s, z)| s + z / k).collect(),
            sigma_tilde_plus: self.sigma_tilde + self.m / k,
            round,
        }
    }

    /// Runs both half-updates of one round given the messages that arrived.
    ///
    /// Links without a delivered message keep their previous `ρ`. Returns the
    /// broadcast the agent emitted this round.
    pub fn local_round(
        &mut self,
        me: AgentId,
        delivered: &[LinkMessage],
        out_degree: usize,
        round: usize,
    ) -> Result<Broadcast> {
        let mut slots = vec![None; self.incoming.len()];
        for msg in delivered {
            let slot = self.incoming.iter().position(|c| c.sender == msg.sender);
            match slot {
                Some(s) if msg.receiver == me && msg.sigma_plus.len() == self.dim() => slots[s] = Some(msg),
                _ => return Err(Error::UnknownLink { sender: msg.sender, receiver: msg.receiver }),
            }
        }

        let k = (out_degree + 1) as f64;
        let out = self.broadcast(me, out_degree, round);

        let mut z_plus: Vec<f64> = self.z.iter().map(|z| z / k).collect();
        let mut m_plus = self.m / k;
        for (counter, msg) in self.incoming.iter_mut().zip(slots) {
            let Some(msg) = msg else { continue };
            for ((zp, rho), new) in z_plus.iter_mut().zip(counter.rho.iter_mut()).zip(&msg.sigma_plus) {
                *zp += new - *rho;
                *rho = *new;
            }
            m_plus += msg.sigma_tilde_plus - counter.rho_tilde;
            counter.rho_tilde = msg.sigma_tilde_plus;
        }

        for ((s, sp), zp) in self.sigma.iter_mut().zip(&out.sigma_plus).zip(&z_plus) {
            *s = sp + zp / k;
        }
        self.sigma_tilde = out.sigma_tilde_plus + m_plus / k;
        for (z, zp) in self.z.iter_mut().zip(&z_plus) {
            *z = zp / k;
        }
        self.m = m_plus / k;
        Ok(out)
    }
}

/// Half-values uploaded by the designated agents and the server's reply.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionExchange {
    pub uploads_z: Vec<Vec<f64>>,
    pub uploads_m: Vec<f64>,
    pub response_z: Vec<f64>,
    pub response_m: f64,
}

/// Server-coordinated exchange among designated agents:
/// `z ← ½z + (1/M) Σ ½z_{i₀}` and likewise for `m`.
pub fn fusion_round(
    states: &mut [AgentState],
    designated: &[AgentId],
    m_count: usize,
) -> Result<FusionExchange> {
    if designated.len() != m_count || m_count == 0 {
        return Err(Error::MissingDesignated { expected: m_count, got: designated.len() });
    }
    let dim = states[designated[0]].dim();
    let uploads_z: Vec<Vec<f64>> =
        designated.iter().map(|&a| states[a].z.iter().map(|z| 0.5 * z).collect()).collect();
    let uploads_m: Vec<f64> = designated.iter().map(|&a| 0.5 * states[a].m).collect();
    let scale = 1.0 / m_count as f64;
    let mut response_z = vec![0.0; dim];
    for up in &uploads_z {
        for (r, u) in response_z.iter_mut().zip(up) {
            *r += u;
        }
    }
    response_z.iter_mut().for_each(|r| *r *= scale);
    let response_m = uploads_m.iter().sum::<f64>() * scale;
    for (i, &a) in designated.iter().enumerate() {
        let st = &mut states[a];
        for ((z, half), r) in st.z.iter_mut().zip(&uploads_z[i]).zip(&response_z) {
            *z = half + r;
        }
        st.m = uploads_m[i] + response_m;
    }
    Ok(FusionExchange { uploads_z, uploads_m, response_z, response_m })
}

/// Lock-step HPS driver over a whole topology.
#[derive(Debug, Clone)]
pub struct HpsSystem<'a> {
    topology: &'a SystemTopology,
    agents: Vec<AgentState>,
    /// Position of each link inside its receiver's counter list.
    link_slot: Vec<usize>,
    round: usize,
}

impl<'a> HpsSystem<'a> {
    /// Starts from `z_j = inputs[j]`, `m_j = 1`.
    pub fn new(topology: &'a SystemTopology, inputs: Vec<Vec<f64>>) -> Result<Self> {
        let n = topology.n_agents();
        if inputs.len() != n {
            return Err(Error::InvalidParameter(alloc::format!("{} inputs for {n} agents", inputs.len())));
        }
        let dim = inputs.first().map_or(0, Vec::len);
        if inputs.iter().any(|w| w.len() != dim) || dim == 0 {
            return Err(Error::InvalidParameter("inputs must share a positive dimension".into()));
        }
        let links = topology.links();
        let agents = inputs
            .into_iter()
            .enumerate()
            .map(|(j, w)| AgentState::new(w, topology.in_links(j).iter().map(|&l| links[l].0)))
            .collect();
        let mut link_slot = vec![0; links.len()];
        for j in 0..n {
            for (slot, &l) in topology.in_links(j).iter().enumerate() {
                link_slot[l] = slot;
            }
        }
        Ok(Self { topology, agents, link_slot, round: 0 })
    }

    /// All values zero, masses one.
    pub fn zeros(topology: &'a SystemTopology, dim: usize) -> Result<Self> {
        Self::new(topology, vec![vec![0.0; dim]; topology.n_agents()])
    }

    pub fn topology(&self) -> &SystemTopology {
        self.topology
    }

    /// Last completed round (0 before the first step).
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agent_mut(&mut self, agent: AgentId) -> &mut AgentState {
        &mut self.agents[agent]
    }

    pub fn estimates(&self) -> Vec<Vec<f64>> {
        self.agents.iter().map(AgentState::estimate).collect()
    }

    /// One round without innovation.
    pub fn step(&mut self, operational: &[bool]) -> Result<bool> {
        self.step_with(operational, |_, _| {})
    }

    /// One full round: broadcasts from the previous state, deliveries over
    /// operational links, both half-updates, then `inject` on every agent,
    /// then fusion if the round index is a multiple of `Γ`. Returns whether
    /// fusion ran.
    pub fn step_with<F>(&mut self, operational: &[bool], mut inject: F) -> Result<bool>
    where
        F: FnMut(AgentId, &mut AgentState),
    {
        let topo = self.topology;
        let links = topo.links();
        if operational.len() != links.len() {
            return Err(Error::InvalidParameter(alloc::format!(
                "{} link flags for {} links",
                operational.len(),
                links.len()
            )));
        }
        let t = self.round + 1;
        let broadcasts: Vec<Broadcast> = self
            .agents
            .iter()
            .enumerate()
            .map(|(j, st)| st.broadcast(j, topo.out_degree(j), t))
            .collect();
        for j in 0..self.agents.len() {
            let delivered: Vec<LinkMessage> = topo
                .in_links(j)
                .iter()
                .filter(|&&l| operational[l])
                .map(|&l| broadcasts[links[l].0].to(j))
                .collect();
            self.agents[j].local_round(j, &delivered, topo.out_degree(j), t)?;
        }
        for (j, st) in self.agents.iter_mut().enumerate() {
            inject(j, st);
        }
        self.round = t;
        let fuse = t.is_multiple_of(topo.gamma());
        if fuse {
            fusion_round(&mut self.agents, topo.designated(), topo.m_count())?;
        }
        Ok(fuse)
    }

    /// In-flight value on each link: `σ_{j'} − ρ_{j'j}`, in link order.
    pub fn backlog_values(&self) -> Vec<Vec<f64>> {
        self.topology
            .links()
            .iter()
            .enumerate()
            .map(|(l, &(from, to))| {
                let c = &self.agents[to].incoming[self.link_slot[l]];
                self.agents[from].sigma.iter().zip(&c.rho).map(|(s, r)| s - r).collect()
            })
            .collect()
    }

    /// In-flight mass on each link: `σ̃_{j'} − ρ̃_{j'j}`.
    pub fn backlog_masses(&self) -> Vec<f64> {
        self.topology
            .links()
            .iter()
            .enumerate()
            .map(|(l, &(from, to))| {
                self.agents[from].sigma_tilde - self.agents[to].incoming[self.link_slot[l]].rho_tilde
            })
            .collect()
    }

    /// Stacked augmented state: real agents first, then one virtual node per
    /// link. Returns `(values[node][coord], masses[node])`.
    pub fn augmented_state(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut values: Vec<Vec<f64>> = self.agents.iter().map(|a| a.z.clone()).collect();
        values.extend(self.backlog_values());
        let mut masses: Vec<f64> = self.agents.iter().map(|a| a.m).collect();
        masses.extend(self.backlog_masses());
        (values, masses)
    }

    /// `Σ m_j` plus the in-flight mass.
    pub fn total_mass(&self) -> f64 {
        self.augmented_state().1.iter().sum()
    }

    /// `Σ z_j` plus the in-flight value, per coordinate.
    pub fn total_value(&self) -> Vec<f64> {
        let (values, _) = self.augmented_state();
        let mut total = vec![0.0; values.first().map_or(0, Vec::len)];
        for v in &values {
            for (t, x) in total.iter_mut().zip(v) {
                *t += x;
            }
        }
        total
    }
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

/// Per-round record of a consensus run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusRound {
    pub round: usize,
    pub fused: bool,
    pub estimates: Vec<Vec<f64>>,
    /// `‖z_j/m_j − avg‖` per agent.
    pub errors: Vec<f64>,
    /// `|Σm + backlog − N|`.
    pub mass_residual: f64,
    /// `max_k |Σz_k + backlog_k − Σw_k|`.
    pub value_residual: f64,
    pub min_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusTrace {
    pub average: Vec<f64>,
    pub rounds: Vec<ConsensusRound>,
}

impl ConsensusTrace {
    pub fn max_error(&self, round: usize) -> f64 {
        self.rounds[round - 1].errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Runs HPS for `rounds` rounds on `schedule` and records estimates, errors
/// against the exact average and conservation residuals.
pub fn run_consensus(
    topology: &SystemTopology,
    inputs: Vec<Vec<f64>>,
    schedule: &DropSchedule,
    rounds: usize,
) -> Result<ConsensusTrace> {
    let n = topology.n_agents();
    let mut sys = HpsSystem::new(topology, inputs.clone())?;
    let dim = inputs[0].len();
    let mut sum_w = vec![0.0; dim];
    for w in &inputs {
        for (s, x) in sum_w.iter_mut().zip(w) {
            *s += x;
        }
    }
    let average: Vec<f64> = sum_w.iter().map(|s| s / n as f64).collect();
    let mut out = Vec::with_capacity(rounds);
    for t in 1..=rounds {
        let fused = sys.step(schedule.round(t)?)?;
        let estimates = sys.estimates();
        let errors = estimates
            .iter()
            .map(|e| {
                let diff: Vec<f64> = e.iter().zip(&average).map(|(a, b)| a - b).collect();
                norm(&diff)
            })
            .collect();
        let value_residual = sys
            .total_value()
            .iter()
            .zip(&sum_w)
            .map(|(a, b)| math::abs(a - b))
            .fold(0.0, f64::max);
        out.push(ConsensusRound {
            round: t,
            fused,
            estimates,
            errors,
            mass_residual: math::abs(sys.total_mass() - n as f64),
            value_residual,
            min_mass: sys.agents().iter().map(|a| a.m).fold(f64::INFINITY, f64::min),
        });
    }
    Ok(ConsensusTrace { average, rounds: out })
}
