//! Byzantine-resilient learning with scalar pairwise dynamics.
//!
//! For every ordered hypothesis pair `(θ₁, θ₂)` each agent tracks a scalar
//! `r(θ₁, θ₂)`. Agents in certified networks (the set `C`) run trimmed-mean
//! consensus on it plus their own log-likelihood ratio. Agents elsewhere do
//! nothing locally; every `Γ` rounds the parameter server queries a random
//! set of representatives, trims the `F` smallest and `F` largest answers, and
//! the representatives outside `C` adopt the trimmed mean.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;

use crate::faults::{forge, ByzantinePlan, ForgeInput, Receiver};
use crate::math;
use crate::rng::SeedStreams;
use crate::signals::{sample_signal, SignalModel};
use crate::topology::{certify_byzantine_network, CertReport, SystemTopology};
use crate::{AgentId, Error, HypothesisId, Result};

/// All ordered pairs `(θ₁, θ₂)` with `θ₁ ≠ θ₂`, lexicographic.
pub fn hypothesis_pairs(m: usize) -> Vec<(HypothesisId, HypothesisId)> {
    (0..m).flat_map(|a| (0..m).filter(move |&b| b != a).map(move |b| (a, b))).collect()
}

fn pair_index(m: usize, a: HypothesisId, b: HypothesisId) -> usize {
    a * (m - 1) + if b > a { b - 1 } else { b }
}

/// One agent's `r(θ₁, θ₂)` for every ordered pair; starts at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseState {
    hypotheses: usize,
    r: Vec<f64>,
}

impl PairwiseState {
    pub fn new(hypotheses: usize) -> Self {
        Self { hypotheses, r: vec![0.0; hypotheses * hypotheses.saturating_sub(1)] }
    }

    pub fn hypotheses(&self) -> usize {
        self.hypotheses
    }

    pub fn get(&self, a: HypothesisId, b: HypothesisId) -> f64 {
        self.r[pair_index(self.hypotheses, a, b)]
    }

    pub fn set(&mut self, a: HypothesisId, b: HypothesisId, v: f64) {
        let i = pair_index(self.hypotheses, a, b);
        self.r[i] = v;
    }

    /// Values in [`hypothesis_pairs`] order.
    pub fn values(&self) -> &[f64] {
        &self.r
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.r
    }

    /// The unique `θ̃` maximising `min_{θ≠θ̃} r(θ̃, θ)`; `None` on ties.
    pub fn decode(&self) -> Option<HypothesisId> {
        let m = self.hypotheses;
        let scores: Vec<f64> = (0..m)
            .map(|a| (0..m).filter(|&b| b != a).map(|b| self.get(a, b)).fold(f64::INFINITY, f64::min))
            .collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut winners = (0..m).filter(|&a| scores[a] == best);
        match (winners.next(), winners.next()) {
            (Some(a), None) => Some(a),
            _ => None,
        }
    }
}

/// Sorts by `(value, sender)` and drops the `F` smallest and `F` largest.
pub fn trimmed_filter(values: &[(f64, AgentId)], f_bound: usize) -> Result<Vec<(f64, AgentId)>> {
    let needed = 2 * f_bound + 1;
    if values.len() < needed {
        return Err(Error::TooFewValues { got: values.len(), needed, f_bound });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(sorted[f_bound..sorted.len() - f_bound].to_vec())
}

/// Result of one agent's update for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStep {
    pub value: f64,
    /// Senders whose values survived the trimming.
    pub survivors: Vec<AgentId>,
}

/// `r_t = (Σ_{survivors} r̃ + r_{t−1}) / (|survivors| + 1) + llr`.
pub fn agent_pair_step(
    agent: AgentId,
    own_prev: f64,
    incoming: &[(f64, AgentId)],
    llr: f64,
    f_bound: usize,
) -> Result<PairStep> {
    let needed = 2 * f_bound + 1;
    if incoming.len() < needed {
        return Err(Error::TooFewNeighbors { agent, got: incoming.len(), needed });
    }
    let kept = trimmed_filter(incoming, f_bound)?;
    let sum: f64 = kept.iter().map(|(v, _)| v).sum::<f64>() + own_prev;
    Ok(PairStep {
        value: sum / (kept.len() + 1) as f64 + llr,
        survivors: kept.into_iter().map(|(_, s)| s).collect(),
    })
}

/// What the server did for one pair in one fusion round.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipOutcome {
    pub trimmed_mean: f64,
    pub survivors: Vec<AgentId>,
}

/// Server step for one pair: trim the representatives' answers, average the
/// survivors, and let representatives outside `C` adopt the result. `r` holds
/// every agent's value for the pair.
pub fn ps_gossip_round(
    r: &mut [f64],
    representatives: &[AgentId],
    answers: &[f64],
    in_c: &[bool],
    f_bound: usize,
) -> Result<GossipOutcome> {
    let tagged: Vec<(f64, AgentId)> = answers.iter().copied().zip(representatives.iter().copied()).collect();
    let kept = trimmed_filter(&tagged, f_bound)?;
    let trimmed_mean = kept.iter().map(|(v, _)| v).sum::<f64>() / kept.len() as f64;
    for &rep in representatives {
        if !in_c[rep] {
            r[rep] = trimmed_mean;
        }
    }
    Ok(GossipOutcome { trimmed_mean, survivors: kept.into_iter().map(|(_, s)| s).collect() })
}

/// Representatives for one fusion round: one per network when
/// `M ≥ 2F+1`; otherwise one per `C` network plus `2F+1−|C|` distinct agents
/// drawn from the networks outside `C`.
pub fn sample_representatives<R: Rng + ?Sized>(
    topology: &SystemTopology,
    in_c_network: &[bool],
    f_bound: usize,
    rng: &mut R,
) -> Vec<AgentId> {
    let nets = topology.sub_networks();
    if nets.len() > 2 * f_bound {
        return nets.iter().map(|n| n.agents()[rng.random_range(0..n.len())]).collect();
    }
    let mut reps: Vec<AgentId> = nets
        .iter()
        .zip(in_c_network)
        .filter(|(_, &c)| c)
        .map(|(n, _)| n.agents()[rng.random_range(0..n.len())])
        .collect();
    let outside: Vec<AgentId> = nets
        .iter()
        .zip(in_c_network)
        .filter(|(_, &c)| !c)
        .flat_map(|(n, _)| n.agents().iter().copied())
        .collect();
    let extra = 2 * f_bound + 1 - reps.len();
    reps.extend(sample(rng, outside.len(), extra).into_iter().map(|i| outside[i]));
    reps
}

/// Reference constants of the growth-rate analysis for the certified networks.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthConstants {
    /// `min 1/(2(d_in − 2F) + 1)` over normal agents of `C` networks.
    pub beta: f64,
    /// Minimal source drift over wrong hypotheses and reduced graphs.
    pub min_source_kl: f64,
    /// Per `C` network: `(network, χ, faulty count, ½ β^{χ·faulty} D*_KL)`.
    pub per_network: Vec<(usize, usize, usize, f64)>,
}

/// Validated configuration of a Byzantine run.
#[derive(Debug, Clone, PartialEq)]
pub struct ByzantineSetup {
    pub c_set: Vec<usize>,
    pub f_bound: usize,
    /// Per agent: belongs to a `C` network.
    pub in_c: Vec<bool>,
    pub certificates: Vec<(usize, CertReport)>,
    pub constants: Option<GrowthConstants>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ByzantineOptions {
    /// Certify every `C` network by exhaustive reduced-graph enumeration.
    pub certify: bool,
    pub enumeration_cap: usize,
}

impl Default for ByzantineOptions {
    fn default() -> Self {
        Self { certify: true, enumeration_cap: crate::topology::DEFAULT_ENUMERATION_CAP }
    }
}

/// Checks the structural preconditions of a Byzantine run.
pub fn validate_setup(
    topology: &SystemTopology,
    model: &SignalModel,
    plan: &ByzantinePlan,
    c_set: &[usize],
    options: ByzantineOptions,
) -> Result<ByzantineSetup> {
    let f = plan.f_bound();
    let m_count = topology.m_count();
    if model.agents() != topology.n_agents() {
        return Err(Error::InvalidModel(alloc::format!(
            "model has {} agents, topology has {}",
            model.agents(),
            topology.n_agents()
        )));
    }
    let mut c_set = c_set.to_vec();
    c_set.sort_unstable();
    c_set.dedup();
    if let Some(&bad) = c_set.iter().find(|&&i| i >= m_count) {
        return Err(Error::AssumptionViolation(alloc::format!("C network {bad} does not exist")));
    }
    if c_set.len() < f + 1 {
        return Err(Error::AssumptionViolation(alloc::format!(
            "|C| = {} but at least F+1 = {} certified networks are required",
            c_set.len(),
            f + 1
        )));
    }
    if let Some(a) = plan.faulty().find(|&a| a >= topology.n_agents()) {
        return Err(Error::InvalidParameter(alloc::format!("faulty agent {a} does not exist")));
    }
    let in_c_network: Vec<bool> = (0..m_count).map(|i| c_set.contains(&i)).collect();
    let in_c: Vec<bool> = (0..topology.n_agents()).map(|j| in_c_network[topology.network_of(j)]).collect();
    for &i in &c_set {
        for &j in topology.sub_networks()[i].agents() {
            if topology.in_degree(j) < 2 * f + 1 {
                return Err(Error::TooFewNeighbors { agent: j, got: topology.in_degree(j), needed: 2 * f + 1 });
            }
        }
    }
    if m_count <= 2 * f {
        let outside = in_c.iter().filter(|&&c| !c).count();
        let needed = 2 * f + 1 - c_set.len().min(2 * f + 1);
        if outside < needed {
            return Err(Error::AssumptionViolation(alloc::format!(
                "{needed} representatives needed outside C but only {outside} agents exist there"
            )));
        }
    }

    let mut certificates = Vec::new();
    let mut constants = None;
    if options.certify {
        for &i in &c_set {
            let net = &topology.sub_networks()[i];
            certificates.push((i, certify_byzantine_network(net, f, model, options.enumeration_cap)?));
        }
        let beta = c_set
            .iter()
            .flat_map(|&i| topology.sub_networks()[i].agents().iter().copied())
            .filter(|&j| !plan.is_faulty(j))
            .map(|j| 1.0 / (2.0 * (topology.in_degree(j) - 2 * f) as f64 + 1.0))
            .fold(f64::INFINITY, f64::min);
        let min_source_kl =
            certificates.iter().map(|(_, c)| c.min_source_kl).fold(f64::INFINITY, f64::min);
        let per_network = certificates
            .iter()
            .map(|(i, cert)| {
                let faulty = topology.sub_networks()[*i].agents().iter().filter(|&&j| plan.is_faulty(j)).count();
                let rate = 0.5 * math::powi(beta, (cert.chi * faulty) as i64) * min_source_kl;
                (*i, cert.chi, faulty, rate)
            })
            .collect();
        constants = Some(GrowthConstants { beta, min_source_kl, per_network });
    }
    Ok(ByzantineSetup { c_set, f_bound: f, in_c, certificates, constants })
}

/// One fusion round of the server.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipRecord {
    pub round: usize,
    pub representatives: Vec<AgentId>,
    /// Per pair, in [`hypothesis_pairs`] order.
    pub outcomes: Vec<GossipOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ByzantineTrace {
    pub pairs: Vec<(HypothesisId, HypothesisId)>,
    /// `r[t-1][agent][pair]`; entries of faulty agents hold their honest
    /// shadow state.
    pub r: Vec<Vec<Vec<f64>>>,
    /// `decoded[t-1][agent]`.
    pub decoded: Vec<Vec<Option<HypothesisId>>>,
    pub gossip: Vec<GossipRecord>,
    /// Times each agent was picked as a representative.
    pub sample_counts: Vec<usize>,
    pub setup: ByzantineSetup,
    pub faulty: Vec<bool>,
}

impl ByzantineTrace {
    pub fn rounds(&self) -> usize {
        self.r.len()
    }

    /// First round from which `agent` decodes `truth` through the end.
    pub fn stable_from(&self, agent: AgentId, truth: HypothesisId) -> Option<usize> {
        let mut from = None;
        for (t, row) in self.decoded.iter().enumerate() {
            if row[agent] == Some(truth) {
                from.get_or_insert(t + 1);
            } else {
                from = None;
            }
        }
        from
    }

    pub fn normal_agents(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.faulty.iter().enumerate().filter(|(_, &f)| !f).map(|(j, _)| j)
    }
}

/// Runs every pairwise dynamic for `rounds` rounds.
pub fn run_byzantine_learning(
    topology: &SystemTopology,
    model: &SignalModel,
    plan: &ByzantinePlan,
    c_set: &[usize],
    rounds: usize,
    seeds: &SeedStreams,
    options: ByzantineOptions,
) -> Result<ByzantineTrace> {
    let setup = validate_setup(topology, model, plan, c_set, options)?;
    let n = topology.n_agents();
    let m = model.hypotheses();
    let f = setup.f_bound;
    let pairs = hypothesis_pairs(m);
    let faulty: Vec<bool> = (0..n).map(|j| plan.is_faulty(j)).collect();
    let in_c_network: Vec<bool> = (0..topology.m_count()).map(|i| setup.c_set.contains(&i)).collect();
    let normal_count = faulty.iter().filter(|&&b| !b).count().max(1) as f64;

    let mut signal_rngs: Vec<_> = (0..n).map(|j| seeds.signals(j)).collect();
    let mut byz_rngs: Vec<_> = (0..n).map(|j| seeds.byzantine(j)).collect();
    let mut sampling = seeds.sampling();
    let links = topology.links();

    let mut states: Vec<PairwiseState> = vec![PairwiseState::new(m); n];
    let mut trace_r = Vec::with_capacity(rounds);
    let mut decoded = Vec::with_capacity(rounds);
    let mut gossip = Vec::new();
    let mut sample_counts = vec![0; n];

    for t in 1..=rounds {
        let signals: Vec<usize> = (0..n).map(|j| sample_signal(model, j, &mut signal_rngs[j])).collect();
        let consensus: Vec<f64> = (0..pairs.len())
            .map(|p| (0..n).filter(|&j| !faulty[j]).map(|j| states[j].values()[p]).sum::<f64>() / normal_count)
            .collect();
        let prev = states.clone();

        for j in (0..n).filter(|&j| setup.in_c[j]) {
            for (p, &(a, b)) in pairs.iter().enumerate() {
                let mut incoming = Vec::with_capacity(topology.in_degree(j));
                for &l in topology.in_links(j) {
                    let k = links[l].0;
                    let honest = prev[k].values()[p];
                    let value = if faulty[k] {
                        let input = ForgeInput { honest_value: honest, honest_consensus: consensus[p] };
                        forge(plan, k, Receiver::Agent(j), input, t, &mut byz_rngs[k])?
                    } else {
                        honest
                    };
                    incoming.push((value, k));
                }
                let llr = model.log_likelihood(j, signals[j], a) - model.log_likelihood(j, signals[j], b);
                let step = agent_pair_step(j, prev[j].values()[p], &incoming, llr, f)?;
                states[j].values_mut()[p] = step.value;
            }
        }

        if t % topology.gamma() == 0 {
            let reps = sample_representatives(topology, &in_c_network, f, &mut sampling);
            for &rep in &reps {
                sample_counts[rep] += 1;
            }
            let mut outcomes = Vec::with_capacity(pairs.len());
            for p in 0..pairs.len() {
                let mut answers = Vec::with_capacity(reps.len());
                for &rep in &reps {
                    let honest = states[rep].values()[p];
                    answers.push(if faulty[rep] {
                        let input = ForgeInput { honest_value: honest, honest_consensus: consensus[p] };
                        forge(plan, rep, Receiver::Server, input, t, &mut byz_rngs[rep])?
                    } else {
                        honest
                    });
                }
                let mut column: Vec<f64> = states.iter().map(|s| s.values()[p]).collect();
                outcomes.push(ps_gossip_round(&mut column, &reps, &answers, &setup.in_c, f)?);
                for &rep in &reps {
                    states[rep].values_mut()[p] = column[rep];
                }
            }
            gossip.push(GossipRecord { round: t, representatives: reps, outcomes });
        }

        trace_r.push(states.iter().map(|s| s.values().to_vec()).collect());
        decoded.push(states.iter().map(PairwiseState::decode).collect());
    }

    Ok(ByzantineTrace { pairs, r: trace_r, decoded, gossip, sample_counts, setup, faulty })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faults::{Strategy, DEFAULT_EXTREME};
    use crate::topology::SubNetwork;

    #[test]
    fn pair_indexing_round_trips() {
        let pairs = hypothesis_pairs(4);
        assert_eq!(pairs.len(), 12);
        for (i, &(a, b)) in pairs.iter().enumerate() {
            assert_eq!(pair_index(4, a, b), i);
        }
    }

    #[test]
    fn trimmed_filter_examples() {
        let v: Vec<(f64, AgentId)> = [1.0, 5.0, 3.0, 9.0, 2.0].iter().copied().zip(0..).collect();
        let kept: Vec<f64> = trimmed_filter(&v, 1).unwrap().into_iter().map(|(x, _)| x).collect();
        assert_eq!(kept, vec![2.0, 3.0, 5.0]);
        let same: Vec<(f64, AgentId)> = (0..7).map(|i| (4.0, i)).collect();
        let kept = trimmed_filter(&same, 2).unwrap();
        assert_eq!(kept, vec![(4.0, 2), (4.0, 3), (4.0, 4)]);
        assert_eq!(trimmed_filter(&v[..2], 1), Err(Error::TooFewValues { got: 2, needed: 3, f_bound: 1 }));
    }

    #[test]
    fn pair_step_examples() {
        let step = agent_pair_step(0, 2.0, &[(2.0, 1), (2.0, 2), (2.0, 3)], 0.0, 1).unwrap();
        assert_eq!(step.value, 2.0);
        let plain = agent_pair_step(0, 1.0, &[(2.0, 1), (6.0, 2)], 0.5, 0).unwrap();
        assert_eq!(plain.value, 3.0 + 0.5);
        assert_eq!(
            agent_pair_step(4, 0.0, &[(1.0, 1), (1.0, 2)], 0.0, 1),
            Err(Error::TooFewNeighbors { agent: 4, got: 2, needed: 3 })
        );
    }

    #[test]
    fn gossip_example() {
        let mut r = vec![0.0, 10.0, 20.0];
        let out = ps_gossip_round(&mut r.clone(), &[0, 1, 2], &[0.0, 10.0, 20.0], &[true, true, false], 1).unwrap();
        assert_eq!(out.trimmed_mean, 10.0);
        ps_gossip_round(&mut r, &[0, 1, 2], &[0.0, 10.0, 20.0], &[true, true, false], 1).unwrap();
        assert_eq!(r, vec![0.0, 10.0, 10.0]);
    }

    #[test]
    fn decode_handles_ties() {
        let mut s = PairwiseState::new(3);
        assert_eq!(s.decode(), None);
        s.set(1, 0, 2.0);
        s.set(1, 2, 3.0);
        s.set(0, 1, -2.0);
        s.set(2, 1, -3.0);
        assert_eq!(s.decode(), Some(1));
    }

    fn three_k4() -> SystemTopology {
        SystemTopology::new(
            vec![SubNetwork::complete(0, 4), SubNetwork::complete(4, 4), SubNetwork::complete(8, 4)],
            vec![0, 4, 8],
            1,
            1,
        )
        .unwrap()
    }

    fn informative(n: usize) -> SignalModel {
        let table = vec![vec![0.6, 0.3, 0.1], vec![0.2, 0.5, 0.3], vec![0.1, 0.3, 0.6]];
        SignalModel::new(3, 0, vec![table; n]).unwrap()
    }

    #[test]
    fn c_set_too_small_rejected() {
        let topo = three_k4();
        let plan = ByzantinePlan::honest(1);
        let err = validate_setup(&topo, &informative(12), &plan, &[0], ByzantineOptions::default());
        assert!(matches!(err, Err(Error::AssumptionViolation(_))));
    }

    #[test]
    fn extreme_neighbour_is_always_trimmed() {
        let topo = three_k4();
        let model = informative(12);
        let plan = ByzantinePlan::new(1, vec![(1, Strategy::Constant(DEFAULT_EXTREME))]).unwrap();
        let trace =
            run_byzantine_learning(&topo, &model, &plan, &[0, 1], 100, &SeedStreams::new(4), ByzantineOptions::default())
                .unwrap();
        for row in &trace.r {
            for j in [0, 2, 3] {
                assert!(row[j].iter().all(|v| v.abs() < 1e3));
            }
        }
    }

    #[test]
    fn sampling_branches() {
        let topo = three_k4();
        let mut rng = SeedStreams::new(1).sampling();
        let reps = sample_representatives(&topo, &[true, true, false], 1, &mut rng);
        assert_eq!(reps.len(), 3);
        for (i, rep) in reps.iter().enumerate() {
            assert_eq!(topo.network_of(*rep), i);
        }
        let reps = sample_representatives(&topo, &[true, true, false], 2, &mut rng);
        assert_eq!(reps.len(), 5);
        assert!(reps[2..].iter().all(|&r| topo.network_of(r) == 2));
        let mut extras = reps[2..].to_vec();
        extras.sort_unstable();
        extras.dedup();
        assert_eq!(extras.len(), 3);
    }
}
