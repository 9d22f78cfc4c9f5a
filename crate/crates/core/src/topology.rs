//! Hierarchical system structure: sub-networks, designated agents, graph
//! metrics, reduced graphs and the source-component certification used to
//! admit a sub-network into the Byzantine-resilient set.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::signals::{SignalModel, KL_TOLERANCE};
use crate::{AgentId, Error, HypothesisId, Result};

/// Default cap on the number of reduced graphs a certification may enumerate.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// A directed link `(from, to)`.
pub type Link = (AgentId, AgentId);

/// One sub-network `G(V_i, E_i)`: its agents and the full directed edge set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubNetwork {
    agents: Vec<AgentId>,
    edges: Vec<Link>,
}

impl SubNetwork {
    /// Builds a sub-network. Edges are sorted and deduplicated; self-loops and
    /// edges leaving the agent set are rejected.
    pub fn new(agents: Vec<AgentId>, edges: Vec<Link>) -> Result<Self> {
        let mut sorted_agents = agents.clone();
        sorted_agents.sort_unstable();
        sorted_agents.dedup();
        if sorted_agents.len() != agents.len() {
            return Err(Error::InvalidTopology("duplicate agent in sub-network".into()));
        }
        if agents.is_empty() {
            return Err(Error::InvalidTopology("empty sub-network".into()));
        }
        let mut edges = edges;
        for &(from, to) in &edges {
            if from == to {
                return Err(Error::InvalidTopology(format!("self-loop on agent {from}")));
            }
            if !agents.contains(&from) || !agents.contains(&to) {
                return Err(Error::InvalidTopology(format!(
                    "edge {from} -> {to} leaves its sub-network"
                )));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self { agents, edges })
    }

    /// Bidirectional ring over `n` agents starting at id `first`.
    pub fn ring(first: AgentId, n: usize) -> Self {
        let agents: Vec<AgentId> = (first..first + n).collect();
        let mut edges = Vec::new();
        if n == 2 {
            edges.push((first, first + 1));
            edges.push((first + 1, first));
        } else if n > 2 {
            for k in 0..n {
                let a = first + k;
                let b = first + (k + 1) % n;
                edges.push((a, b));
                edges.push((b, a));
            }
        }
        Self::new(agents, edges).expect("ring is well formed")
    }

    /// Directed cycle `first -> first+1 -> ... -> first`.
    pub fn directed_ring(first: AgentId, n: usize) -> Self {
        let agents: Vec<AgentId> = (first..first + n).collect();
        let edges = if n < 2 {
            Vec::new()
        } else {
            (0..n).map(|k| (first + k, first + (k + 1) % n)).collect()
        };
        Self::new(agents, edges).expect("directed ring is well formed")
    }

    /// Complete digraph over `n` agents starting at id `first`.
    pub fn complete(first: AgentId, n: usize) -> Self {
        let agents: Vec<AgentId> = (first..first + n).collect();
        let mut edges = Vec::new();
        for a in first..first + n {
            for b in first..first + n {
                if a != b {
                    edges.push((a, b));
                }
            }
        }
        Self::new(agents, edges).expect("complete graph is well formed")
    }

    pub fn agents(&self) -> &[AgentId] {
        &self.agents
    }

    pub fn edges(&self) -> &[Link] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn contains(&self, agent: AgentId) -> bool {
        self.agents.contains(&agent)
    }

    pub fn in_neighbors(&self, agent: AgentId) -> impl Iterator<Item = AgentId> + '_ {
        self.edges.iter().filter(move |e| e.1 == agent).map(|e| e.0)
    }

    pub fn out_neighbors(&self, agent: AgentId) -> impl Iterator<Item = AgentId> + '_ {
        self.edges.iter().filter(move |e| e.0 == agent).map(|e| e.1)
    }

    pub fn out_degree(&self, agent: AgentId) -> usize {
        self.out_neighbors(agent).count()
    }

    pub fn in_degree(&self, agent: AgentId) -> usize {
        self.in_neighbors(agent).count()
    }

    /// Longest shortest path, or `None` if some ordered pair is unreachable.
    pub fn diameter(&self) -> Option<usize> {
        let n = self.agents.len();
        let local = |a: AgentId| self.agents.iter().position(|&x| x == a).expect("member");
        let mut adj = vec![Vec::new(); n];
        for &(from, to) in &self.edges {
            adj[local(from)].push(local(to));
        }
        let mut diameter = 0;
        for source in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[source] = 0;
            let mut queue = VecDeque::from([source]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            for &d in &dist {
                if d == usize::MAX {
                    return None;
                }
                diameter = diameter.max(d);
            }
        }
        Some(diameter)
    }
}

/// The whole hierarchical system: `M` sub-networks, one designated agent per
/// sub-network, fusion period `Γ` and link-reliability window `B`.
///
/// Agent ids are dense `0..N` and assigned in sub-network order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemTopology {
    sub_networks: Vec<SubNetwork>,
    designated: Vec<AgentId>,
    gamma: usize,
    window_b: usize,
    network_of: Vec<usize>,
    links: Vec<Link>,
    in_links: Vec<Vec<usize>>,
    out_links: Vec<Vec<usize>>,
}

impl SystemTopology {
    pub fn new(
        sub_networks: Vec<SubNetwork>,
        designated: Vec<AgentId>,
        gamma: usize,
        window_b: usize,
    ) -> Result<Self> {
        if sub_networks.is_empty() {
            return Err(Error::InvalidTopology("at least one sub-network is required".into()));
        }
        if gamma == 0 {
            return Err(Error::InvalidTopology("fusion period must be >= 1".into()));
        }
        if window_b == 0 {
            return Err(Error::InvalidTopology("reliability window must be >= 1".into()));
        }
        if designated.len() != sub_networks.len() {
            return Err(Error::InvalidTopology(format!(
                "{} designated agents for {} sub-networks",
                designated.len(),
                sub_networks.len()
            )));
        }
        let mut next = 0;
        let mut network_of = Vec::new();
        for (i, net) in sub_networks.iter().enumerate() {
            for &agent in net.agents() {
                if agent != next {
                    return Err(Error::InvalidTopology(format!(
                        "agent ids must be dense and in sub-network order; expected {next}, found {agent}"
                    )));
                }
                network_of.push(i);
                next += 1;
            }
            if !net.contains(designated[i]) {
                return Err(Error::InvalidTopology(format!(
                    "designated agent {} is not in sub-network {i}",
                    designated[i]
                )));
            }
        }
        let n = next;
        let links: Vec<Link> = sub_networks.iter().flat_map(|s| s.edges().iter().copied()).collect();
        let mut in_links = vec![Vec::new(); n];
        let mut out_links = vec![Vec::new(); n];
        for (idx, &(from, to)) in links.iter().enumerate() {
            out_links[from].push(idx);
            in_links[to].push(idx);
        }
        Ok(Self { sub_networks, designated, gamma, window_b, network_of, links, in_links, out_links })
    }

    /// Builds a topology with `Γ = B·D*` (at least 1).
    pub fn with_auto_gamma(
        sub_networks: Vec<SubNetwork>,
        designated: Vec<AgentId>,
        window_b: usize,
    ) -> Result<Self> {
        let mut d_star = 0;
        for (i, net) in sub_networks.iter().enumerate() {
            d_star = d_star.max(net.diameter().ok_or(Error::NotStronglyConnected(i))?);
        }
        Self::new(sub_networks, designated, (window_b * d_star).max(1), window_b)
    }

    pub fn sub_networks(&self) -> &[SubNetwork] {
        &self.sub_networks
    }

    pub fn designated(&self) -> &[AgentId] {
        &self.designated
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn window_b(&self) -> usize {
        self.window_b
    }

    /// Number of sub-networks `M`.
    pub fn m_count(&self) -> usize {
        self.sub_networks.len()
    }

    /// Total number of agents `N`.
    pub fn n_agents(&self) -> usize {
        self.network_of.len()
    }

    pub fn network_of(&self, agent: AgentId) -> usize {
        self.network_of[agent]
    }

    /// All directed links `∪ E_i`, in sub-network order then sorted. Link
    /// indices used by schedules and the oracle refer to this list.
    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn in_links(&self, agent: AgentId) -> &[usize] {
        &self.in_links[agent]
    }

    pub fn out_links(&self, agent: AgentId) -> &[usize] {
        &self.out_links[agent]
    }

    pub fn out_degree(&self, agent: AgentId) -> usize {
        self.out_links[agent].len()
    }

    pub fn in_degree(&self, agent: AgentId) -> usize {
        self.in_links[agent].len()
    }

    pub fn is_designated(&self, agent: AgentId) -> bool {
        self.designated.contains(&agent)
    }
}

/// Constants of the geometric consensus rate.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMetrics {
    pub diameters: Vec<usize>,
    pub d_star: usize,
    /// `β_i = 1 / max_j (d_j + 1)²` with out-degrees from the full edge set.
    pub betas: Vec<f64>,
    /// `γ = 1 − (min β)^{2 D* B} / (4 M²)`.
    pub gamma_rate: f64,
    pub m_count: usize,
    pub window_b: usize,
    /// Fusion period `Γ` of the topology the metrics were computed for.
    pub fusion_period: usize,
}

impl GraphMetrics {
    pub fn min_beta(&self) -> f64 {
        self.betas.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `(min β)^{2 D* B}`.
    pub fn beta_power(&self) -> f64 {
        math::powi(self.min_beta(), (2 * self.d_star * self.window_b) as i64)
    }

    /// Entry floor of long matrix products: `(min β)^{2 D* B} / (4 M²)`.
    pub fn entry_floor(&self) -> f64 {
        let m = self.m_count as f64;
        self.beta_power() / (4.0 * m * m)
    }
}

/// Diameters, `β_i` and the contraction rate `γ`. Every sub-network must be
/// strongly connected.
pub fn compute_metrics(topology: &SystemTopology) -> Result<GraphMetrics> {
    let mut diameters = Vec::with_capacity(topology.m_count());
    let mut betas = Vec::with_capacity(topology.m_count());
    for (i, net) in topology.sub_networks().iter().enumerate() {
        diameters.push(net.diameter().ok_or(Error::NotStronglyConnected(i))?);
        let max_deg = net.agents().iter().map(|&a| topology.out_degree(a)).max().unwrap_or(0);
        let denom = (max_deg + 1) as f64;
        betas.push(1.0 / (denom * denom));
    }
    let d_star = diameters.iter().copied().max().unwrap_or(0);
    let mut metrics = GraphMetrics {
        diameters,
        d_star,
        betas,
        gamma_rate: 0.0,
        m_count: topology.m_count(),
        window_b: topology.window_b(),
        fusion_period: topology.gamma(),
    };
    metrics.gamma_rate = 1.0 - metrics.entry_floor();
    Ok(metrics)
}

/// The graph left after deleting a faulty set, its incident links, and up to
/// `F` further incoming links at every surviving agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReducedGraph {
    pub kept_agents: Vec<AgentId>,
    pub kept_edges: Vec<Link>,
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub(crate) fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= n {
        go(0, n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Surviving agents and, per surviving agent, its surviving incoming links.
fn surviving_in_links(net: &SubNetwork, faulty: &[AgentId]) -> (Vec<AgentId>, Vec<Vec<Link>>) {
    let kept: Vec<AgentId> = net.agents().iter().copied().filter(|a| !faulty.contains(a)).collect();
    let incoming = kept
        .iter()
        .map(|&a| {
            net.edges()
                .iter()
                .copied()
                .filter(|&(from, to)| to == a && !faulty.contains(&from))
                .collect()
        })
        .collect();
    (kept, incoming)
}

/// Number of reduced graphs for one faulty placement, without enumerating.
pub fn reduced_graph_count(net: &SubNetwork, faulty: &[AgentId], f_bound: usize) -> u128 {
    let (_, incoming) = surviving_in_links(net, faulty);
    incoming
        .iter()
        .map(|links| binomial(links.len(), f_bound.min(links.len())))
        .fold(1u128, |acc, c| acc.saturating_mul(c))
}

/// Exhaustive, duplicate-free enumeration of the reduced graphs of `net` for
/// the faulty set `faulty`. `χ` is the length of the returned list.
pub fn enumerate_reduced_graphs(
    net: &SubNetwork,
    faulty: &[AgentId],
    f_bound: usize,
    cap: usize,
) -> Result<Vec<ReducedGraph>> {
    let count = reduced_graph_count(net, faulty, f_bound);
    if count > cap as u128 {
        return Err(Error::ExplosionGuard { count, cap });
    }
    let (kept_agents, incoming) = surviving_in_links(net, faulty);
    // Per agent: every admissible set of kept incoming links.
    let choices: Vec<Vec<Vec<Link>>> = incoming
        .iter()
        .map(|links| {
            let remove = f_bound.min(links.len());
            combinations(links.len(), remove)
                .into_iter()
                .map(|dropped| {
                    links
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| !dropped.contains(i))
                        .map(|(_, &l)| l)
                        .collect()
                })
                .collect()
        })
        .collect();

    let mut out = Vec::with_capacity(count as usize);
    let mut odometer = vec![0usize; choices.len()];
    loop {
        let mut kept_edges: Vec<Link> = odometer
            .iter()
            .zip(&choices)
            .flat_map(|(&pick, options)| options[pick].iter().copied())
            .collect();
        kept_edges.sort_unstable();
        out.push(ReducedGraph { kept_agents: kept_agents.clone(), kept_edges });

        let mut pos = 0;
        loop {
            if pos == odometer.len() {
                return Ok(out);
            }
            odometer[pos] += 1;
            if odometer[pos] < choices[pos].len() {
                break;
            }
            odometer[pos] = 0;
            pos += 1;
        }
    }
}

/// Strongly connected components (Tarjan) of the reduced graph, as lists of
/// agent ids. Components come out in reverse topological order.
pub fn strongly_connected_components(rg: &ReducedGraph) -> Vec<Vec<AgentId>> {
    struct Tarjan<'a> {
        adj: &'a [Vec<usize>],
        index: usize,
        idx: Vec<Option<usize>>,
        low: Vec<usize>,
        stack: Vec<usize>,
        on_stack: Vec<bool>,
        comps: Vec<Vec<usize>>,
    }

    impl Tarjan<'_> {
        fn visit(&mut self, v: usize) {
            self.idx[v] = Some(self.index);
            self.low[v] = self.index;
            self.index += 1;
            self.stack.push(v);
            self.on_stack[v] = true;
            for k in 0..self.adj[v].len() {
                let w = self.adj[v][k];
                match self.idx[w] {
                    None => {
                        self.visit(w);
                        self.low[v] = self.low[v].min(self.low[w]);
                    }
                    Some(iw) if self.on_stack[w] => self.low[v] = self.low[v].min(iw),
                    Some(_) => {}
                }
            }
            if Some(self.low[v]) == self.idx[v] {
                let mut comp = Vec::new();
                loop {
                    let w = self.stack.pop().expect("tarjan stack underflow");
                    self.on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                self.comps.push(comp);
            }
        }
    }

    let n = rg.kept_agents.len();
    let local = |a: AgentId| rg.kept_agents.iter().position(|&x| x == a).expect("kept agent");
    let mut adj = vec![Vec::new(); n];
    for &(from, to) in &rg.kept_edges {
        adj[local(from)].push(local(to));
    }
    let mut t = Tarjan {
        adj: &adj,
        index: 0,
        idx: vec![None; n],
        low: vec![0; n],
        stack: Vec::new(),
        on_stack: vec![false; n],
        comps: Vec::new(),
    };
    for v in 0..n {
        if t.idx[v].is_none() {
            t.visit(v);
        }
    }
    t.comps
        .into_iter()
        .map(|c| {
            let mut ids: Vec<AgentId> = c.into_iter().map(|i| rg.kept_agents[i]).collect();
            ids.sort_unstable();
            ids
        })
        .collect()
}

/// Components of the condensation with no incoming edge from another component.
pub fn source_components(rg: &ReducedGraph) -> Vec<Vec<AgentId>> {
    let comps = strongly_connected_components(rg);
    let comp_of = |a: AgentId| comps.iter().position(|c| c.contains(&a)).expect("covered");
    let mut has_incoming = vec![false; comps.len()];
    for &(from, to) in &rg.kept_edges {
        let (cf, ct) = (comp_of(from), comp_of(to));
        if cf != ct {
            has_incoming[ct] = true;
        }
    }
    let mut sources: Vec<Vec<AgentId>> = comps
        .into_iter()
        .zip(has_incoming)
        .filter(|(_, incoming)| !incoming)
        .map(|(c, _)| c)
        .collect();
    sources.sort();
    sources
}

pub fn has_unique_source_component(rg: &ReducedGraph) -> bool {
    source_components(rg).len() == 1
}

/// One failing case found during certification.
#[derive(Debug, Clone, PartialEq)]
pub enum CertFailure {
    /// A reduced graph with zero or several source components.
    NoUniqueSource { faulty: Vec<AgentId>, graph: ReducedGraph, sources: usize },
    /// The unique source cannot tell `theta` apart from the truth.
    SourceNotInformative {
        theta: HypothesisId,
        faulty: Vec<AgentId>,
        graph: ReducedGraph,
        source: Vec<AgentId>,
        kl_sum: f64,
    },
}

/// Outcome of a successful certification.
#[derive(Debug, Clone, PartialEq)]
pub struct CertReport {
    pub f_bound: usize,
    /// Number of faulty placements `|A| <= F` examined.
    pub placements: usize,
    /// Reduced graphs examined over every placement.
    pub reduced_graphs: usize,
    /// `χ`: reduced graphs of the fault-free placement.
    pub chi: usize,
    /// Minimal source drift: min over `θ ≠ θ*` and reduced graphs of the
    /// source component's summed `D_KL(ℓ(·|θ*) ‖ ℓ(·|θ))`.
    pub min_source_kl: f64,
}

/// Checks that every reduced graph (over every faulty placement of size at
/// most `f_bound`) has exactly one source component and that this source can
/// separate every wrong hypothesis from the truth.
pub fn certify_byzantine_network(
    net: &SubNetwork,
    f_bound: usize,
    model: &SignalModel,
    cap: usize,
) -> Result<CertReport> {
    let agents = net.agents();
    let mut placements = Vec::new();
    for size in 0..=f_bound.min(agents.len()) {
        for combo in combinations(agents.len(), size) {
            placements.push(combo.into_iter().map(|i| agents[i]).collect::<Vec<_>>());
        }
    }
    let total: u128 = placements
        .iter()
        .map(|a| reduced_graph_count(net, a, f_bound))
        .fold(0u128, |acc, c| acc.saturating_add(c));
    if total > cap as u128 {
        return Err(Error::ExplosionGuard { count: total, cap });
    }

    let truth = model.truth();
    let mut failures = Vec::new();
    let mut min_source_kl = f64::INFINITY;
    let mut chi = 0;
    let mut examined = 0;
    for faulty in &placements {
        let graphs = enumerate_reduced_graphs(net, faulty, f_bound, cap)?;
        if faulty.is_empty() {
            chi = graphs.len();
        }
        examined += graphs.len();
        for graph in graphs {
            let sources = source_components(&graph);
            if sources.len() != 1 {
                failures.push(CertFailure::NoUniqueSource {
                    faulty: faulty.clone(),
                    graph,
                    sources: sources.len(),
                });
                continue;
            }
            let source = &sources[0];
            for theta in (0..model.hypotheses()).filter(|&t| t != truth) {
                let kl_sum: f64 =
                    source.iter().map(|&j| model.agent_kl(j, truth, theta)).sum();
                min_source_kl = min_source_kl.min(kl_sum);
                if kl_sum <= KL_TOLERANCE {
                    failures.push(CertFailure::SourceNotInformative {
                        theta,
                        faulty: faulty.clone(),
                        graph: graph.clone(),
                        source: source.clone(),
                        kl_sum,
                    });
                }
            }
        }
    }
    if !failures.is_empty() {
        return Err(Error::ToleranceViolation(failures));
    }
    Ok(CertReport { f_bound, placements: placements.len(), reduced_graphs: examined, chi, min_source_kl })
}
