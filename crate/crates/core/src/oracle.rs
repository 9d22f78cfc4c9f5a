//! Matrix-level reference model of HPS on the augmented graph.
//!
//! The augmented graph has the `N` real agents followed by one virtual node
//! per directed link, holding whatever the sender has pushed onto the link but
//! the receiver has not yet absorbed. One round of HPS is then a
//! column-stochastic matrix `M[t]` acting on the stacked state, with
//! `M[t] = F·M̄[t]` on fusion rounds. Everything here is built from the
//! matrix entries alone and never calls into [`crate::pushsum`], so the two can
//! be checked against each other.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::faults::DropSchedule;
use crate::math;
use crate::signals::SignalModel;
use crate::topology::{GraphMetrics, Link, SystemTopology};
use crate::{AgentId, Error, HypothesisId, Result};

/// Largest augmented system the oracle will build.
pub const MAX_AUGMENTED: usize = 200;

/// Row-stochasticity tolerance for the ergodic coefficients.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self { rows: rows.len(), cols, data: rows.iter().flatten().copied().collect() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "dimension mismatch");
        (0..self.rows).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// `Aᵀ x` without materialising the transpose.
    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        sums
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Minimum over a rectangular block.
    pub fn min_entry_in_block(&self, rows: core::ops::Range<usize>, cols: core::ops::Range<usize>) -> f64 {
        let mut min = f64::INFINITY;
        for i in rows {
            for &v in &self.row(i)[cols.clone()] {
                min = min.min(v);
            }
        }
        min
    }
}

/// Plain-text dump: one row per line, entries separated by single spaces.
impl fmt::Display for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            for (j, v) in self.row(i).iter().enumerate() {
                if j > 0 {
                    f.write_str(" ")?;
                }
                write!(f, "{v}")?;
            }
            f.write_str("\n")?;
        }
        Ok(())
    }
}

/// Index bookkeeping for the augmented graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    n_real: usize,
    links: Vec<Link>,
    in_links: Vec<Vec<usize>>,
    out_degree: Vec<usize>,
    designated: Vec<AgentId>,
    m_count: usize,
    gamma: usize,
}

impl AugmentedSystem {
    pub fn new(topology: &SystemTopology) -> Result<Self> {
        let n_real = topology.n_agents();
        let links = topology.links().to_vec();
        let size = n_real + links.len();
        if size > MAX_AUGMENTED {
            return Err(Error::InstanceTooLarge { size, cap: MAX_AUGMENTED });
        }
        let mut in_links = vec![Vec::new(); n_real];
        let mut out_degree = vec![0; n_real];
        for (l, &(from, to)) in links.iter().enumerate() {
            in_links[to].push(l);
            out_degree[from] += 1;
        }
        Ok(Self {
            n_real,
            links,
            in_links,
            out_degree,
            designated: topology.designated().to_vec(),
            m_count: topology.m_count(),
            gamma: topology.gamma(),
        })
    }

    pub fn n_real(&self) -> usize {
        self.n_real
    }

    pub fn n_virtual(&self) -> usize {
        self.links.len()
    }

    /// `Ñ = N + Σ|E_i|`.
    pub fn n_total(&self) -> usize {
        self.n_real + self.links.len()
    }

    /// Augmented index of the virtual node carrying `link`.
    pub fn virtual_index(&self, link: usize) -> usize {
        self.n_real + link
    }

    /// Link carried by augmented node `index`, if it is virtual.
    pub fn link_of(&self, index: usize) -> Option<Link> {
        index.checked_sub(self.n_real).and_then(|l| self.links.get(l).copied())
    }

    pub fn is_fusion_round(&self, round: usize) -> bool {
        round.is_multiple_of(self.gamma)
    }

    /// `M̄[t]` from the operational flags of the round (column = source,
    /// row = destination).
    pub fn unfused_matrix(&self, operational: &[bool]) -> DenseMatrix {
        assert_eq!(operational.len(), self.links.len(), "one flag per link");
        let n = self.n_total();
        let mut m = DenseMatrix::zeros(n, n);
        let k = |j: AgentId| (self.out_degree[j] + 1) as f64;
        for j in 0..self.n_real {
            let kj = k(j);
            m.add(j, j, 1.0 / (kj * kj));
            for &l in &self.in_links[j] {
                let from = self.links[l].0;
                let b = if operational[l] { 1.0 } else { 0.0 };
                m.add(j, from, b / (kj * k(from)));
                m.add(j, self.virtual_index(l), b / kj);
            }
        }
        for (l, &(from, _)) in self.links.iter().enumerate() {
            let v = self.virtual_index(l);
            let kf = k(from);
            let b = if operational[l] { 1.0 } else { 0.0 };
            m.add(v, from, 1.0 / (kf * kf) + (1.0 - b) / kf);
            m.add(v, v, 1.0 - b);
            for &l_in in &self.in_links[from] {
                let src = self.links[l_in].0;
                let b_in = if operational[l_in] { 1.0 } else { 0.0 };
                m.add(v, src, b_in / (k(src) * kf));
                m.add(v, self.virtual_index(l_in), b_in / kf);
            }
        }
        m
    }

    /// Fusion matrix `F` extended to `Ñ×Ñ`.
    pub fn fusion_matrix(&self) -> DenseMatrix {
        let n = self.n_total();
        let mut f = DenseMatrix::identity(n);
        let mc = self.m_count as f64;
        for &a in &self.designated {
            for &b in &self.designated {
                f.set(a, b, if a == b { (mc + 1.0) / (2.0 * mc) } else { 1.0 / (2.0 * mc) });
            }
        }
        f
    }

    /// `M[t]`, fused on rounds that are multiples of `Γ`.
    pub fn round_matrix(&self, schedule: &DropSchedule, round: usize) -> Result<DenseMatrix> {
        let bar = self.unfused_matrix(schedule.round(round)?);
        Ok(if self.is_fusion_round(round) { self.fusion_matrix().mul(&bar) } else { bar })
    }
}

/// `M[round]` for a topology and schedule.
pub fn build_round_matrix(
    topology: &SystemTopology,
    schedule: &DropSchedule,
    round: usize,
) -> Result<DenseMatrix> {
    AugmentedSystem::new(topology)?.round_matrix(schedule, round)
}

/// Precomputed `M[1..=T]`.
#[derive(Debug, Clone)]
pub struct RoundMatrices {
    system: AugmentedSystem,
    fusion: DenseMatrix,
    matrices: Vec<DenseMatrix>,
}

impl RoundMatrices {
    pub fn new(topology: &SystemTopology, schedule: &DropSchedule, horizon: usize) -> Result<Self> {
        let system = AugmentedSystem::new(topology)?;
        let matrices = (1..=horizon).map(|t| system.round_matrix(schedule, t)).collect::<Result<Vec<_>>>()?;
        let fusion = system.fusion_matrix();
        Ok(Self { system, fusion, matrices })
    }

    pub fn system(&self) -> &AugmentedSystem {
        &self.system
    }

    pub fn horizon(&self) -> usize {
        self.matrices.len()
    }

    /// `M[t]`, `1 ≤ t ≤ horizon`.
    pub fn matrix(&self, t: usize) -> &DenseMatrix {
        &self.matrices[t - 1]
    }

    /// `Ψ(r, t) = Mᵀ[r]·Mᵀ[r+1]⋯Mᵀ[t]`, identity when `r = t + 1`.
    pub fn psi(&self, r: usize, t: usize) -> DenseMatrix {
        assert!(r >= 1 && r <= t + 1 && t <= self.horizon(), "invalid product range");
        let mut p = DenseMatrix::identity(self.system.n_total());
        for tau in r..=t {
            p = p.mul(&self.matrix(tau).transpose());
        }
        p
    }

    /// Calls `visit(t, Ψ(r, t))` for `t = r..=t_max`, reusing each product.
    pub fn sweep_psi<V: FnMut(usize, &DenseMatrix)>(&self, r: usize, t_max: usize, mut visit: V) {
        let mut p = DenseMatrix::identity(self.system.n_total());
        for tau in r..=t_max {
            p = p.mul(&self.matrix(tau).transpose());
            visit(tau, &p);
        }
    }

    /// Stacked state after `t` rounds from `x0`: `Ψ(1,t)ᵀ x0`.
    pub fn propagate(&self, x0: &[f64], t: usize) -> Vec<f64> {
        self.psi(1, t).transpose_mul_vec(x0)
    }

    /// Accumulated injections on the augmented graph after `t` rounds,
    /// starting from zero: `Σ_{r=1}^{t} Ψ(r+1,t)ᵀ F_r L[r]`, where `F_r` is the
    /// fusion matrix on fusion rounds and the identity otherwise.
    /// `injections[r-1][j]` is agent `j`'s injected scalar at round `r`.
    pub fn reconstruct_injected(&self, injections: &[Vec<f64>], t: usize) -> Vec<f64> {
        let n = self.system.n_total();
        let mut total = vec![0.0; n];
        for r in 1..=t {
            let mut l = vec![0.0; n];
            l[..self.system.n_real].copy_from_slice(&injections[r - 1]);
            if self.system.is_fusion_round(r) {
                l = self.fusion.mul_vec(&l);
            }
            let contrib = self.psi(r + 1, t).transpose_mul_vec(&l);
            for (a, c) in total.iter_mut().zip(contrib) {
                *a += c;
            }
        }
        total
    }

    /// Masses after `t` rounds: real agents start at 1, virtual nodes at 0.
    pub fn reconstruct_mass(&self, t: usize) -> Vec<f64> {
        let mut x0 = vec![0.0; self.system.n_total()];
        x0[..self.system.n_real].iter_mut().for_each(|x| *x = 1.0);
        self.propagate(&x0, t)
    }
}

/// Result of scanning products `Ψ(r,t)` with `t − r + 1 ≥ 2Γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryScan {
    pub floor: f64,
    pub products: usize,
    /// Smallest entry over all scanned products.
    pub min_entry: f64,
    /// Smallest entry whose source and destination are both real agents.
    pub min_real_entry: f64,
    /// Number of scanned products whose real-agent block dips below the floor.
    pub real_violations: usize,
    /// `(r, t)` pairs whose product has an entry below the floor.
    pub violations: Vec<(usize, usize)>,
    /// Worst `(r, t)` pair.
    pub worst: Option<(usize, usize)>,
}

/// Checks every entry of `Ψ(r, t)` against `(min β)^{2D*B}/(4M²)` for all
/// `1 ≤ r ≤ t ≤ T` with `t − r + 1 ≥ 2Γ`.
pub fn scan_entry_floor(matrices: &RoundMatrices, metrics: &GraphMetrics) -> EntryScan {
    let floor = metrics.entry_floor();
    let window = 2 * metrics.fusion_period;
    let horizon = matrices.horizon();
    let n_real = matrices.system().n_real();
    let mut scan = EntryScan {
        floor,
        products: 0,
        min_entry: f64::INFINITY,
        min_real_entry: f64::INFINITY,
        real_violations: 0,
        violations: Vec::new(),
        worst: None,
    };
    for r in 1..=horizon {
        if r + window - 1 > horizon {
            break;
        }
        matrices.sweep_psi(r, horizon, |t, p| {
            if t + 1 < r + window {
                return;
            }
            scan.products += 1;
            let min = p.min_entry();
            if min < scan.min_entry {
                scan.min_entry = min;
                scan.worst = Some((r, t));
            }
            let real_min = p.min_entry_in_block(0..n_real, 0..n_real);
            scan.min_real_entry = scan.min_real_entry.min(real_min);
            if real_min < floor {
                scan.real_violations += 1;
            }
            if min < floor {
                scan.violations.push((r, t));
            }
        });
    }
    scan
}

/// Ergodic coefficients `(δ(A), λ(A))` of a row-stochastic matrix:
/// `δ = max_j max_{i₁,i₂} |A_{i₁j} − A_{i₂j}|` and
/// `λ = 1 − min_{i₁,i₂} Σ_j min(A_{i₁j}, A_{i₂j})`.
pub fn ergodic_coefficients(a: &DenseMatrix) -> Result<(f64, f64)> {
    for (row, sum) in a.row_sums().into_iter().enumerate() {
        if math::abs(sum - 1.0) > STOCHASTIC_TOLERANCE {
            return Err(Error::NotRowStochastic { row, sum });
        }
    }
    let mut delta: f64 = 0.0;
    for j in 0..a.cols() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..a.rows() {
            lo = lo.min(a.get(i, j));
            hi = hi.max(a.get(i, j));
        }
        delta = delta.max(hi - lo);
    }
    let mut overlap_min = f64::INFINITY;
    for i1 in 0..a.rows() {
        for i2 in i1 + 1..a.rows() {
            let s: f64 = a.row(i1).iter().zip(a.row(i2)).map(|(x, y)| x.min(*y)).sum();
            overlap_min = overlap_min.min(s);
        }
    }
    let lambda = if overlap_min.is_finite() { 1.0 - overlap_min } else { 0.0 };
    Ok((delta.clamp(0.0, 1.0), lambda.clamp(0.0, 1.0)))
}

/// `γ^{⌊t/2Γ⌋ − 1}`, the decay factor used by the consensus bound.
pub fn decay_factor(metrics: &GraphMetrics, t: usize) -> Result<f64> {
    let window = 2 * metrics.fusion_period;
    if t < window {
        return Err(Error::HorizonTooSmall { t, min: window });
    }
    Ok(math::powi(metrics.gamma_rate, (t / window) as i64 - 1))
}

/// Consensus error bound after `t ≥ 2Γ` rounds:
/// `4M² Σ‖w‖ / ((min β)^{2D*B} N) · γ^{⌊t/2Γ⌋−1}`, with the sum over all `N`
/// inputs.
pub fn theorem1_bound(metrics: &GraphMetrics, inputs: &[Vec<f64>], t: usize) -> Result<f64> {
    let factor = decay_factor(metrics, t)?;
    let m = metrics.m_count as f64;
    let norm_sum: f64 = inputs.iter().map(|w| crate::pushsum::norm(w)).sum();
    Ok(4.0 * m * m * norm_sum / (metrics.beta_power() * inputs.len() as f64) * factor)
}

/// `γ^{1/2Γ}` and `1 − γ^{1/2Γ}`, the latter without cancellation.
fn root_rate(metrics: &GraphMetrics) -> (f64, f64) {
    let window = (2 * metrics.fusion_period) as f64;
    let log_gamma = math::ln_1p(-metrics.entry_floor());
    let root = math::exp(log_gamma / window);
    let one_minus = -math::exp_m1(log_gamma / window);
    (root, one_minus)
}

/// Geometric-sum bound on one consensus-error term of the learning run:
/// `4M²L γ^{1/2Γ} / (N (1 − γ^{1/2Γ}) (min β)^{2D*B})`.
pub fn consensus_term_bound(metrics: &GraphMetrics, l_bound: f64, n_agents: usize) -> f64 {
    let (root, one_minus) = root_rate(metrics);
    let m = metrics.m_count as f64;
    4.0 * m * m * l_bound * root / (n_agents as f64 * one_minus * metrics.beta_power())
}

/// Floor/ceiling-exact version of the same term:
/// `4M²L Σ_{r=1}^{t} min(1, γ^{⌊t/2Γ⌋ − ⌈r/2Γ⌉}) / (N (min β)^{2D*B})`.
pub fn consensus_term_bound_exact(metrics: &GraphMetrics, l_bound: f64, n_agents: usize, t: usize) -> f64 {
    let window = 2 * metrics.fusion_period;
    let m = metrics.m_count as f64;
    // rounds r sharing ⌈r/2Γ⌉ = c share the exponent
    let mut sum = 0.0;
    for c in 1..=t.div_ceil(window) {
        let count = window.min(t - (c - 1) * window) as f64;
        let exponent = (t / window) as i64 - c as i64;
        sum += count * if exponent <= 0 { 1.0 } else { math::powi(metrics.gamma_rate, exponent) };
    }
    4.0 * m * m * l_bound * sum / (n_agents as f64 * metrics.beta_power())
}

/// Both versions of the high-probability log-belief-ratio bound for one
/// wrong hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningBound {
    /// `−(t/N) D_KL(θ*‖θ) + L √(2t log(m/δ))`.
    pub drift: f64,
    /// Drift plus twice the geometric-sum consensus term.
    pub simplified: f64,
    /// Drift plus twice the floor/ceiling-exact consensus term.
    pub exact: f64,
}

/// Bound on `log μ(θ,t)/μ(θ*,t)` holding with probability `1 − δ` for
/// `t ≥ 2Γ`. `D_KL(θ*‖θ)` is the divergence of the joint signal
/// distribution, i.e. the sum over agents.
pub fn theorem2_bound(
    metrics: &GraphMetrics,
    model: &SignalModel,
    theta: HypothesisId,
    n_agents: usize,
    t: usize,
    delta: f64,
) -> Result<LearningBound> {
    let window = 2 * metrics.fusion_period;
    if t < window {
        return Err(Error::HorizonTooSmall { t, min: window });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(alloc::format!("confidence {delta} not in (0, 1)")));
    }
    let l = model.l_bound();
    let tf = t as f64;
    let kl = model.joint_kl(model.truth(), theta);
    let drift = -tf / n_agents as f64 * kl
        + l * math::sqrt(2.0 * tf * math::ln(model.hypotheses() as f64 / delta));
    Ok(LearningBound {
        drift,
        simplified: drift + 2.0 * consensus_term_bound(metrics, l, n_agents),
        exact: drift + 2.0 * consensus_term_bound_exact(metrics, l, n_agents, t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faults::{make_schedule, ForcedPlacement};
    use crate::pushsum::HpsSystem;
    use crate::rng::SeedStreams;
    use crate::topology::{compute_metrics, SubNetwork};

    fn assert_column_stochastic(m: &DenseMatrix) {
        for s in m.column_sums() {
            assert!((s - 1.0).abs() < 1e-12, "column sum {s}");
        }
    }

    #[test]
    fn isolated_agent_block_is_one() {
        let net = SubNetwork::new(vec![0], vec![]).unwrap();
        let topo = SystemTopology::new(vec![net], vec![0], 1, 1).unwrap();
        let m = build_round_matrix(&topo, &DropSchedule::reliable(0, 3, 1), 2).unwrap();
        assert_eq!(m, DenseMatrix::identity(1));
    }

    #[test]
    fn single_link_by_hand() {
        // 0 -> 1, agent 0 has out-degree 1 (k = 2), agent 1 has k = 1
        let net = SubNetwork::new(vec![0, 1], vec![(0, 1)]).unwrap();
        let topo = SystemTopology::new(vec![net], vec![0], 100, 2).unwrap();
        let sys = AugmentedSystem::new(&topo).unwrap();
        let delivered = sys.unfused_matrix(&[true]);
        let expected = DenseMatrix::from_rows(&[
            vec![0.25, 0.0, 0.0],
            vec![0.5, 1.0, 1.0],
            vec![0.25, 0.0, 0.0],
        ]);
        assert_eq!(delivered, expected);
        assert_column_stochastic(&delivered);
        let dropped = sys.unfused_matrix(&[false]);
        assert_eq!(dropped.get(2, 2), 1.0);
        assert_eq!(dropped.get(2, 0), 0.75);
        assert_column_stochastic(&dropped);
    }

    #[test]
    fn fusion_matrix_is_doubly_stochastic() {
        let topo = SystemTopology::new(
            vec![SubNetwork::ring(0, 3), SubNetwork::ring(3, 2), SubNetwork::ring(5, 2)],
            vec![0, 4, 6],
            3,
            1,
        )
        .unwrap();
        let f = AugmentedSystem::new(&topo).unwrap().fusion_matrix();
        assert_column_stochastic(&f);
        for s in f.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!((f.get(0, 0) - 4.0 / 6.0).abs() < 1e-15);
        assert!((f.get(4, 6) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn matrices_match_simulation() {
        let topo =
            SystemTopology::with_auto_gamma(vec![SubNetwork::ring(0, 3), SubNetwork::directed_ring(3, 3)], vec![0, 3], 2)
                .unwrap();
        let sched = make_schedule(&topo, 0.5, 30, ForcedPlacement::WindowEnd, &mut SeedStreams::new(2).drops())
            .unwrap();
        let mats = RoundMatrices::new(&topo, &sched, 30).unwrap();
        let inputs: Vec<Vec<f64>> = (0..6).map(|j| vec![(j * j) as f64 - 3.0]).collect();
        let mut sys = HpsSystem::new(&topo, inputs).unwrap();
        let x0: Vec<f64> = sys.augmented_state().0.iter().map(|v| v[0]).collect();
        for t in 1..=30 {
            let prev: Vec<f64> = sys.augmented_state().0.iter().map(|v| v[0]).collect();
            sys.step(sched.round(t).unwrap()).unwrap();
            assert_column_stochastic(mats.matrix(t));
            let (values, masses) = sys.augmented_state();
            let now: Vec<f64> = values.iter().map(|v| v[0]).collect();
            for (a, b) in mats.matrix(t).mul_vec(&prev).iter().zip(&now) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in mats.propagate(&x0, t).iter().zip(&now) {
                assert!((a - b).abs() < 1e-9);
            }
            for (a, b) in mats.reconstruct_mass(t).iter().zip(&masses) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn psi_conventions() {
        let topo = SystemTopology::new(vec![SubNetwork::ring(0, 2)], vec![0], 1, 1).unwrap();
        let mats = RoundMatrices::new(&topo, &DropSchedule::reliable(2, 60, 1), 60).unwrap();
        assert_eq!(mats.psi(5, 4), DenseMatrix::identity(4));
        let p = mats.psi(1, 60);
        let (delta, _) = ergodic_coefficients(&p).unwrap();
        assert!(delta < 1e-6);
    }

    #[test]
    fn ergodic_examples() {
        assert_eq!(ergodic_coefficients(&DenseMatrix::identity(2)).unwrap(), (1.0, 1.0));
        let third = DenseMatrix::from_rows(&[vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3]]);
        let (d, l) = ergodic_coefficients(&third).unwrap();
        assert_eq!(d, 0.0);
        assert!(l.abs() < 1e-15);
        let same = DenseMatrix::from_rows(&[vec![0.2, 0.8], vec![0.2, 0.8]]);
        assert_eq!(ergodic_coefficients(&same).unwrap(), (0.0, 0.0));
        let bad = DenseMatrix::from_rows(&[vec![0.5, 0.6]]);
        assert!(matches!(ergodic_coefficients(&bad), Err(Error::NotRowStochastic { row: 0, .. })));
    }

    #[test]
    fn theorem1_bound_examples() {
        let topo =
            SystemTopology::with_auto_gamma(vec![SubNetwork::ring(0, 4), SubNetwork::ring(4, 4)], vec![0, 4], 2)
                .unwrap();
        let metrics = compute_metrics(&topo).unwrap();
        let g = metrics.fusion_period;
        let w: Vec<Vec<f64>> = (0..8).map(|j| vec![j as f64]).collect();
        let pre = theorem1_bound(&metrics, &w, 2 * g).unwrap();
        let expected = 4.0 * 4.0 * 28.0 / (metrics.beta_power() * 8.0);
        assert!((pre - expected).abs() <= 1e-12 * expected);
        let later = theorem1_bound(&metrics, &w, 4 * g).unwrap();
        assert!((later - pre * metrics.gamma_rate).abs() <= 1e-12 * pre);
        let doubled: Vec<Vec<f64>> = w.iter().map(|v| vec![2.0 * v[0]]).collect();
        assert!((theorem1_bound(&metrics, &doubled, 2 * g).unwrap() - 2.0 * pre).abs() <= 1e-12 * pre);
        assert_eq!(theorem1_bound(&metrics, &w, 2 * g - 1), Err(Error::HorizonTooSmall { t: 2 * g - 1, min: 2 * g }));
    }

    #[test]
    fn exact_term_matches_per_round_sum() {
        let topo = SystemTopology::with_auto_gamma(vec![SubNetwork::ring(0, 3)], vec![0], 2).unwrap();
        let metrics = compute_metrics(&topo).unwrap();
        let w = 2 * metrics.fusion_period;
        for t in [1, w - 1, w, w + 1, 5 * w + 3, 40 * w] {
            let mut sum = 0.0;
            for r in 1..=t {
                let e = (t / w) as i64 - r.div_ceil(w) as i64;
                sum += if e <= 0 { 1.0 } else { metrics.gamma_rate.powi(e as i32) };
            }
            let direct = 4.0 * 2.5 * sum / (3.0 * metrics.beta_power());
            let fast = consensus_term_bound_exact(&metrics, 2.5, 3, t);
            assert!((fast - direct).abs() <= 1e-12 * direct, "t={t}");
        }
    }

    #[test]
    fn consensus_term_versions_agree_in_limit() {
        let topo = SystemTopology::with_auto_gamma(vec![SubNetwork::ring(0, 2)], vec![0], 1).unwrap();
        let metrics = compute_metrics(&topo).unwrap();
        let simple = consensus_term_bound(&metrics, 1.0, 2);
        let exact_short = consensus_term_bound_exact(&metrics, 1.0, 2, 10);
        assert!(exact_short > 0.0 && exact_short < simple * 10.0);
        // direct evaluation of the geometric sum with powf
        let root = math::powf(metrics.gamma_rate, 1.0 / (2.0 * metrics.fusion_period as f64));
        let direct = 4.0 * 1.0 * root / (2.0 * (1.0 - root) * metrics.beta_power());
        assert!((simple - direct).abs() < 1e-6 * direct);
    }
}
