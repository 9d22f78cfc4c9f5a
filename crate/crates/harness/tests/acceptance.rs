//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if a criterion fails that is not listed in `KNOWN_RED`.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use hierlearn::{parse_config, run_experiment, Mode, RunOptions};
use hierlearn_core::byzantine_learning::{run_byzantine_learning, trimmed_filter, ByzantineOptions};
use hierlearn_core::dropout_learning::{run_learning, LearningOptions};
use hierlearn_core::faults::{make_schedule, ByzantinePlan, DropSchedule, ForcedPlacement, Strategy};
use hierlearn_core::oracle::RoundMatrices;
use hierlearn_core::pushsum::{run_consensus, HpsSystem};
use hierlearn_core::rng::SeedStreams;
use hierlearn_core::signals::{sample_signal, SignalModel};
use hierlearn_core::topology::{
    certify_byzantine_network, source_components, ReducedGraph, SubNetwork, SystemTopology,
    DEFAULT_ENUMERATION_CAP,
};
use rand::Rng;

const CONSERVATION_TOL: f64 = 1e-9;
const EQUIVALENCE_TOL: f64 = 1e-9;
const RECONSTRUCTION_TOL: f64 = 1e-7;
const BELIEF_THRESHOLD: f64 = 0.99;
const LEARNING_HORIZON: usize = 5000;
const MIN_LEARNING_SEEDS: usize = 18;
const MAX_BOUND_VIOLATIONS: usize = 9;
const BOUND_RUN_ROUNDS: usize = 1000;
const BYZ_ROUNDS: usize = 3000;

/// Criteria that fail on the implemented dynamics; see the decisions notes.
/// Each must still fail, so a change that turns one green is noticed.
const KNOWN_RED: &[usize] = &[4];

const TABLE: [[f64; 3]; 3] = [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.3, 0.6]];

struct Outcome {
    passed: bool,
    detail: String,
}

fn two_rings(window_b: usize) -> SystemTopology {
    SystemTopology::with_auto_gamma(vec![SubNetwork::ring(0, 4), SubNetwork::ring(4, 4)], vec![0, 4], window_b)
        .unwrap()
}

fn shared_model(agents: usize) -> SignalModel {
    let table: Vec<Vec<f64>> = TABLE.iter().map(|r| r.to_vec()).collect();
    SignalModel::new(3, 0, vec![table; agents]).unwrap()
}

fn inputs(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|j| vec![(j as f64 * 0.9).cos() * 3.0 + j as f64, 1.0 - j as f64]).collect()
}

fn schedule(topo: &SystemTopology, p: f64, rounds: usize, seed: u64) -> DropSchedule {
    make_schedule(topo, p, rounds, ForcedPlacement::WindowEnd, &mut SeedStreams::new(seed).drops()).unwrap()
}

/// `(min β, D*)` from first principles: `β = 1/max(d+1)²` per network, with
/// diameters by breadth-first search.
fn independent_metrics(topo: &SystemTopology) -> (f64, usize) {
    let mut min_beta = f64::INFINITY;
    let mut d_star = 0;
    for net in topo.sub_networks() {
        let agents = net.agents();
        let max_deg = agents.iter().map(|&a| net.edges().iter().filter(|e| e.0 == a).count()).max().unwrap();
        min_beta = min_beta.min(1.0 / ((max_deg + 1) * (max_deg + 1)) as f64);
        for &s in agents {
            let mut dist = vec![usize::MAX; agents.len()];
            let pos = |a: usize| agents.iter().position(|&x| x == a).unwrap();
            dist[pos(s)] = 0;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &(a, b) in net.edges() {
                    if a == u && dist[pos(b)] == usize::MAX {
                        dist[pos(b)] = dist[pos(u)] + 1;
                        queue.push_back(b);
                    }
                }
            }
            d_star = d_star.max(*dist.iter().max().unwrap());
        }
    }
    (min_beta, d_star)
}

fn c1_conservation() -> Outcome {
    let topo = two_rings(2);
    let mut worst: f64 = 0.0;
    for seed in 1..=10 {
        let trace = run_consensus(&topo, inputs(8), &schedule(&topo, 0.5, 500, seed), 500).unwrap();
        for r in &trace.rounds {
            worst = worst.max(r.mass_residual).max(r.value_residual);
        }
    }
    Outcome { passed: worst <= CONSERVATION_TOL, detail: format!("10 seeds x 500 rounds, max residual {worst:.2e}") }
}

fn c2_equivalence() -> Outcome {
    let topo = two_rings(2);
    let rounds = 40;
    let mut worst: f64 = 0.0;
    let mut size = 0;
    for seed in 1..=10 {
        let sched = schedule(&topo, 0.5, rounds, 100 + seed);
        let mats = RoundMatrices::new(&topo, &sched, rounds).unwrap();
        size = mats.system().n_total();
        let mut sys = HpsSystem::new(&topo, inputs(8)).unwrap();
        let (x0, m0) = sys.augmented_state();
        for t in 1..=rounds {
            sys.step(sched.round(t).unwrap()).unwrap();
            let (x, m) = sys.augmented_state();
            for (a, b) in mats.propagate(&m0, t).iter().zip(&m) {
                worst = worst.max((a - b).abs());
            }
            for k in 0..2 {
                let col: Vec<f64> = x0.iter().map(|v| v[k]).collect();
                for (a, b) in mats.propagate(&col, t).iter().zip(&x) {
                    worst = worst.max((a - b[k]).abs());
                }
            }
        }
    }
    Outcome {
        passed: size <= 30 && worst <= EQUIVALENCE_TOL,
        detail: format!("augmented size {size}, 10 schedules x 40 rounds, max difference {worst:.2e}"),
    }
}

fn c3_consensus_bound() -> Outcome {
    let topo = two_rings(2);
    let (beta, d_star) = independent_metrics(&topo);
    let b = topo.window_b();
    let gamma_period = topo.gamma();
    let m = topo.m_count() as f64;
    let w = inputs(8);
    let norm_sum: f64 = w.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).sum();
    let beta_pow = beta.powi((2 * d_star * b) as i32);
    let gamma = 1.0 - beta_pow / (4.0 * m * m);
    let rounds = 200;
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for seed in 1..=20 {
        let trace = run_consensus(&topo, w.clone(), &schedule(&topo, 0.5, rounds, seed), rounds).unwrap();
        for r in trace.rounds.iter().filter(|r| r.round >= 2 * gamma_period) {
            let exponent = (r.round / (2 * gamma_period)) as i32 - 1;
            let bound = 4.0 * m * m * norm_sum / (beta_pow * 8.0) * gamma.powi(exponent);
            for &e in &r.errors {
                worst_ratio = worst_ratio.max(e / bound);
                violations += usize::from(e > bound);
            }
        }
    }
    Outcome {
        passed: gamma_period == b * d_star && violations == 0,
        detail: format!("Γ = {gamma_period}, 20 seeds x {rounds} rounds, {violations} violations, max error/bound {worst_ratio:.2e}"),
    }
}

fn c4_entry_floor() -> Outcome {
    let topo = two_rings(2);
    let (beta, d_star) = independent_metrics(&topo);
    let m = topo.m_count() as f64;
    let floor = beta.powi((2 * d_star * topo.window_b()) as i32) / (4.0 * m * m);
    let window = 2 * topo.gamma();
    let rounds = 40;
    let scan = |sched: &DropSchedule| {
        let mats = RoundMatrices::new(&topo, sched, rounds).unwrap();
        let n_real = topo.n_agents();
        let (mut products, mut bad, mut bad_real, mut min_entry) = (0, 0, 0, f64::INFINITY);
        for r in 1..=rounds {
            mats.sweep_psi(r, rounds, |t, p| {
                if t + 1 - r < window {
                    return;
                }
                products += 1;
                let mut low = f64::INFINITY;
                let mut low_real = f64::INFINITY;
                for i in 0..p.rows() {
                    for j in 0..p.cols() {
                        low = low.min(p.get(i, j));
                        if i < n_real && j < n_real {
                            low_real = low_real.min(p.get(i, j));
                        }
                    }
                }
                min_entry = f64::min(min_entry, low);
                bad += usize::from(low < floor);
                bad_real += usize::from(low_real < floor);
            });
        }
        (products, bad, bad_real, min_entry)
    };
    let (mut products, mut bad, mut bad_real, mut min_entry) = (0, 0, 0, f64::INFINITY);
    for seed in 1..=20 {
        let (p, b, br, me) = scan(&schedule(&topo, 0.5, rounds, seed));
        products += p;
        bad += b;
        bad_real += br;
        min_entry = min_entry.min(me);
    }
    let (_, reliable_bad, _, _) = scan(&DropSchedule::reliable(topo.links().len(), rounds, topo.window_b()));
    Outcome {
        passed: bad == 0,
        detail: format!(
            "floor {floor:.3e}, {bad}/{products} products below it ({bad_real} in the real block), min entry {min_entry:.2e}; reliable links: {reliable_bad} below"
        ),
    }
}

fn c5_reconstruction() -> Outcome {
    let topo =
        SystemTopology::with_auto_gamma(vec![SubNetwork::ring(0, 3), SubNetwork::directed_ring(3, 3)], vec![0, 4], 2)
            .unwrap();
    let model = shared_model(6);
    let mut worst: f64 = 0.0;
    for (seed, horizon) in [(1, 10), (2, 25), (3, 40), (4, 40)] {
        let sched = schedule(&topo, 0.4, horizon, seed);
        let seeds = SeedStreams::new(seed);
        let trace = run_learning(&topo, &model, &sched, horizon, &seeds, LearningOptions::default()).unwrap();
        let mats = RoundMatrices::new(&topo, &sched, horizon).unwrap();
        for theta in 0..3 {
            let injections: Vec<Vec<f64>> = trace
                .signals
                .iter()
                .map(|s| s.iter().map(|&x| TABLE[theta][x].ln()).collect())
                .collect();
            let rebuilt = mats.reconstruct_injected(&injections, horizon);
            for (j, st) in trace.final_states.iter().enumerate() {
                worst = worst.max((rebuilt[j] - st.z_theta[theta]).abs());
            }
        }
    }
    Outcome { passed: worst <= RECONSTRUCTION_TOL, detail: format!("N = 6, T up to 40, max difference {worst:.2e}") }
}

/// First round after which the centralized posterior keeps `μ(θ*) > thr`.
fn centralized_settle(signals: &[Vec<usize>], thr: f64) -> Option<usize> {
    let mut log_post = [0.0f64; 3];
    let mut settled = None;
    for (t, row) in signals.iter().enumerate() {
        for &s in row {
            for (theta, lp) in log_post.iter_mut().enumerate() {
                *lp += TABLE[theta][s].ln();
            }
        }
        let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = log_post.iter().map(|l| (l - max).exp()).sum();
        if (log_post[0] - max).exp() / total > thr {
            settled.get_or_insert(t + 1);
        } else {
            settled = None;
        }
    }
    settled
}

fn c6_learning() -> Outcome {
    let topo = two_rings(3);
    let model = shared_model(8);
    let mut successes = 0;
    let mut agent_rounds = Vec::new();
    let mut oracle_rounds = Vec::new();
    let mut streams_match = true;
    for seed in 1..=20 {
        let seeds = SeedStreams::new(seed);
        let sched = make_schedule(&topo, 0.3, LEARNING_HORIZON, ForcedPlacement::WindowEnd, &mut seeds.drops()).unwrap();
        let trace = run_learning(&topo, &model, &sched, LEARNING_HORIZON, &seeds, LearningOptions::default()).unwrap();
        // regenerate the signal streams independently
        let mut rngs: Vec<_> = (0..8).map(|j| seeds.signals(j)).collect();
        let regenerated: Vec<Vec<usize>> = (0..LEARNING_HORIZON)
            .map(|_| (0..8).map(|j| sample_signal(&model, j, &mut rngs[j])).collect())
            .collect();
        streams_match &= regenerated == trace.signals;
        oracle_rounds.push(centralized_settle(&regenerated, BELIEF_THRESHOLD));
        let settle = trace.settle_round(0, BELIEF_THRESHOLD);
        successes += usize::from(settle.is_some());
        agent_rounds.push(settle);
    }
    let fmt = |v: &[Option<usize>]| {
        let known: Vec<usize> = v.iter().flatten().copied().collect();
        format!("{}..{}", known.iter().min().unwrap_or(&0), known.iter().max().unwrap_or(&0))
    };
    Outcome {
        passed: streams_match && successes >= MIN_LEARNING_SEEDS,
        detail: format!(
            "{successes}/20 seeds settle within {LEARNING_HORIZON} rounds (agents: rounds {}, centralized oracle: rounds {})",
            fmt(&agent_rounds),
            fmt(&oracle_rounds)
        ),
    }
}

fn c7_log_ratio_bound() -> Outcome {
    let topo = two_rings(3);
    let model = shared_model(8);
    let mut violated = 0;
    for seed in 1..=50 {
        let seeds = SeedStreams::new(1000 + seed);
        let sched = make_schedule(&topo, 0.3, BOUND_RUN_ROUNDS, ForcedPlacement::WindowEnd, &mut seeds.drops()).unwrap();
        let options = LearningOptions { delta: 0.1, ..LearningOptions::default() };
        let trace = run_learning(&topo, &model, &sched, BOUND_RUN_ROUNDS, &seeds, options).unwrap();
        violated += usize::from(trace.bound_violated());
    }
    Outcome {
        passed: violated <= MAX_BOUND_VIOLATIONS,
        detail: format!("δ = 0.1, {violated}/50 runs violate the bound over {BOUND_RUN_ROUNDS} rounds"),
    }
}

fn c8_trimmed() -> Outcome {
    const GRID: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];
    const ADVERSARIAL: [f64; 7] = [-1e9, -2.0, -1.0, 0.0, 1.0, 2.0, 1e9];
    let mut cases = 0u64;
    let mut escapes = 0u64;
    for f in 1..=2usize {
        for len in (2 * f + 1)..=7 {
            for k in 0..=f {
                for mask in 0u32..(1 << len) {
                    if mask.count_ones() as usize != k {
                        continue;
                    }
                    let honest_count = len - k;
                    for h in 0..GRID.len().pow(honest_count as u32) {
                        for a in 0..ADVERSARIAL.len().pow(k as u32) {
                            let (mut hi, mut ai) = (h, a);
                            let mut values = Vec::with_capacity(len);
                            let (mut lo_h, mut hi_h) = (f64::INFINITY, f64::NEG_INFINITY);
                            for pos in 0..len {
                                let v = if mask >> pos & 1 == 1 {
                                    let v = ADVERSARIAL[ai % ADVERSARIAL.len()];
                                    ai /= ADVERSARIAL.len();
                                    v
                                } else {
                                    let v = GRID[hi % GRID.len()];
                                    hi /= GRID.len();
                                    lo_h = lo_h.min(v);
                                    hi_h = hi_h.max(v);
                                    v
                                };
                                values.push((v, pos));
                            }
                            cases += 1;
                            let kept = trimmed_filter(&values, f).unwrap();
                            if kept.iter().any(|&(v, _)| v < lo_h || v > hi_h) {
                                escapes += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Outcome { passed: escapes == 0, detail: format!("{cases} lists, {escapes} survivors outside the honest range") }
}

fn c9_byzantine() -> Outcome {
    let topo = SystemTopology::with_auto_gamma(
        vec![SubNetwork::complete(0, 4), SubNetwork::complete(4, 4), SubNetwork::complete(8, 4)],
        vec![0, 4, 8],
        1,
    )
    .unwrap();
    let model = shared_model(12);
    let tail = BYZ_ROUNDS - BYZ_ROUNDS * 3 / 10;
    let growth_from = BYZ_ROUNDS - BYZ_ROUNDS / 5;
    let mut ok_runs = 0;
    let mut min_growth = f64::INFINITY;
    let mut latest_stable = 0;
    for placement in [9usize, 1] {
        let plan = ByzantinePlan::new(1, vec![(placement, Strategy::ColludeExtreme { magnitude: 1e6 })]).unwrap();
        for seed in 1..=20 {
            let trace = run_byzantine_learning(
                &topo,
                &model,
                &plan,
                &[0, 1],
                BYZ_ROUNDS,
                &SeedStreams::new(seed),
                ByzantineOptions::default(),
            )
            .unwrap();
            let certified = trace.setup.certificates.iter().all(|(_, c)| c.chi == 81);
            let decoded_ok = (0..12).filter(|&a| a != placement).all(|a| {
                (tail..BYZ_ROUNDS).all(|i| trace.decoded[i][a] == Some(0))
            });
            for a in (0..12).filter(|&a| a != placement) {
                latest_stable = latest_stable.max(trace.stable_from(a, 0).unwrap_or(usize::MAX));
            }
            let mut growth_ok = true;
            for a in (0..8).filter(|&a| a != placement) {
                for (p, &(x, _)) in trace.pairs.iter().enumerate() {
                    if x != 0 {
                        continue;
                    }
                    let mean = (growth_from..BYZ_ROUNDS)
                        .map(|i| trace.r[i][a][p] / ((i + 1) * (i + 1)) as f64)
                        .sum::<f64>()
                        / (BYZ_ROUNDS - growth_from) as f64;
                    min_growth = min_growth.min(mean);
                    growth_ok &= mean > 0.0;
                }
            }
            ok_runs += usize::from(certified && decoded_ok && growth_ok);
        }
    }
    Outcome {
        passed: ok_runs == 40,
        detail: format!(
            "{ok_runs}/40 runs (Byzantine agent outside C, then inside C), latest stable decode round {latest_stable}, min mean r/t² {min_growth:.2e}"
        ),
    }
}

/// Source components by Kosaraju's algorithm and condensation in-degrees.
fn kosaraju_sources(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut order = Vec::new();
    let mut seen = vec![false; n];
    fn dfs(u: usize, adj: &[Vec<usize>], seen: &mut [bool], out: &mut Vec<usize>) {
        seen[u] = true;
        for &v in &adj[u] {
            if !seen[v] {
                dfs(v, adj, seen, out);
            }
        }
        out.push(u);
    }
    let mut fwd = vec![vec![]; n];
    let mut rev = vec![vec![]; n];
    for &(a, b) in edges {
        fwd[a].push(b);
        rev[b].push(a);
    }
    for u in 0..n {
        if !seen[u] {
            dfs(u, &fwd, &mut seen, &mut order);
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut count = 0;
    for &u in order.iter().rev() {
        if comp[u] == usize::MAX {
            let mut members = Vec::new();
            let mut seen2 = comp.iter().map(|&c| c != usize::MAX).collect::<Vec<_>>();
            dfs(u, &rev, &mut seen2, &mut members);
            for m in members {
                comp[m] = count;
            }
            count += 1;
        }
    }
    let mut has_incoming = vec![false; count];
    for &(a, b) in edges {
        if comp[a] != comp[b] {
            has_incoming[comp[b]] = true;
        }
    }
    has_incoming.iter().filter(|&&x| !x).count()
}

fn c10_certification() -> Outcome {
    let k4 = SubNetwork::complete(0, 4);
    // brute force: edge subsets leaving every agent exactly 2 of its 3 in-links
    let edges = k4.edges().to_vec();
    let chi_brute = (0u32..1 << edges.len())
        .filter(|mask| {
            (0..4).all(|a| edges.iter().enumerate().filter(|(i, e)| e.1 == a && mask >> i & 1 == 1).count() == 2)
        })
        .count();
    let table: Vec<Vec<f64>> = TABLE.iter().map(|r| r.to_vec()).collect();
    let model = SignalModel::new(3, 0, vec![table; 4]).unwrap();
    let report = certify_byzantine_network(&k4, 1, &model, DEFAULT_ENUMERATION_CAP).unwrap();

    let mut rng = SeedStreams::new(2024).named("acceptance/graphs");
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=6);
        let p = rng.random_range(0.05..0.6);
        let mut es = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a != b && rng.random_bool(p) {
                    es.push((a, b));
                }
            }
        }
        let rg = ReducedGraph { kept_agents: (0..n).collect(), kept_edges: es.clone() };
        if source_components(&rg).len() != kosaraju_sources(n, &es) {
            mismatches += 1;
        }
    }
    Outcome {
        passed: chi_brute == 81 && report.chi == 81 && mismatches == 0,
        detail: format!("χ(K4, F=1): brute force {chi_brute}, certifier {}; {mismatches}/200 source-count mismatches", report.chi),
    }
}

fn c11_determinism() -> Outcome {
    let root = env!("CARGO_MANIFEST_DIR");
    let mut identical = true;
    let mut files = 0;
    for (name, mode, rounds) in [
        ("consensus", Mode::Consensus, 200),
        ("learn_drop", Mode::LearnDrop, 300),
        ("learn_byz", Mode::LearnByz, 300),
    ] {
        let text = fs::read_to_string(format!("{root}/../../configs/{name}.toml")).unwrap();
        let config = parse_config(&text).unwrap();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for dir in &dirs {
            let opts = RunOptions { rounds, format: config.run.format, out_dir: dir.path().to_owned(), dump_matrices: false };
            run_experiment(&config, mode, 7, &opts).unwrap();
        }
        for entry in fs::read_dir(dirs[0].path()).unwrap() {
            let entry = entry.unwrap();
            let other = dirs[1].path().join(entry.file_name());
            identical &= fs::read(entry.path()).unwrap() == fs::read(other).unwrap();
            files += 1;
        }
    }
    Outcome { passed: identical && files == 6, detail: format!("{files} output files compared byte for byte") }
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "mass/value conservation", c1_conservation),
        (2, "oracle equivalence", c2_equivalence),
        (3, "consensus error bound", c3_consensus_bound),
        (4, "matrix-product entry floor", c4_entry_floor),
        (5, "evidence reconstruction", c5_reconstruction),
        (6, "learning under drops", c6_learning),
        (7, "log-ratio bound rate", c7_log_ratio_bound),
        (8, "trimmed-filter safety", c8_trimmed),
        (9, "Byzantine learning", c9_byzantine),
        (10, "reduced-graph certification", c10_certification),
        (11, "determinism", c11_determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        let start = Instant::now();
        let out = run();
        let tag = if out.passed { "PASS" } else { "FAIL" };
        let note = match (out.passed, KNOWN_RED.contains(&id)) {
            (false, true) => " (known red)",
            (true, true) => " (listed as known red but passed)",
            _ => "",
        };
        println!("[{tag}] {id:>2} {name}: {} [{:.1}s]{note}", out.detail, start.elapsed().as_secs_f64());
        if out.passed == KNOWN_RED.contains(&id) {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected outcome for criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}
