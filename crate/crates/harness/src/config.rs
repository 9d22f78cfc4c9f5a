//! TOML experiment configuration: parsing, cross-validation and conversion
//! into core types.
//!
//! Every violation found during validation is reported, not only the first.
//! See `configs/` and the README for the full schema.

use std::fs;
use std::path::{Path, PathBuf};

use hierlearn_core::faults::{ByzantinePlan, ForcedPlacement, Strategy, DEFAULT_EXTREME};
use hierlearn_core::signals::SignalModel;
use hierlearn_core::topology::{SubNetwork, SystemTopology};
use hierlearn_core::AgentId;
use serde::Deserialize;

/// Row sums of likelihood tables must be within this of 1.
const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    topology: RawTopology,
    signals: Option<RawSignals>,
    #[serde(default)]
    faults: RawFaults,
    #[serde(default)]
    run: RawRun,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    networks: Vec<RawNetwork>,
    #[serde(default = "one")]
    window_b: usize,
    #[serde(default)]
    gamma: GammaSetting,
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize, Default)]
#[serde(untagged)]
enum GammaSetting {
    #[default]
    #[serde(skip)]
    Auto,
    Fixed(i64),
    Named(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    generator: Option<String>,
    size: Option<usize>,
    /// Out-neighbour lists in local indices (`adjacency[i]` lists the
    /// agents that `i` sends to).
    adjacency: Option<Vec<Vec<usize>>>,
    /// Global id of the designated agent; defaults to the first agent.
    designated: Option<AgentId>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSignals {
    hypotheses: usize,
    truth: usize,
    /// One table per agent: `tables[agent][theta][signal]`.
    tables: Option<Vec<Vec<Vec<f64>>>>,
    /// One table used by every agent.
    shared: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawFaults {
    #[serde(default)]
    mode: Option<String>,
    drop_prob: Option<f64>,
    placement: Option<String>,
    f: Option<usize>,
    #[serde(default)]
    c_set: Vec<usize>,
    #[serde(default)]
    byzantine: Vec<RawByzantine>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawByzantine {
    agent: AgentId,
    strategy: String,
    value: Option<f64>,
    factor: Option<f64>,
    low: Option<f64>,
    high: Option<f64>,
    magnitude: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRun {
    rounds: Option<usize>,
    seeds: Option<Vec<u64>>,
    seed_range: Option<String>,
    inputs: Option<Vec<Vec<f64>>>,
    format: Option<String>,
    out: Option<PathBuf>,
    delta: Option<f64>,
    certify: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Self::Csv),
            "jsonl" => Some(Self::Jsonl),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Clone)]
pub enum FaultModel {
    None,
    Drops { prob: f64, placement: ForcedPlacement },
    Byzantine { plan: ByzantinePlan, c_set: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub inputs: Vec<Vec<f64>>,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub delta: f64,
    pub certify: bool,
}

/// A fully validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub topology: SystemTopology,
    pub model: Option<SignalModel>,
    pub faults: FaultModel,
    pub run: RunSettings,
}

/// Parses `A..B` (inclusive on both ends).
pub fn parse_seed_range(s: &str) -> Option<Vec<u64>> {
    let (a, b) = s.split_once("..")?;
    let a: u64 = a.trim().parse().ok()?;
    let b: u64 = b.trim().trim_start_matches('=').parse().ok()?;
    (a <= b).then(|| (a..=b).collect())
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(1, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        ConfigError::Parse { line, message: e.message().to_owned() }
    })?;
    let mut errs = Vec::new();
    let cfg = validate(raw, &mut errs);
    match cfg {
        Some(cfg) if errs.is_empty() => Ok(cfg),
        _ => Err(ConfigError::Validation(errs)),
    }
}

fn validate(raw: RawConfig, errs: &mut Vec<String>) -> Option<ExperimentConfig> {
    let topology = build_topology(&raw.topology, errs);
    let n = topology.as_ref().map(|t| t.n_agents());
    let model = raw.signals.as_ref().and_then(|s| build_model(s, n, errs));
    let faults = build_faults(&raw.faults, topology.as_ref(), errs);
    let run = build_run(&raw.run, n, errs);
    Some(ExperimentConfig { topology: topology?, model, faults: faults?, run: run? })
}

fn build_topology(raw: &RawTopology, errs: &mut Vec<String>) -> Option<SystemTopology> {
    let before = errs.len();
    if raw.networks.is_empty() {
        errs.push("topology.networks must list at least one network".into());
    }
    if raw.window_b == 0 {
        errs.push("topology.window_b must be >= 1".into());
    }
    let gamma = match &raw.gamma {
        GammaSetting::Auto => None,
        GammaSetting::Named(s) if s == "auto" => None,
        GammaSetting::Named(s) => {
            errs.push(format!("topology.gamma must be \"auto\" or a positive integer, got {s:?}"));
            None
        }
        GammaSetting::Fixed(g) if *g >= 1 => Some(*g as usize),
        GammaSetting::Fixed(g) => {
            errs.push(format!("topology.gamma must be >= 1, got {g}"));
            None
        }
    };

    let mut nets = Vec::new();
    let mut designated = Vec::new();
    let mut first = 0;
    for (i, net) in raw.networks.iter().enumerate() {
        let size = match (&net.generator, &net.adjacency) {
            (Some(_), Some(_)) => {
                errs.push(format!("network {i}: give either generator or adjacency, not both"));
                continue;
            }
            (None, None) => {
                errs.push(format!("network {i}: needs a generator or an adjacency list"));
                continue;
            }
            (None, Some(adj)) => adj.len(),
            (Some(_), None) => match net.size {
                Some(s) => s,
                None => {
                    errs.push(format!("network {i}: generator needs a size"));
                    continue;
                }
            },
        };
        if size == 0 {
            errs.push(format!("network {i}: must contain at least one agent"));
            continue;
        }
        let built = match (&net.generator, &net.adjacency) {
            (Some(g), _) => match g.as_str() {
                "ring" => Some(SubNetwork::ring(first, size)),
                "directed_ring" => Some(SubNetwork::directed_ring(first, size)),
                "complete" => Some(SubNetwork::complete(first, size)),
                other => {
                    errs.push(format!(
                        "network {i}: unknown generator {other:?} (expected ring, directed_ring or complete)"
                    ));
                    None
                }
            },
            (None, Some(adj)) => {
                let mut edges = Vec::new();
                let mut ok = true;
                for (a, outs) in adj.iter().enumerate() {
                    for &b in outs {
                        if b >= size || b == a {
                            errs.push(format!("network {i}: invalid neighbour {b} of local agent {a}"));
                            ok = false;
                        } else {
                            edges.push((first + a, first + b));
                        }
                    }
                }
                if ok {
                    match SubNetwork::new((first..first + size).collect(), edges) {
                        Ok(s) => Some(s),
                        Err(e) => {
                            errs.push(format!("network {i}: {e}"));
                            None
                        }
                    }
                } else {
                    None
                }
            }
            (None, None) => unreachable!(),
        };
        let d = net.designated.unwrap_or(first);
        if !(first..first + size).contains(&d) {
            errs.push(format!(
                "network {i}: designated agent {d} is not in this network (agents {first}..={})",
                first + size - 1
            ));
        }
        if let Some(s) = built {
            if s.diameter().is_none() {
                errs.push(format!("network {i}: not strongly connected"));
            }
            nets.push(s);
        }
        designated.push(d);
        first += size;
    }
    if errs.len() > before {
        return None;
    }
    let built = match gamma {
        Some(g) => SystemTopology::new(nets, designated, g, raw.window_b),
        None => SystemTopology::with_auto_gamma(nets, designated, raw.window_b),
    };
    built.map_err(|e| errs.push(format!("topology: {e}"))).ok()
}

fn build_model(raw: &RawSignals, n: Option<usize>, errs: &mut Vec<String>) -> Option<SignalModel> {
    let before = errs.len();
    if raw.hypotheses == 0 {
        errs.push("signals.hypotheses must be >= 1".into());
    }
    if raw.truth >= raw.hypotheses {
        errs.push(format!("signals.truth {} is not below hypotheses = {}", raw.truth, raw.hypotheses));
    }
    let tables: Vec<Vec<Vec<f64>>> = match (&raw.tables, &raw.shared, n) {
        (Some(_), Some(_), _) => {
            errs.push("signals: give either tables or shared, not both".into());
            return None;
        }
        (None, None, _) => {
            errs.push("signals: needs tables (one per agent) or shared".into());
            return None;
        }
        (Some(t), None, Some(n)) if t.len() != n => {
            errs.push(format!("signals.tables has {} entries but the topology has {n} agents", t.len()));
            return None;
        }
        (Some(t), None, _) => t.clone(),
        (None, Some(s), Some(n)) => vec![s.clone(); n],
        (None, Some(_), None) => return None,
    };
    for (j, table) in tables.iter().enumerate() {
        if table.len() != raw.hypotheses {
            errs.push(format!("signals: agent {j} table has {} rows, expected {}", table.len(), raw.hypotheses));
            continue;
        }
        let width = table.first().map_or(0, Vec::len);
        for (theta, row) in table.iter().enumerate() {
            if row.len() != width || width == 0 {
                errs.push(format!("signals: agent {j} row {theta} has inconsistent or empty support"));
            } else if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                errs.push(format!("signals: agent {j} row {theta} has entries outside [0, 1]"));
            } else if (row.iter().sum::<f64>() - 1.0).abs() > ROW_SUM_TOLERANCE {
                errs.push(format!("signals: agent {j} row {theta} does not sum to 1"));
            }
        }
    }
    if errs.len() > before {
        return None;
    }
    SignalModel::new(raw.hypotheses, raw.truth, tables).map_err(|e| errs.push(format!("signals: {e}"))).ok()
}

fn build_strategy(b: &RawByzantine, errs: &mut Vec<String>) -> Option<Strategy> {
    let need = |v: Option<f64>, field: &str, errs: &mut Vec<String>| {
        if v.is_none() {
            errs.push(format!("byzantine agent {}: strategy {} needs {field}", b.agent, b.strategy));
        }
        v
    };
    Some(match b.strategy.as_str() {
        "constant" => Strategy::Constant(need(b.value, "value", errs)?),
        "negate" => Strategy::Negate,
        "amplify" => Strategy::Amplify(need(b.factor, "factor", errs)?),
        "random" => {
            let low = need(b.low, "low", errs);
            let high = need(b.high, "high", errs);
            Strategy::Random { low: low?, high: high? }
        }
        "collude_extreme" => Strategy::ColludeExtreme { magnitude: b.magnitude.unwrap_or(DEFAULT_EXTREME) },
        other => {
            errs.push(format!(
                "byzantine agent {}: unknown strategy {other:?} (expected constant, negate, amplify, random or collude_extreme)",
                b.agent
            ));
            return None;
        }
    })
}

fn build_faults(raw: &RawFaults, topo: Option<&SystemTopology>, errs: &mut Vec<String>) -> Option<FaultModel> {
    let before = errs.len();
    match raw.mode.as_deref().unwrap_or("none") {
        "none" => Some(FaultModel::None),
        "drops" => {
            let prob = raw.drop_prob.unwrap_or(0.0);
            if !(0.0..1.0).contains(&prob) {
                errs.push(format!("faults.drop_prob must be in [0, 1), got {prob}"));
            }
            let placement = match raw.placement.as_deref().unwrap_or("window_end") {
                "window_end" => ForcedPlacement::WindowEnd,
                "uniform" => ForcedPlacement::Uniform,
                other => {
                    errs.push(format!("faults.placement must be window_end or uniform, got {other:?}"));
                    ForcedPlacement::WindowEnd
                }
            };
            (errs.len() == before).then_some(FaultModel::Drops { prob, placement })
        }
        "byzantine" => {
            let f = raw.f.unwrap_or(raw.byzantine.len());
            if raw.byzantine.len() > f {
                errs.push(format!("faults lists {} Byzantine agents but f = {f}", raw.byzantine.len()));
            }
            let mut agents = Vec::new();
            for b in &raw.byzantine {
                if let Some(n) = topo.map(|t| t.n_agents()) {
                    if b.agent >= n {
                        errs.push(format!("byzantine agent {} does not exist ({n} agents)", b.agent));
                    }
                }
                if agents.iter().any(|(a, _)| *a == b.agent) {
                    errs.push(format!("byzantine agent {} listed twice", b.agent));
                }
                if let Some(s) = build_strategy(b, errs) {
                    agents.push((b.agent, s));
                }
            }
            if raw.c_set.len() < f + 1 {
                errs.push(format!(
                    "faults.c_set has {} network(s); at least f + 1 = {} are required",
                    raw.c_set.len(),
                    f + 1
                ));
            }
            if let Some(topo) = topo {
                for (k, &c) in raw.c_set.iter().enumerate() {
                    if c >= topo.m_count() {
                        errs.push(format!("faults.c_set entry {c} is not a network index"));
                        continue;
                    }
                    if raw.c_set[..k].contains(&c) {
                        errs.push(format!("faults.c_set lists network {c} twice"));
                    }
                    let net = &topo.sub_networks()[c];
                    for &a in net.agents() {
                        if net.in_degree(a) < 2 * f + 1 {
                            errs.push(format!(
                                "agent {a} in C network {c} has in-degree {}, needs at least 2f + 1 = {}",
                                net.in_degree(a),
                                2 * f + 1
                            ));
                        }
                    }
                }
            }
            if errs.len() > before {
                return None;
            }
            match ByzantinePlan::new(f, agents) {
                Ok(plan) => Some(FaultModel::Byzantine { plan, c_set: raw.c_set.clone() }),
                Err(e) => {
                    errs.push(format!("faults: {e}"));
                    None
                }
            }
        }
        other => {
            errs.push(format!("faults.mode must be none, drops or byzantine, got {other:?}"));
            None
        }
    }
}

fn build_run(raw: &RawRun, n: Option<usize>, errs: &mut Vec<String>) -> Option<RunSettings> {
    let before = errs.len();
    let rounds = raw.rounds.unwrap_or(100);
    if rounds == 0 {
        errs.push("run.rounds must be >= 1".into());
    }
    let seeds = match (&raw.seeds, &raw.seed_range) {
        (Some(_), Some(_)) => {
            errs.push("run: give either seeds or seed_range, not both".into());
            vec![]
        }
        (Some(s), None) => s.clone(),
        (None, Some(r)) => parse_seed_range(r).unwrap_or_else(|| {
            errs.push(format!("run.seed_range must look like \"A..B\" with A <= B, got {r:?}"));
            vec![]
        }),
        (None, None) => vec![0],
    };
    let inputs = match (&raw.inputs, n) {
        (Some(w), Some(n)) => {
            if w.len() != n {
                errs.push(format!("run.inputs has {} entries but the topology has {n} agents", w.len()));
            }
            let dim = w.first().map_or(0, Vec::len);
            if dim == 0 || w.iter().any(|x| x.len() != dim) {
                errs.push("run.inputs must be non-empty vectors of equal length".into());
            }
            w.clone()
        }
        (None, Some(n)) => (0..n).map(|j| vec![(j + 1) as f64]).collect(),
        (_, None) => vec![],
    };
    let format = match raw.format.as_deref() {
        None => Format::Csv,
        Some(f) => Format::parse(f).unwrap_or_else(|| {
            errs.push(format!("run.format must be csv or jsonl, got {f:?}"));
            Format::Csv
        }),
    };
    let delta = raw.delta.unwrap_or(0.1);
    if !(delta > 0.0 && delta < 1.0) {
        errs.push(format!("run.delta must be in (0, 1), got {delta}"));
    }
    (errs.len() == before && n.is_some()).then(|| RunSettings {
        rounds,
        seeds,
        inputs,
        format,
        out: raw.out.clone(),
        delta,
        certify: raw.certify.unwrap_or(true),
    })
}
