use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use hierlearn::certify::certify_config;
use hierlearn::config::parse_seed_range;
use hierlearn::runner::{drop_schedule, dump_matrices};
use hierlearn::{load_config, run_experiment, verify, ExperimentConfig, Format, Mode, RunOptions};
use hierlearn_core::rng::SeedStreams;

#[derive(Parser)]
#[command(name = "hierlearn", version, about = "Hierarchical fault-tolerant social learning simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Robust push-sum average consensus with parameter-server fusion.
    Consensus(Common),
    /// Dual-averaging learning over links that drop packets.
    LearnDrop(Common),
    /// Byzantine-resilient pairwise learning.
    LearnByz(Common),
    /// Enumerate reduced graphs and certify the configured networks.
    Certify(Common),
    /// Check a consensus run against the matrix oracle and bounds.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Single seed; overrides --seeds and the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Inclusive seed range `A..B`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<SeedList>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Output directory (otherwise $HIERLEARN_OUT_DIR, then the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
    /// Write every round matrix as plain text next to the rows.
    #[arg(long)]
    dump_matrices: bool,
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    parse_seed_range(s).map(SeedList).ok_or_else(|| format!("expected A..B with A <= B, got {s:?}"))
}

fn parse_format(s: &str) -> Result<Format, String> {
    Format::parse(s).ok_or_else(|| format!("expected csv or jsonl, got {s:?}"))
}

impl Common {
    fn seeds(&self, config: &ExperimentConfig) -> Vec<u64> {
        match (self.seed, &self.seeds) {
            (Some(s), _) => vec![s],
            (None, Some(list)) => list.0.clone(),
            (None, None) => config.run.seeds.clone(),
        }
    }

    fn options(&self, config: &ExperimentConfig) -> RunOptions {
        RunOptions {
            rounds: self.rounds.unwrap_or(config.run.rounds),
            format: self.format.unwrap_or(config.run.format),
            out_dir: RunOptions::resolve_out_dir(self.out.clone(), config),
            dump_matrices: self.dump_matrices,
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (mode, common) = match &cli.command {
        Command::Consensus(c) => (Some(Mode::Consensus), c),
        Command::LearnDrop(c) => (Some(Mode::LearnDrop), c),
        Command::LearnByz(c) => (Some(Mode::LearnByz), c),
        Command::Certify(c) | Command::Verify(c) => (None, c),
    };
    let config = load_config(&common.config)?;
    let opts = common.options(&config);
    if opts.rounds == 0 {
        bail!("--rounds must be >= 1");
    }
    if let Some(mode) = mode {
        for seed in common.seeds(&config) {
            let summary = run_experiment(&config, mode, seed, &opts)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        return Ok(true);
    }
    match cli.command {
        Command::Certify(_) => {
            let mut ok = true;
            for cert in certify_config(&config)? {
                match cert.result {
                    Ok(r) => println!(
                        "network {}: certified (F = {}, chi = {}, {} placements, {} reduced graphs, min source KL {:.4})",
                        cert.network, r.f_bound, r.chi, r.placements, r.reduced_graphs, r.min_source_kl
                    ),
                    Err(e) => {
                        ok = false;
                        println!("network {}: FAILED: {e}", cert.network);
                    }
                }
            }
            Ok(ok)
        }
        Command::Verify(_) => {
            let mut ok = true;
            for seed in common.seeds(&config) {
                if opts.dump_matrices {
                    std::fs::create_dir_all(&opts.out_dir)?;
                    let schedule = drop_schedule(&config, opts.rounds, &SeedStreams::new(seed))?;
                    dump_matrices(&config, &schedule, &opts.out_dir.join(format!("matrices_seed{seed}.txt")))?;
                }
                let report = verify(&config, seed, opts.rounds)?;
                print!("{report}");
                ok &= report.passed();
            }
            Ok(ok)
        }
        _ => unreachable!(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
