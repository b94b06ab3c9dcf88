use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedhbn::config::{parse_config, ExperimentConfig};
use fedhbn::error::{Error, IoContext, Result};
use fedhbn::experiment::{output_dir, run_experiment};
use fedhbn::oracle_check::{self, oracle_check, NAIVE_PHIS, UNBIASED_TOLERANCE};
use fedhbn::sweep::{run_sweep, summarize, SweepAxis, SweepSpec};
use fedhbn::toy::{toy_panels, write_toy_csv, ToyDistances};
use fedhbn_core::nn::gradsuite::gradient_suite;
use fedhbn_core::norm::NormKind;

const GRAD_TOLERANCE: f64 = 1e-4;

/// Federated learning simulator with hybrid batch normalization.
#[derive(Debug, Parser)]
#[command(name = "fedhbn", version)]
struct Cli {
    /// Experiment configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for client jobs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one configured experiment.
    Run,
    /// Run a grid along one axis.
    Sweep {
        /// batch_size, phi or norm_mode
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Normalizers per value (default: the configured one).
        #[arg(long, value_delimiter = ',')]
        modes: Vec<NormKind>,
        /// Seeds per cell (default: the configured one).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Compare server statistics with pooled-data statistics.
    OracleCheck {
        #[arg(long, value_delimiter = ',')]
        phis: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Finite-difference checks of every layer and the Simple-CNN.
    GradientCheck,
    /// Write the two-cluster normalization panels as CSV.
    Toy,
}

fn load_config(cli: &Cli) -> Result<Option<ExperimentConfig>> {
    let Some(path) = &cli.config else {
        return Ok(None);
    };
    let text = fs::read_to_string(path).at(path)?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = cli.seed {
        cfg.fed.seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t.max(1);
    }
    Ok(Some(cfg))
}

fn require(cfg: Option<ExperimentConfig>, cmd: &str) -> Result<ExperimentConfig> {
    cfg.ok_or_else(|| Error::Format(format!("`{cmd}` needs --config <path>")))
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load_config(&cli)?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Run => {
            let cfg = require(cfg, "run")?;
            let dir = output_dir(&cfg, out);
            let r = run_experiment(&cfg, Some(&dir))?;
            println!(
                "final test accuracy {} after {} rounds; metrics in {}",
                r.final_accuracy().map_or("-".into(), |a| format!("{a:.4}")),
                cfg.fed.rounds,
                dir.display()
            );
            Ok(true)
        }
        Command::Sweep {
            axis,
            values,
            modes,
            seeds,
        } => {
            let cfg = require(cfg, "sweep")?;
            let dir = output_dir(&cfg, out);
            let spec = SweepSpec {
                axis: *axis,
                values: values.clone(),
                modes: if modes.is_empty() {
                    vec![cfg.fed.norm]
                } else {
                    modes.clone()
                },
                seeds: if seeds.is_empty() {
                    vec![cfg.fed.seed]
                } else {
                    seeds.clone()
                },
            };
            let cells = run_sweep(&cfg, &spec, Some(&dir))?;
            println!(
                "{:<12} {:<10} {:>5} {:>10} {:>10}",
                spec.axis.as_str(),
                "mode",
                "runs",
                "mean_acc",
                "std_acc"
            );
            for row in summarize(&cells) {
                let f = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.4}"));
                println!(
                    "{:<12} {:<10} {:>5} {:>10} {:>10}",
                    row.value,
                    row.mode,
                    row.runs,
                    f(row.mean_acc),
                    f(row.std_acc)
                );
            }
            Ok(cells.iter().all(|c| c.error.is_none()))
        }
        Command::OracleCheck { phis, seeds } => {
            let mut cfg = cfg.unwrap_or_else(oracle_check::default_config);
            if let Some(s) = cli.seed {
                cfg.fed.seed = s;
            }
            let phis = if phis.is_empty() {
                NAIVE_PHIS.to_vec()
            } else {
                phis.clone()
            };
            let seeds = if seeds.is_empty() {
                vec![cfg.fed.seed]
            } else {
                seeds.clone()
            };
            let report = oracle_check(&cfg, &phis, &seeds)?;
            for r in &report.rounds {
                println!(
                    "hbn round {:>3}: max relative stats error {:.3e}",
                    r.round, r.max_rel_error
                );
            }
            for g in &report.naive {
                println!(
                    "naive_bn phi {:>5} seed {}: stats gap {:.6}",
                    g.phi, g.seed, g.gap
                );
            }
            let ok = report.passed();
            println!(
                "max relative stats error {:.3e} ({} {:.0e})",
                report.max_rel_error(),
                if ok { "<" } else { ">=" },
                UNBIASED_TOLERANCE
            );
            Ok(ok)
        }
        Command::GradientCheck => {
            let entries = gradient_suite(cli.seed.unwrap_or(0))?;
            let mut ok = true;
            for e in &entries {
                let pass = e.report.max_rel_error < GRAD_TOLERANCE;
                ok &= pass;
                println!(
                    "{:<18} {:>6} entries {:>3} shrunk  max rel error {:.3e}  {}  (worst {})",
                    e.name,
                    e.report.checked,
                    e.report.shrunk,
                    e.report.max_rel_error,
                    if pass { "ok" } else { "FAIL" },
                    e.report.worst
                );
            }
            Ok(ok)
        }
        Command::Toy => {
            let panels = toy_panels(cli.seed.unwrap_or(0))?;
            let dir = out
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("out"));
            fs::create_dir_all(&dir).at(&dir)?;
            let path = dir.join("toy_panels.csv");
            write_toy_csv(&path, &panels)?;
            let d = ToyDistances::of(&panels);
            println!(
                "cluster-mean distance: raw {:.4} local {:.4} global {:.4} hybrid {:.4}",
                d.raw, d.local, d.global, d.hybrid
            );
            println!("wrote {}", path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
