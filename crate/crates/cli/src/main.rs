use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ragc::config::ExperimentConfig;
use ragc::experiment::{self, ExperimentResult};
use ragc::graph::load_dataset;
use ragc::metrics::MetricValues;
use ragc::Error;

/// Attributed graph clustering experiments.
#[derive(Parser)]
#[command(name = "ragc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset once per seed and report clustering metrics.
    Train(Common),
    /// Compare the full model against its three ablations.
    Ablate(Common),
    /// Measure degradation under added attribute noise.
    NoiseSweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated noise standard deviations (default from config).
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// Write a stochastic block model dataset.
    GenSbm {
        /// Config file providing `sbm_*` keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Generator seed (overrides `sbm_seed`).
        #[arg(long)]
        seeds: Option<u64>,
        /// `key=value` override, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory holding features.csv, edges.csv and labels.csv.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Seeds: `3`, `0,4,7` or `0..9`.
    #[arg(long, default_value = "0")]
    seeds: String,
    /// `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> ragc::Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for o in overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn summarize(result: &ExperimentResult) {
    for row in &result.report.rows {
        let cells: Vec<String> = MetricValues::NAMES
            .iter()
            .filter_map(|k| row.formatted.get(*k).map(|v| format!("{k} {v}")))
            .collect();
        println!("{:<16} {}", row.label, cells.join("  "));
    }
    if let Some(dir) = result.files.first().and_then(|f| f.parent()) {
        println!("wrote {}", dir.display());
    }
}

fn run(cli: Cli) -> ragc::Result<()> {
    match cli.command {
        Command::Train(c) => {
            let cfg = load_config(c.config.as_deref(), &c.overrides)?;
            let graph = load_dataset(&c.data)?;
            let seeds = experiment::parse_seeds(&c.seeds)?;
            summarize(&experiment::cmd_train(&cfg, &graph, &c.out, &seeds)?);
        }
        Command::Ablate(c) => {
            let cfg = load_config(c.config.as_deref(), &c.overrides)?;
            let graph = load_dataset(&c.data)?;
            let seeds = experiment::parse_seeds(&c.seeds)?;
            summarize(&experiment::cmd_ablate(&cfg, &graph, &c.out, &seeds)?);
        }
        Command::NoiseSweep { common: c, sigmas } => {
            let cfg = load_config(c.config.as_deref(), &c.overrides)?;
            let graph = load_dataset(&c.data)?;
            let seeds = experiment::parse_seeds(&c.seeds)?;
            let sigmas = sigmas.unwrap_or_else(|| cfg.noise_sigmas.clone());
            summarize(&experiment::cmd_noise_sweep(&cfg, &graph, &c.out, &seeds, &sigmas)?);
        }
        Command::GenSbm {
            config,
            out,
            seeds,
            overrides,
        } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let mut params = cfg.sbm;
            if let Some(seed) = seeds {
                params.seed = seed;
            }
            let graph = experiment::cmd_gen_sbm(&params, &out)?;
            println!(
                "wrote {} nodes, {} edges, {} classes to {}",
                graph.node_count(),
                graph.edge_count(),
                graph.class_count(),
                out.display()
            );
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    if err.is_input_error() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
