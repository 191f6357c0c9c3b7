use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use gara::commands;
use gara::config::{resolve_out_root, RunConfig, OUT_ENV};

/// Exit status for any failure; 0-2 are taken by `verify-net` verdicts.
const FAILURE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "gara",
    version,
    about = "Hierarchical RL with reachability-refined goal spaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent per seed and write metrics, snapshots and checkpoints.
    Train {
        config: PathBuf,
        /// Comma-separated seeds; replaces the config's seed list.
        #[arg(long, value_delimiter = ',')]
        seed: Option<Vec<u64>>,
        /// Output root (default: $GARA_OUT, then the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run greedy episodes with a saved checkpoint.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw a partition snapshot over the maze.
    PlotPartition {
        snapshot: PathBuf,
        /// Run config whose maze replaces the one stored in the snapshot.
        #[arg(long)]
        maze: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Plot mean success with a min-max band per agent kind.
    PlotCurves {
        #[arg(required = true)]
        metrics: Vec<String>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Check whether a network maps an input box into a target box.
    VerifyNet {
        model: PathBuf,
        /// JSON list of [lo, hi] pairs.
        #[arg(long)]
        input_box: String,
        #[arg(long)]
        target_box: String,
        #[arg(long, default_value_t = 0)]
        depth: u32,
    },
    /// Print the default run configuration.
    PrintDefaultConfig,
}

fn write_output(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            jobs,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seeds) = seed {
                cfg.seeds = seeds;
            }
            let env = std::env::var(OUT_ENV).ok();
            let root = resolve_out_root(out.as_deref(), env.as_deref(), &cfg);
            for dir in commands::train(&cfg, &root, jobs)? {
                println!("{}", dir.display());
            }
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            let r = commands::eval(&checkpoint, episodes, seed)?;
            println!("success_rate {:.4}", r.success_rate);
            match r.mean_steps_to_exit {
                Some(s) => println!("mean_steps_to_exit {s:.2}"),
                None => println!("mean_steps_to_exit n/a"),
            }
        }
        Command::PlotPartition { snapshot, maze, output } => {
            write_output(&output, &commands::plot_partition(&snapshot, maze.as_deref())?)?;
        }
        Command::PlotCurves { metrics, output } => {
            write_output(&output, &commands::plot_curves(&metrics)?)?;
        }
        Command::VerifyNet {
            model,
            input_box,
            target_box,
            depth,
        } => {
            let input = commands::parse_box(&input_box).context("--input-box")?;
            let target = commands::parse_box(&target_box).context("--target-box")?;
            let outcome = commands::verify_net(&model, &input, &target, depth)?;
            println!("{}", outcome.verdict);
            println!("{}", serde_json::to_string(&outcome.reach)?);
            return Ok(outcome.exit_code());
        }
        Command::PrintDefaultConfig => println!("{}", RunConfig::default().to_json()),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(FAILURE);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(FAILURE)
        }
    }
}
