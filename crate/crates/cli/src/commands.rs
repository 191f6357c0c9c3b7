//! Subcommand implementations, callable without going through the binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use gara_core::interval::{reach_box, IntervalBox};
use gara_core::partition::{classify, ReachVerdict};
use gara_core::trainer::{evaluate, initial_partition, run_training, AgentKind, EvalResult, TrainedAgent};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, load_agent, load_mlp, read_json, write_json};
use crate::config::{run_dir, RunConfig};
use crate::metrics::{read_csv, FileObserver, SnapshotFile};
use crate::svg;

pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
}

/// Trains every seed of `cfg` under `root`, running up to `jobs` seeds at
/// once. Returns the run directories in seed order.
pub fn train(cfg: &RunConfig, root: &Path, jobs: usize) -> Result<Vec<PathBuf>> {
    cfg.validate().map_err(anyhow::Error::msg)?;
    let mut dirs = Vec::with_capacity(cfg.seeds.len());
    for chunk in cfg.seeds.chunks(jobs.max(1)) {
        let results: Vec<Result<PathBuf>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| scope.spawn(move || train_seed(cfg, root, seed)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(anyhow::anyhow!("training thread panicked")))
                })
                .collect()
        });
        for r in results {
            dirs.push(r?);
        }
    }
    Ok(dirs)
}

/// One training run; artifacts produced before a failure are left in place.
pub fn train_seed(cfg: &RunConfig, root: &Path, seed: u64) -> Result<PathBuf> {
    let dir = run_dir(root, cfg.agent, seed);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.json"), cfg.to_json() + "\n")?;
    write_json(
        &dir.join("provenance.json"),
        &Provenance {
            config_hash: cfg.hash(),
            seed,
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
        },
    )?;
    let trainer = cfg.trainer_for(seed);
    let initial = initial_partition(cfg.agent, &cfg.maze)?;
    let mut observer = FileObserver::create(&dir, &cfg.maze)?;
    let agent: TrainedAgent = run_training(cfg.agent, &trainer, &cfg.maze, initial, &mut observer)
        .with_context(|| format!("training {} seed {seed}", cfg.agent.as_str()))?;
    drop(observer);
    checkpoint::save_agent(&agent, &cfg.maze, &dir.join(CHECKPOINT_DIR))?;
    audit_run_dir(&dir, cfg.agent)?;
    Ok(dir)
}

/// Checks that a finished run left a config copy, both metrics files, at
/// least one snapshot and a complete checkpoint.
pub fn audit_run_dir(dir: &Path, agent: AgentKind) -> Result<()> {
    let mut missing: Vec<String> = ["config.json", "provenance.json", "metrics.jsonl", "metrics.csv"]
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect();
    if snapshot_files(dir)?.is_empty() {
        missing.push("snapshot_<step>.json".into());
    }
    for f in checkpoint::expected_files(agent) {
        if !dir.join(CHECKPOINT_DIR).join(f).is_file() {
            missing.push(format!("{CHECKPOINT_DIR}/{f}"));
        }
    }
    if !missing.is_empty() {
        bail!("{}: incomplete run, missing {}", dir.display(), missing.join(", "));
    }
    Ok(())
}

/// Snapshot files in a run directory, ordered by step.
pub fn snapshot_files(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(step) = name
            .strip_prefix("snapshot_")
            .and_then(|s| s.strip_suffix(".json"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            out.push((step, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Greedy evaluation of a checkpoint. `dir` may be the checkpoint directory
/// itself or a run directory containing one.
pub fn eval(dir: &Path, episodes: u32, seed: u64) -> Result<EvalResult> {
    ensure!(episodes > 0, "--episodes must be at least 1");
    let nested = dir.join(CHECKPOINT_DIR);
    let dir = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let agent = load_agent(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(evaluate(agent.policy(), &agent.manifest.maze, episodes, 0.0, &mut rng)?)
}

/// Renders a snapshot file; `maze_config` optionally replaces the maze
/// geometry stored in the snapshot.
pub fn plot_partition(snapshot: &Path, maze_config: Option<&Path>) -> Result<String> {
    let mut snap: SnapshotFile = read_json(snapshot)?;
    if let Some(path) = maze_config {
        snap.maze = RunConfig::load(path)?.maze;
    }
    svg::render_partition(&snap)
}

/// Label for a metrics file laid out as `<root>/<agent>/<seed>/metrics.csv`.
pub fn agent_label(path: &Path) -> String {
    path.parent()
        .and_then(Path::parent)
        .and_then(Path::file_name)
        .and_then(|n| n.to_str())
        .unwrap_or("run")
        .to_string()
}

pub fn plot_curves(patterns: &[String]) -> Result<String> {
    let mut files = Vec::new();
    for pattern in patterns {
        for entry in glob::glob(pattern).with_context(|| format!("bad pattern {pattern:?}"))? {
            files.push(entry?);
        }
    }
    files.sort();
    files.dedup();
    ensure!(!files.is_empty(), "no metrics files match {patterns:?}");
    let mut groups: BTreeMap<String, Vec<Vec<(f64, f64)>>> = BTreeMap::new();
    for f in &files {
        let rows = read_csv(f)?;
        ensure!(!rows.is_empty(), "{}: no rows", f.display());
        groups
            .entry(agent_label(f))
            .or_default()
            .push(rows.iter().map(|r| (r.step as f64, r.success_rate)).collect());
    }
    let series = groups
        .iter()
        .map(|(label, runs)| svg::aggregate(label, runs))
        .collect::<Result<Vec<_>>>()?;
    svg::render_curves(&series)
}

/// Parses a box given as JSON `[[lo, hi], ...]`.
pub fn parse_box(text: &str) -> Result<IntervalBox> {
    let bounds: Vec<(f64, f64)> =
        serde_json::from_str(text).with_context(|| format!("expected [[lo, hi], ...], got {text:?}"))?;
    Ok(IntervalBox::from_bounds(&bounds)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOutcome {
    pub verdict: ReachVerdict,
    pub reach: IntervalBox,
}

impl VerifyOutcome {
    pub fn exit_code(&self) -> u8 {
        match self.verdict {
            ReachVerdict::Reached => 0,
            ReachVerdict::NotReached => 1,
            ReachVerdict::Ambiguous => 2,
        }
    }
}

pub fn verify_net(model: &Path, input: &IntervalBox, target: &IntervalBox, depth: u32) -> Result<VerifyOutcome> {
    let net = load_mlp(model)?;
    ensure!(
        input.dim() == net.input_dim(),
        "input box has {} dimensions, the network expects {}",
        input.dim(),
        net.input_dim()
    );
    ensure!(
        target.dim() == net.output_dim(),
        "target box has {} dimensions, the network produces {}",
        target.dim(),
        net.output_dim()
    );
    let reach = reach_box(&net, input, depth)?;
    let verdict = classify(&reach, target)?;
    Ok(VerifyOutcome { verdict, reach })
}
