//! On-disk formats for networks, Q tables and complete trained agents.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use gara_core::agents::HighLevelAgent;
use gara_core::maze::MazeConfig;
use gara_core::mlp::{Layer, Mlp};
use gara_core::partition::{GoalSpace, PartitionSnapshot, RegionId};
use gara_core::trainer::{AgentKind, PolicyRef, TrainedAgent};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Network file: layer sizes plus one row-major matrix and bias vector per
/// layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpFile {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpFile {
    pub fn from_mlp(net: &Mlp) -> Self {
        Self {
            layer_sizes: net.layer_sizes(),
            weights: net
                .layers()
                .iter()
                .map(|l| (0..l.outputs()).map(|r| l.row(r).to_vec()).collect())
                .collect(),
            biases: net.layers().iter().map(|l| l.bias().to_vec()).collect(),
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        let n = self.layer_sizes.len();
        ensure!(n >= 2, "layer_sizes needs at least input and output sizes");
        ensure!(
            self.weights.len() == n - 1 && self.biases.len() == n - 1,
            "expected {} weight matrices and bias vectors, found {} and {}",
            n - 1,
            self.weights.len(),
            self.biases.len()
        );
        let mut layers = Vec::with_capacity(n - 1);
        for (i, (rows, bias)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (inputs, outputs) = (self.layer_sizes[i], self.layer_sizes[i + 1]);
            ensure!(
                rows.len() == outputs && rows.iter().all(|r| r.len() == inputs) && bias.len() == outputs,
                "layer {i}: expected a {outputs}x{inputs} matrix and {outputs} biases"
            );
            layers.push(Layer::from_rows(rows, bias.clone()).with_context(|| format!("layer {i}"))?);
        }
        Ok(Mlp::from_layers(layers)?)
    }
}

pub fn save_mlp(net: &Mlp, path: &Path) -> Result<()> {
    write_json(path, &MlpFile::from_mlp(net))
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    let file: MlpFile = read_json(path)?;
    file.to_mlp().with_context(|| format!("{}", path.display()))
}

/// Forward-model sidecar written next to its network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardModelMeta {
    pub k: u32,
    pub goal_encoding_dim: usize,
    pub capacity: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QEntry {
    pub source: RegionId,
    pub target: RegionId,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentManifest {
    pub agent: AgentKind,
    pub k: u32,
    pub steps: u64,
    pub episodes: u64,
    pub maze: MazeConfig,
}

pub const MANIFEST: &str = "agent.json";
pub const PARTITION: &str = "partition.json";
pub const HIGH_Q: &str = "high_q.json";
pub const LOW_NET: &str = "low.json";
pub const FLAT_NET: &str = "flat.json";
pub const FM_NET: &str = "forward_model.json";
pub const FM_META: &str = "forward_model.meta.json";

/// Files a checkpoint of `agent` must contain.
pub fn expected_files(agent: AgentKind) -> &'static [&'static str] {
    match agent {
        AgentKind::Gara => &[MANIFEST, PARTITION, HIGH_Q, LOW_NET, FM_NET, FM_META],
        AgentKind::Handcrafted => &[MANIFEST, PARTITION, HIGH_Q, LOW_NET],
        AgentKind::FlatDqn => &[MANIFEST, FLAT_NET],
    }
}

pub fn save_agent(agent: &TrainedAgent, maze: &MazeConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let manifest = AgentManifest {
        agent: agent.kind,
        k: agent.k,
        steps: agent.steps,
        episodes: agent.episodes,
        maze: maze.clone(),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    if let (Some(high), Some(low)) = (&agent.high, &agent.low) {
        write_json(&dir.join(PARTITION), &agent.partition.snapshot())?;
        let table: Vec<QEntry> = high
            .table()
            .iter()
            .map(|(&(source, target), &q)| QEntry { source, target, q })
            .collect();
        write_json(&dir.join(HIGH_Q), &table)?;
        save_mlp(low.q_net(), &dir.join(LOW_NET))?;
    }
    if let Some(flat) = &agent.flat {
        save_mlp(flat.q_net(), &dir.join(FLAT_NET))?;
    }
    if let Some(fm) = &agent.forward_model {
        save_mlp(fm.net(), &dir.join(FM_NET))?;
        let meta = ForwardModelMeta {
            k: fm.k(),
            goal_encoding_dim: fm.goal_encoding_dim(),
            capacity: fm.config().capacity,
        };
        write_json(&dir.join(FM_META), &meta)?;
    }
    Ok(())
}

/// A checkpoint loaded back for evaluation.
#[derive(Clone, Debug)]
pub struct LoadedAgent {
    pub manifest: AgentManifest,
    pub partition: Option<GoalSpace>,
    pub high: Option<HighLevelAgent>,
    pub net: Mlp,
}

impl LoadedAgent {
    pub fn policy(&self) -> PolicyRef<'_> {
        match (&self.partition, &self.high) {
            (Some(partition), Some(high)) => PolicyRef::Hierarchical {
                partition,
                high,
                low_net: &self.net,
                k: self.manifest.k,
            },
            _ => PolicyRef::Flat { net: &self.net },
        }
    }
}

pub fn load_agent(dir: &Path) -> Result<LoadedAgent> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        bail!("missing checkpoint file {}", manifest_path.display());
    }
    let manifest: AgentManifest = read_json(&manifest_path)?;
    let missing: Vec<PathBuf> = expected_files(manifest.agent)
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        let names: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        bail!("missing checkpoint files: {}", names.join(", "));
    }
    manifest.maze.validate()?;
    if manifest.agent == AgentKind::FlatDqn {
        let net = load_mlp(&dir.join(FLAT_NET))?;
        return Ok(LoadedAgent {
            manifest,
            partition: None,
            high: None,
            net,
        });
    }
    let snapshot: PartitionSnapshot = read_json(&dir.join(PARTITION))?;
    let partition = GoalSpace::from_snapshot(&snapshot)?;
    let table: Vec<QEntry> = read_json(&dir.join(HIGH_Q))?;
    let mut high = HighLevelAgent::new(0.0, 0.0, 0.0);
    for e in table {
        high.set_q(e.source, e.target, e.q);
    }
    let net = load_mlp(&dir.join(LOW_NET))?;
    Ok(LoadedAgent {
        manifest,
        partition: Some(partition),
        high: Some(high),
        net,
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
