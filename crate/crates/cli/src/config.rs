//! The run configuration document.

use std::fmt;
use std::path::{Path, PathBuf};

use gara_core::maze::MazeConfig;
use gara_core::trainer::{AgentKind, TrainerConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const OUT_ENV: &str = "GARA_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub agent: AgentKind,
    #[serde(default)]
    pub maze: MazeConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            agent: AgentKind::Gara,
            maze: MazeConfig::default(),
            trainer: TrainerConfig::default(),
            out_dir: default_out_dir(),
            seeds: default_seeds(),
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Syntax or schema error at a 1-based line and column.
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    Invalid {
        path: PathBuf,
        message: String,
    },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            ConfigError::Parse {
                path,
                line,
                column,
                message,
            } => write!(f, "{}:{line}:{column}: {message}", path.display()),
            ConfigError::Invalid { path, message } => write!(f, "{}: {message}", path.display()),
        }
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Parses and validates; `origin` only labels error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: strip_position(&e.to_string()),
        })?;
        cfg.validate().map_err(|message| ConfigError::Invalid {
            path: origin.to_path_buf(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.maze.validate().map_err(|e| e.to_string())?;
        self.trainer.validate(&self.maze).map_err(|e| e.to_string())?;
        if self.seeds.is_empty() {
            return Err("seeds must not be empty".into());
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err("seeds must be distinct".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Trainer settings for one seed of this run.
    pub fn trainer_for(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            seed,
            ..self.trainer.clone()
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Output root: an explicit flag wins, then `GARA_OUT`, then the config.
pub fn resolve_out_root(flag: Option<&Path>, env: Option<&str>, cfg: &RunConfig) -> PathBuf {
    match (flag, env) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(e)) if !e.is_empty() => PathBuf::from(e),
        _ => cfg.out_dir.clone(),
    }
}

pub fn run_dir(root: &Path, agent: AgentKind, seed: u64) -> PathBuf {
    root.join(agent.as_str()).join(seed.to_string())
}

// serde_json appends " at line L column C"; the position is reported separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}
