//! Metrics and snapshot files written during a training run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use gara_core::error::Error as CoreError;
use gara_core::maze::MazeConfig;
use gara_core::partition::{GoalSpace, PartitionSnapshot};
use gara_core::trainer::{MetricsRow, RunObserver};
use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str = "step,episode,success_rate,n_regions,fm_loss,refinements";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub step: u64,
    pub episode: u64,
    pub success_rate: f64,
    pub n_regions: usize,
    pub fm_loss: Option<f64>,
    pub refinements: u64,
}

impl From<&MetricsRow> for CsvRow {
    fn from(m: &MetricsRow) -> Self {
        Self {
            step: m.step,
            episode: m.episode,
            success_rate: m.eval_success_rate,
            n_regions: m.n_regions,
            fm_loss: m.fm_loss,
            refinements: m.refinements_committed,
        }
    }
}

/// Partition snapshot file; carries the maze so plots need nothing else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotFile {
    pub step: u64,
    pub maze: MazeConfig,
    pub partition: PartitionSnapshot,
}

pub fn snapshot_name(step: u64) -> String {
    format!("snapshot_{step}.json")
}

/// Writes `metrics.jsonl`, `metrics.csv` and `snapshot_<step>.json` into a
/// run directory, flushing after every record so a failed run keeps what it
/// produced.
pub struct FileObserver {
    dir: PathBuf,
    maze: MazeConfig,
    jsonl: BufWriter<File>,
    csv: csv::Writer<File>,
    last_step: Option<u64>,
}

impl FileObserver {
    pub fn create(dir: &Path, maze: &MazeConfig) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let jsonl = BufWriter::new(File::create(dir.join("metrics.jsonl"))?);
        let csv = csv::WriterBuilder::new()
            .has_headers(true)
            .from_path(dir.join("metrics.csv"))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            maze: maze.clone(),
            jsonl,
            csv,
            last_step: None,
        })
    }

    fn write_row(&mut self, row: &MetricsRow) -> Result<()> {
        ensure!(
            self.last_step.is_none_or(|s| s < row.step),
            "metrics steps must increase ({} after {:?})",
            row.step,
            self.last_step
        );
        ensure!(
            (0.0..=1.0).contains(&row.eval_success_rate),
            "success rate out of range"
        );
        self.last_step = Some(row.step);
        serde_json::to_writer(&mut self.jsonl, row)?;
        self.jsonl.write_all(b"\n")?;
        self.jsonl.flush()?;
        self.csv.serialize(CsvRow::from(row))?;
        self.csv.flush()?;
        Ok(())
    }

    fn write_snapshot(&self, step: u64, partition: &GoalSpace) -> Result<()> {
        let file = SnapshotFile {
            step,
            maze: self.maze.clone(),
            partition: partition.snapshot(),
        };
        crate::checkpoint::write_json(&self.dir.join(snapshot_name(step)), &file)
    }
}

fn sink(e: anyhow::Error) -> CoreError {
    CoreError::Sink(format!("{e:#}"))
}

impl RunObserver for FileObserver {
    fn on_metrics(&mut self, row: &MetricsRow) -> gara_core::Result<()> {
        self.write_row(row).map_err(sink)
    }

    fn on_snapshot(&mut self, step: u64, partition: &GoalSpace) -> gara_core::Result<()> {
        self.write_snapshot(step, partition).map_err(sink)
    }
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    ensure!(
        header.join(",") == CSV_HEADER,
        "{}: unexpected header {:?}",
        path.display(),
        header.join(",")
    );
    reader
        .deserialize()
        .map(|r| r.with_context(|| format!("reading {}", path.display())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64, success: f64, fm_loss: Option<f64>) -> MetricsRow {
        MetricsRow {
            step,
            episode: step / 100,
            eval_success_rate: success,
            eval_mean_steps: None,
            n_regions: 2,
            fm_loss,
            refinements_committed: 0,
        }
    }

    #[test]
    fn csv_has_fixed_header_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut obs = FileObserver::create(dir.path(), &MazeConfig::default()).unwrap();
        obs.on_metrics(&row(0, 0.0, None)).unwrap();
        obs.on_metrics(&row(500, 0.25, Some(0.125))).unwrap();
        drop(obs);
        let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(text.lines().nth(1).unwrap(), "0,0,0.0,2,,0");
        let rows = read_csv(&dir.path().join("metrics.csv")).unwrap();
        assert_eq!(rows[1].fm_loss, Some(0.125));
        assert_eq!(rows[0].fm_loss, None);
        let jsonl = fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
        assert_eq!(jsonl.lines().count(), 2);
    }

    #[test]
    fn non_increasing_steps_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut obs = FileObserver::create(dir.path(), &MazeConfig::default()).unwrap();
        obs.on_metrics(&row(10, 0.0, None)).unwrap();
        assert!(obs.on_metrics(&row(10, 0.0, None)).is_err());
    }
}
