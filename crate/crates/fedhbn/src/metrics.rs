//! Metrics as JSON lines, one object per round.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fedhbn_core::federation::RoundMetrics;
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: u32,
    pub mode: String,
    pub test_acc: Option<f64>,
    pub train_loss: Option<f64>,
    pub stats_gap: Option<f64>,
    pub lr: f64,
    pub participants: Vec<usize>,
}

impl From<&RoundMetrics> for MetricsRow {
    fn from(m: &RoundMetrics) -> Self {
        let finite = |v: Option<f64>| v.filter(|x| x.is_finite());
        Self {
            round: m.round,
            mode: m.mode.to_string(),
            test_acc: finite(m.test_acc),
            train_loss: finite(m.train_loss),
            stats_gap: finite(m.stats_gap),
            lr: m.lr,
            participants: m.participants.clone(),
        }
    }
}

/// Appends rows to a file, flushing after each one.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Truncates `path`.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).at(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .at(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        serde_json::to_writer(&mut self.out, row)?;
        self.out.write_all(b"\n").at(&self.path)?;
        self.out.flush().at(&self.path)
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).at(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_serializes_with_the_documented_keys() {
        let row = MetricsRow::from(&RoundMetrics {
            round: 3,
            mode: "hbn",
            test_acc: Some(0.5),
            train_loss: Some(f64::NAN),
            stats_gap: None,
            lr: 0.01,
            participants: vec![0, 2],
        });
        let json = serde_json::to_string(&row).unwrap();
        assert_eq!(
            json,
            r#"{"round":3,"mode":"hbn","test_acc":0.5,"train_loss":null,"stats_gap":null,"lr":0.01,"participants":[0,2]}"#
        );
    }
}
