//! Grids of experiments along one axis, for several normalizers and seeds.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use fedhbn_core::data::Dataset;
use fedhbn_core::federation::mode_name;
use fedhbn_core::norm::NormKind;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, IoContext, Result};
use crate::experiment::{load_datasets, run_on};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TABLE_FILE: &str = "table.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    BatchSize,
    Phi,
    NormMode,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::Phi => "phi",
            SweepAxis::NormMode => "norm_mode",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch_size" | "batch" => Ok(SweepAxis::BatchSize),
            "phi" => Ok(SweepAxis::Phi),
            "norm_mode" | "norm" => Ok(SweepAxis::NormMode),
            _ => Err(Error::Format(format!(
                "unknown sweep axis `{s}` (batch_size, phi, norm_mode)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<String>,
    /// Normalizers run at every value; ignored on the `norm_mode` axis.
    pub modes: Vec<NormKind>,
    pub seeds: Vec<u64>,
}

/// One row of the per-run summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub axis: &'static str,
    pub value: String,
    pub mode: &'static str,
    pub seed: u64,
    pub final_acc: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub error: Option<String>,
}

/// Mean and spread of the final accuracy over seeds, per (value, mode).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTableRow {
    pub axis: &'static str,
    pub value: String,
    pub mode: &'static str,
    pub runs: usize,
    pub failed: usize,
    pub mean_acc: Option<f64>,
    /// Sample standard deviation; absent with fewer than two runs.
    pub std_acc: Option<f64>,
}

/// The configuration of one cell.
pub fn cell_config(
    base: &ExperimentConfig,
    spec: &SweepSpec,
    value: &str,
    mode: NormKind,
    seed: u64,
) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    cfg.fed.seed = seed;
    cfg.fed.norm = mode;
    let bad = |what: &str| Error::Format(format!("sweep value `{value}` is not {what}"));
    match spec.axis {
        SweepAxis::BatchSize => {
            let b: usize = value.parse().map_err(|_| bad("a batch size"))?;
            if b == 0 {
                return Err(bad("a positive batch size"));
            }
            cfg.fed.batch_size = b;
            // one partition for the whole batch axis
            if base.min_samples.is_none() {
                let largest = spec
                    .values
                    .iter()
                    .filter_map(|v| v.parse::<usize>().ok())
                    .max()
                    .unwrap_or(b);
                cfg.min_samples = Some(2 * largest);
            }
        }
        SweepAxis::Phi => {
            let phi: f64 = value.parse().map_err(|_| bad("a number"))?;
            if !(phi > 0.0 && phi.is_finite()) {
                return Err(bad("a positive number"));
            }
            cfg.phi = phi;
        }
        SweepAxis::NormMode => {
            cfg.fed.norm = value.parse()?;
        }
    }
    Ok(cfg)
}

fn cells(spec: &SweepSpec, base: &ExperimentConfig) -> Vec<(String, NormKind)> {
    let mut out = Vec::new();
    for value in &spec.values {
        match spec.axis {
            SweepAxis::NormMode => out.push((value.clone(), base.fed.norm)),
            _ => out.extend(spec.modes.iter().map(|&m| (value.clone(), m))),
        }
    }
    out
}

fn cell_dir(
    out: &Path,
    spec: &SweepSpec,
    value: &str,
    mode: &str,
    seed: u64,
) -> std::path::PathBuf {
    let cell = match spec.axis {
        SweepAxis::NormMode => format!("{}={value}", spec.axis),
        _ => format!("{}={value}_{mode}", spec.axis),
    };
    out.join(cell).join(format!("seed{seed}"))
}

/// Runs every (value, mode, seed) cell. A failing cell is recorded with its
/// error and the sweep moves on.
pub fn run_sweep(
    base: &ExperimentConfig,
    spec: &SweepSpec,
    out_dir: Option<&Path>,
) -> Result<Vec<SweepCell>> {
    if spec.values.is_empty() {
        return Err(Error::Format("sweep needs at least one value".into()));
    }
    if spec.seeds.is_empty() || (spec.axis != SweepAxis::NormMode && spec.modes.is_empty()) {
        return Err(Error::Format(
            "sweep needs at least one seed and one mode".into(),
        ));
    }
    let grid = cells(spec, base);
    let mut out = Vec::new();
    for &seed in &spec.seeds {
        let data: std::result::Result<(Dataset, Dataset), String> =
            load_datasets(&base.dataset, seed).map_err(|e| e.to_string());
        for (value, mode) in &grid {
            let mut cell = SweepCell {
                axis: spec.axis.as_str(),
                value: value.clone(),
                mode: mode_name(*mode),
                seed,
                final_acc: None,
                final_train_loss: None,
                error: None,
            };
            let result = cell_config(base, spec, value, *mode, seed).and_then(|cfg| {
                cell.mode = mode_name(cfg.fed.norm);
                let (train, test) = data.as_ref().map_err(|e| Error::Format(e.clone()))?;
                let dir = out_dir.map(|d| cell_dir(d, spec, value, cell.mode, seed));
                run_on(&cfg, train, Some(test), dir.as_deref())
            });
            match result {
                Ok(r) => {
                    cell.final_acc = r.final_accuracy();
                    cell.final_train_loss = r.final_train_loss();
                }
                Err(e) => {
                    log::error!("{}={} {} seed {}: {e}", spec.axis, value, cell.mode, seed);
                    cell.error = Some(e.to_string());
                }
            }
            log::info!(
                "{}={} {} seed {} -> acc {}",
                spec.axis,
                value,
                cell.mode,
                seed,
                crate::experiment::fmt_opt(cell.final_acc)
            );
            out.push(cell);
        }
    }
    if let Some(dir) = out_dir {
        write_csv(&dir.join(SUMMARY_FILE), &out)?;
        write_csv(&dir.join(TABLE_FILE), &summarize(&out))?;
    }
    Ok(out)
}

pub fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1)
        .then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

/// Groups cells by (value, mode) in first-seen order.
pub fn summarize(cells: &[SweepCell]) -> Vec<SweepTableRow> {
    let mut order: Vec<(String, &'static str)> = Vec::new();
    let mut groups: BTreeMap<(String, &'static str), Vec<&SweepCell>> = BTreeMap::new();
    for c in cells {
        let key = (c.value.clone(), c.mode);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(c);
    }
    order
        .into_iter()
        .map(|key| {
            let group = &groups[&key];
            let accs: Vec<f64> = group.iter().filter_map(|c| c.final_acc).collect();
            let (mean_acc, std_acc) = mean_std(&accs);
            SweepTableRow {
                axis: group[0].axis,
                value: key.0,
                mode: key.1,
                runs: group.len(),
                failed: group.iter().filter(|c| c.error.is_some()).count(),
                mean_acc,
                std_acc,
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    w.flush().at(path)
}
