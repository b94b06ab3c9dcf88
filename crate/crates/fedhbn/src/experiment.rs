//! Single seeded experiments: data, partition, training and artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fedhbn_core::data::{
    dirichlet_partition, synth_split, Dataset, PartitionSpec, SynthKind, SynthSpec,
};
use fedhbn_core::federation::{run_training, TrainingOutcome};
use fedhbn_core::nn::SimpleCnnSpec;

use crate::checkpoint::{self, Checkpoint};
use crate::cifar;
use crate::config::{DatasetSpec, ExperimentConfig};
use crate::error::{Error, IoContext, Result};
use crate::exec::Threaded;
use crate::metrics::{MetricsRow, MetricsWriter};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const PARTITION_FILE: &str = "partition.json";
pub const CHECKPOINT_FILE: &str = "final.fhbn";

/// Train and test sets for `spec`. Synthetic data is drawn from `seed`.
pub fn load_datasets(spec: &DatasetSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    match spec {
        &DatasetSpec::Synthetic {
            classes,
            train,
            test,
            channels,
            size,
            separation,
            tint,
            contrast,
        } => {
            let synth = SynthSpec {
                classes,
                kind: SynthKind::Image {
                    channels,
                    height: size,
                    width: size,
                    tint,
                    contrast,
                },
                separation,
                seed,
            };
            Ok(synth_split(&synth, train, test)?)
        }
        DatasetSpec::Cifar10 { dir } => {
            let dir = cifar::resolve_data_dir(dir.as_deref())?;
            cifar::load_cifar10_dir(&dir)
        }
    }
}

/// Simple-CNN geometry matching `data`'s sample shape.
pub fn arch_for(data: &Dataset, cfg: &ExperimentConfig) -> Result<SimpleCnnSpec> {
    let &[c, h, w] = data.sample_shape() else {
        return Err(Error::Format(format!(
            "expected CHW images, got samples of shape {:?}",
            data.sample_shape()
        )));
    };
    Ok(SimpleCnnSpec {
        in_channels: c,
        height: h,
        width: w,
        num_classes: data.classes,
        norm: cfg.fed.norm,
        freeze_round: cfg.fed.freeze_round(),
    })
}

pub fn make_partition(cfg: &ExperimentConfig, train: &Dataset) -> Result<Vec<Vec<usize>>> {
    let spec = PartitionSpec {
        clients: cfg.clients,
        phi: cfg.phi,
        seed: cfg.fed.seed,
        min_samples: cfg.min_samples(),
    };
    Ok(dirichlet_partition(&train.labels, train.classes, &spec)?)
}

/// `{client_id: [indices]}`
pub fn partition_json(partition: &[Vec<usize>]) -> String {
    let map: BTreeMap<usize, &Vec<usize>> = partition.iter().enumerate().collect();
    serde_json::to_string(&map).expect("integer maps serialize")
}

pub fn read_partition(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = fs::read_to_string(path).at(path)?;
    let map: BTreeMap<usize, Vec<usize>> = serde_json::from_str(&text)?;
    if map.keys().copied().ne(0..map.len()) {
        return Err(Error::Format(format!(
            "{}: client ids must be 0..{}",
            path.display(),
            map.len()
        )));
    }
    Ok(map.into_values().collect())
}

#[derive(Debug)]
pub struct RunResult {
    pub outcome: TrainingOutcome,
    pub rows: Vec<MetricsRow>,
    pub partition: Vec<Vec<usize>>,
}

impl RunResult {
    /// Test accuracy after the closing statistics round.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.test_acc)
    }

    /// Train loss of the last training round.
    pub fn final_train_loss(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.train_loss)
    }
}

/// Runs one experiment on already loaded data. With `out_dir`, metrics are
/// streamed to `metrics.jsonl` and the partition and final checkpoint are
/// written next to them.
pub fn run_on(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    out_dir: Option<&Path>,
) -> Result<RunResult> {
    let partition = make_partition(cfg, train)?;
    let arch = arch_for(train, cfg)?;
    let mut writer = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).at(dir)?;
            fs::write(dir.join(PARTITION_FILE), partition_json(&partition))
                .at(dir.join(PARTITION_FILE))?;
            Some(MetricsWriter::create(&dir.join(METRICS_FILE))?)
        }
        None => None,
    };
    let mut rows = Vec::new();
    let mut write_err = None;
    let executor = Threaded::new(cfg.threads);
    let outcome = run_training(
        &cfg.fed,
        arch,
        train,
        test,
        partition.clone(),
        &executor,
        |m| {
            let row = MetricsRow::from(m);
            log::info!(
                "round {:>4} {:<8} lr {:.5} loss {} acc {} gap {}",
                row.round,
                row.mode,
                row.lr,
                fmt_opt(row.train_loss),
                fmt_opt(row.test_acc),
                fmt_opt(row.stats_gap)
            );
            if let Some(w) = writer.as_mut() {
                if let Err(e) = w.write(&row) {
                    write_err.get_or_insert(e);
                }
            }
            rows.push(row);
        },
    )?;
    if let Some(e) = write_err {
        return Err(e);
    }
    if let Some(dir) = out_dir {
        let ck =
            Checkpoint::from_global(cfg.fed.norm, &outcome.global, outcome.final_stats.clone());
        checkpoint::save(&dir.join(CHECKPOINT_FILE), &ck)?;
    }
    Ok(RunResult {
        outcome,
        rows,
        partition,
    })
}

/// Loads the configured data and runs one experiment.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunResult> {
    let (train, test) = load_datasets(&cfg.dataset, cfg.fed.seed)?;
    run_on(cfg, &train, Some(&test), out_dir)
}

pub fn output_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}
