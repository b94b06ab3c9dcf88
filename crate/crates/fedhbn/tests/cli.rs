use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fedhbn::checkpoint;
use fedhbn::config::parse_config;
use fedhbn::experiment::{
    read_partition, run_experiment, CHECKPOINT_FILE, METRICS_FILE, PARTITION_FILE,
};
use fedhbn::metrics::read_metrics;
use fedhbn::sweep::{run_sweep, SweepAxis, SweepSpec, SUMMARY_FILE, TABLE_FILE};
use fedhbn_core::norm::NormKind;

const SMALL: &str = "\
dataset = synthetic
synth_classes = 4
synth_train = 120
synth_test = 40
synth_size = 8
clients = 3
participation = 1.0
rounds = 2
batch_size = 4
norm = hbn
";

fn fedhbn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedhbn"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("small.conf");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_subcommand_exits_with_usage_error() {
    assert_eq!(fedhbn(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), "dataset = synthetic\nbatch_size = two\n");
    let out = fedhbn(&["--config", &conf, "run"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("line 2") && err.contains("batch_size"),
        "{err}"
    );
}

#[test]
fn run_writes_metrics_partition_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = fedhbn(&[
        "--config",
        &conf,
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "4",
        "run",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = read_metrics(&out_dir.join(METRICS_FILE)).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r.round).collect::<Vec<_>>(), [1, 2, 3]);
    assert!(rows[2].train_loss.is_none() && rows[2].test_acc.is_some());
    assert_eq!(rows[2].participants, [0, 1, 2]);
    let parts = read_partition(&out_dir.join(PARTITION_FILE)).unwrap();
    assert_eq!(parts.concat().len(), 120);
    let ck = checkpoint::load(&out_dir.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!((ck.round, ck.norm), (3, NormKind::Hbn));
    assert!(ck.weights.iter().all(|p| !p.name.contains("alpha")));
}

#[test]
fn same_seed_gives_byte_identical_metrics_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let run = |name: &str, threads: &str| {
        let d = dir.path().join(name);
        let out = fedhbn(&[
            "--config",
            &conf,
            "--out",
            d.to_str().unwrap(),
            "--threads",
            threads,
            "run",
        ]);
        assert!(out.status.success());
        fs::read(d.join(METRICS_FILE)).unwrap()
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "3"));
}

#[test]
fn toy_command_writes_the_panels() {
    let dir = tempfile::tempdir().unwrap();
    let out = fedhbn(&["--out", dir.path().to_str().unwrap(), "toy"]);
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("toy_panels.csv")).unwrap();
    assert!(csv.starts_with("panel,cluster,x,y\n"));
}

#[test]
fn sweep_cells_match_single_runs_in_any_order() {
    let dir = tempfile::tempdir().unwrap();
    let base = parse_config(SMALL).unwrap();
    let spec = |values: &[&str]| SweepSpec {
        axis: SweepAxis::Phi,
        values: values.iter().map(|s| s.to_string()).collect(),
        modes: vec![NormKind::Hbn, NormKind::Gn],
        seeds: vec![1],
    };
    let fwd = run_sweep(&base, &spec(&["0.3", "5"]), Some(&dir.path().join("fwd"))).unwrap();
    let rev = run_sweep(&base, &spec(&["5", "0.3"]), Some(&dir.path().join("rev"))).unwrap();
    assert!(dir.path().join("fwd").join(SUMMARY_FILE).exists());
    assert!(dir.path().join("fwd").join(TABLE_FILE).exists());
    for cell in ["phi=0.3_hbn", "phi=5_gn"] {
        let read = |root: &str| {
            fs::read(
                dir.path()
                    .join(root)
                    .join(cell)
                    .join("seed1")
                    .join(METRICS_FILE),
            )
            .unwrap()
        };
        assert_eq!(read("fwd"), read("rev"));
    }
    for c in &fwd {
        assert!(rev.iter().any(|r| r == c));
    }

    let mut single = base.clone();
    single.phi = 0.3;
    single.fed.seed = 1;
    let alone = run_experiment(&single, Some(&dir.path().join("alone"))).unwrap();
    let cell = fwd
        .iter()
        .find(|c| c.value == "0.3" && c.mode == "hbn")
        .unwrap();
    assert_eq!(cell.final_acc, alone.final_accuracy());
}
