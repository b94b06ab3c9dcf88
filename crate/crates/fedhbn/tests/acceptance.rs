//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. `FHBN_ACCEPT=1,3` runs a subset.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fedhbn::checkpoint::{self, Checkpoint};
use fedhbn::config::{parse_config, ExperimentConfig};
use fedhbn::exec::Threaded;
use fedhbn::experiment::{arch_for, load_datasets, make_partition, run_experiment, METRICS_FILE};
use fedhbn::oracle_check::{default_config, naive_gap, unbiasedness_check, UNBIASED_TOLERANCE};
use fedhbn::sweep::{mean_std, run_sweep, SweepAxis, SweepSpec};
use fedhbn::toy::{toy_panels, write_toy_csv, ToyDistances};
use fedhbn_core::federation::{server_ema, unbiased_pool, Simulation};
use fedhbn_core::nn::gradsuite::gradient_suite;
use fedhbn_core::nn::optim::sgd_update;
use fedhbn_core::nn::Sgd;
use fedhbn_core::norm::{ema_update, hybrid_mix, mixing_weights, ChannelStats, Moments};
use fedhbn_core::rng::seeded;
use fedhbn_core::Tensor;
use rand::Rng;

type Outcome = Result<(bool, String), String>;

const TREND_CONFIG: &str = include_str!("../../../configs/desk_trend.conf");
const SEEDS: [u64; 3] = [0, 1, 2];

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn unbiasedness() -> Outcome {
    let t = Instant::now();
    let cfg = default_config();
    let (train, _) = load_datasets(&cfg.dataset, cfg.fed.seed).map_err(err)?;
    let rounds = unbiasedness_check(&cfg, &train).map_err(err)?;
    let worst = rounds.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let took = t.elapsed();
    let ok = !rounds.is_empty() && worst < UNBIASED_TOLERANCE && took < Duration::from_secs(60);
    Ok((
        ok,
        format!(
            "{} checks, max rel error {worst:.2e}, {}",
            rounds.len(),
            secs(took)
        ),
    ))
}

fn bias() -> Outcome {
    let cfg = default_config();
    let (train, _) = load_datasets(&cfg.dataset, cfg.fed.seed).map_err(err)?;
    let mut ok = true;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let skewed = naive_gap(&cfg, &train, 0.1, seed).map_err(err)?;
        let mild = naive_gap(&cfg, &train, 10.0, seed).map_err(err)?;
        ok &= skewed > 0.0 && mild > 0.0 && skewed > mild;
        detail.push(format!("seed {seed}: {skewed:.4} vs {mild:.4}"));
    }
    Ok((ok, format!("gap phi=0.1 vs phi=10; {}", detail.join(", "))))
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let entries = gradient_suite(0).map_err(err)?;
    let took = t.elapsed();
    let worst = entries
        .iter()
        .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
        .ok_or("empty suite")?;
    let covers = [
        "conv", "dense", "relu", "maxpool", "bn", "gn", "ln", "fbn", "hbn",
    ]
    .iter()
    .all(|l| entries.iter().any(|e| e.name == *l));
    let ok = covers && worst.report.max_rel_error < 1e-4 && took < Duration::from_secs(120);
    Ok((
        ok,
        format!(
            "{} cases, worst {} at {:.2e}, {}",
            entries.len(),
            worst.name,
            worst.report.max_rel_error,
            secs(took)
        ),
    ))
}

fn mix_algebra() -> Outcome {
    let mut rng = seeded(7);
    let mut draw = |n: usize, lo: f64, hi: f64| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    };
    let batch = Moments::new(draw(8, -3.0, 3.0), draw(8, 0.1, 4.0)).map_err(err)?;
    let global = Moments::new(draw(8, -3.0, 3.0), draw(8, 0.1, 4.0)).map_err(err)?;

    let mid = hybrid_mix(&[0.0; 8], &batch, &global).map_err(err)?;
    let midpoint = (0..8).all(|c| {
        mid.mean[c] == (batch.mean[c] + global.mean[c]) / 2.0
            && mid.var[c] == (batch.var[c] + global.var[c]) / 2.0
    });

    let dev = |m: &Moments, target: &Moments| {
        (0..8)
            .map(|c| {
                (m.mean[c] - target.mean[c])
                    .abs()
                    .max((m.var[c] - target.var[c]).abs())
            })
            .fold(0.0, f64::max)
    };
    let to_global = dev(
        &hybrid_mix(&[20.0; 8], &batch, &global).map_err(err)?,
        &global,
    );
    let to_batch = dev(
        &hybrid_mix(&[-20.0; 8], &batch, &global).map_err(err)?,
        &batch,
    );

    let alphas = draw(1000, -30.0, 30.0);
    let sum_dev = alphas
        .iter()
        .map(|&a| {
            let (wb, wg) = mixing_weights(a);
            (wb + wg - 1.0).abs()
        })
        .fold(0.0, f64::max);

    let ok = midpoint && to_global < 1e-8 && to_batch < 1e-8 && sum_dev <= 2.0 * f64::EPSILON;
    Ok((
        ok,
        format!(
            "midpoint exact {midpoint}, alpha=+20 off by {to_global:.1e}, alpha=-20 off by {to_batch:.1e}, weight sums within {sum_dev:.1e}"
        ),
    ))
}

fn hand_values() -> Outcome {
    let part = |xs: &[f64]| ChannelStats {
        count: xs.len() as u64,
        sum: vec![xs.iter().sum()],
        sumsq: vec![xs.iter().map(|x| x * x).sum()],
    };
    let pooled = unbiased_pool(&[&part(&[0.0, 2.0]), &part(&[4.0, 6.0])]).map_err(err)?;
    let all = [0.0, 2.0, 4.0, 6.0];
    let mean = all.iter().sum::<f64>() / 4.0;
    let brute = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0;
    let pool_ok = pooled.var[0] == brute && brute == 20.0 / 3.0 && pooled.mean[0] == mean;

    let old = Moments::new(vec![1.0, -2.0], vec![0.5, 3.0]).map_err(err)?;
    let new = Moments::new(vec![0.25, 7.0], vec![2.0, 0.125]).map_err(err)?;
    let ema_ok = ema_update(&old, &new, 1.0).map_err(err)? == new
        && server_ema(Some(&[old]), vec![new.clone()], 1.0).map_err(err)? == vec![new];

    let (lr, m, g1, g2) = (0.1, 0.9, 0.5, -0.25);
    let sgd = Sgd { lr, momentum: m };
    let (mut p, mut v) = (
        Tensor::new(&[1], vec![1.0f64]).map_err(err)?,
        Tensor::zeros(&[1]),
    );
    let grad = |g: f64| Tensor::new(&[1], vec![g]);
    sgd_update(&mut p, &grad(g1).map_err(err)?, &mut v, sgd).map_err(err)?;
    let (v1, p1) = (g1, 1.0 - lr * g1);
    let first = (p.data()[0] - p1).abs() < 1e-15 && (v.data()[0] - v1).abs() < 1e-15;
    sgd_update(&mut p, &grad(g2).map_err(err)?, &mut v, sgd).map_err(err)?;
    let v2 = m * v1 + g2;
    let p2 = p1 - lr * v2;
    let second = (p.data()[0] - p2).abs() < 1e-15 && (v.data()[0] - v2).abs() < 1e-15;

    Ok((
        pool_ok && ema_ok && first && second,
        format!(
            "pooled var {} (20/3 = {}), ema replacement {ema_ok}, momentum steps {first}/{second}",
            pooled.var[0],
            20.0 / 3.0
        ),
    ))
}

fn trend_config() -> Result<ExperimentConfig, String> {
    parse_config(TREND_CONFIG).map_err(err)
}

fn trend(dir: &Path) -> Outcome {
    let t = Instant::now();
    let cfg = trend_config()?;
    let spec = SweepSpec {
        axis: SweepAxis::NormMode,
        values: vec!["hbn".into(), "bn".into(), "gn".into()],
        modes: vec![],
        seeds: SEEDS.to_vec(),
    };
    let cells = run_sweep(&cfg, &spec, Some(dir)).map_err(err)?;
    let took = t.elapsed();
    let stats = |mode: &str| {
        let accs: Vec<f64> = cells
            .iter()
            .filter(|c| c.mode == mode)
            .filter_map(|c| c.final_acc)
            .collect();
        let (mean, std) = mean_std(&accs);
        (
            accs.len(),
            mean.unwrap_or(f64::NAN),
            std.unwrap_or(f64::NAN),
        )
    };
    let (nh, hbn, hbn_sd) = stats("hbn");
    let (nb, bn, bn_sd) = stats("naive_bn");
    let (ng, gn, gn_sd) = stats("gn");
    let complete = nh == 3 && nb == 3 && ng == 3;
    // the margin must beat the spread of both arms being compared
    let beats = |m: f64, sd: f64| hbn - m > hbn_sd.max(sd);
    let ok =
        complete && beats(bn, bn_sd) && beats(gn, gn_sd) && took < Duration::from_secs(15 * 60);
    Ok((
        ok,
        format!(
            "hbn {hbn:.4}±{hbn_sd:.4}, bn {bn:.4}±{bn_sd:.4}, gn {gn:.4}±{gn_sd:.4}, {}",
            secs(took)
        ),
    ))
}

fn toy(dir: &Path) -> Outcome {
    let panels = toy_panels(0).map_err(err)?;
    let d = ToyDistances::of(&panels);
    let path = dir.join("toy_panels.csv");
    write_toy_csv(&path, &panels).map_err(err)?;
    let text = fs::read_to_string(&path).map_err(err)?;
    let csv_ok = text.starts_with("panel,cluster,x,y\n")
        && ["raw", "local", "global", "hybrid"]
            .iter()
            .all(|p| (0..2).all(|c| text.contains(&format!("\n{p},{c},"))));
    let ok = csv_ok && d.local < 0.1 && d.hybrid > 0.0 && d.local < d.hybrid && d.hybrid < d.global;
    Ok((
        ok,
        format!(
            "distances local {:.4}, hybrid {:.4}, global {:.4}; csv panels {csv_ok}",
            d.local, d.hybrid, d.global
        ),
    ))
}

fn small_config(rounds: u32) -> Result<ExperimentConfig, String> {
    let mut cfg = parse_config(
        "dataset = synthetic\nsynth_train = 200\nsynth_test = 50\nsynth_size = 8\nclients = 4\nparticipation = 0.5\nbatch_size = 4\nnorm = hbn\n",
    )
    .map_err(err)?;
    cfg.fed.rounds = rounds;
    Ok(cfg)
}

/// Finds `needle` as a contiguous byte run.
fn contains_bytes(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

fn hygiene(dir: &Path) -> Outcome {
    let cfg = small_config(3)?;
    let (a, b) = (dir.join("a"), dir.join("b"));
    let run_a = run_experiment(&cfg, Some(&a)).map_err(err)?;
    run_experiment(&cfg, Some(&b)).map_err(err)?;
    let bytes = |d: &Path| fs::read(d.join(METRICS_FILE)).map_err(err);
    let identical = bytes(&a)? == bytes(&b)?;

    // learned α must not leak into the checkpoint or any upload
    let alphas: Vec<Vec<u8>> = run_a
        .outcome
        .clients
        .iter()
        .flat_map(|c| &c.alphas)
        .map(|t| t.data().iter().flat_map(|v| v.to_le_bytes()).collect())
        .collect();
    let learned = alphas.iter().any(|a| a.chunks(4).any(|v| v != [0u8; 4]));
    let ck_bytes = fs::read(a.join(fedhbn::experiment::CHECKPOINT_FILE)).map_err(err)?;
    let ck = checkpoint::decode(&ck_bytes).map_err(err)?;
    let ck_clean = ck.weights.iter().all(|p| !p.name.contains("alpha"))
        && alphas.iter().all(|a| !contains_bytes(&ck_bytes, a));

    let (train, _) = load_datasets(&cfg.dataset, cfg.fed.seed).map_err(err)?;
    let executor = Threaded::new(1);
    let arch = arch_for(&train, &cfg).map_err(err)?;
    let mut sim = Simulation::new(
        cfg.fed.clone(),
        arch,
        &train,
        None,
        make_partition(&cfg, &train).map_err(err)?,
    )
    .map_err(err)?;
    sim.bootstrap(&executor).map_err(err)?;
    let round = sim.run_round(&executor).map_err(err)?;
    let shared = sim.template().shared_params().len();
    let uploads_clean = round
        .updates
        .iter()
        .all(|u| u.weights.len() == shared && u.weights.iter().all(|p| !p.name.contains("alpha")));

    // T = 0: one statistics round, weights untouched
    let zero = small_config(0)?;
    let (train0, _) = load_datasets(&zero.dataset, zero.fed.seed).map_err(err)?;
    let arch0 = arch_for(&train0, &zero).map_err(err)?;
    let mut sim0 = Simulation::new(
        zero.fed.clone(),
        arch0,
        &train0,
        None,
        make_partition(&zero, &train0).map_err(err)?,
    )
    .map_err(err)?;
    let initial = sim0.template().shared_params();
    let zero_dir = dir.join("zero");
    let run0 = run_experiment(&zero, Some(&zero_dir)).map_err(err)?;
    sim0.bootstrap(&executor).map_err(err)?;
    let last = sim0.final_round(&executor).map_err(err)?;
    let ck0: Checkpoint =
        checkpoint::load(&zero_dir.join(fedhbn::experiment::CHECKPOINT_FILE)).map_err(err)?;
    let zero_ok = run0.rows.len() == 1
        && run0.rows[0].train_loss.is_none()
        && run0.outcome.global.weights == initial
        && ck0.weights == initial
        && sim0.global().weights == initial
        && last.metrics.participants.len() == zero.clients;

    let ok = identical && learned && ck_clean && uploads_clean && zero_ok;
    Ok((
        ok,
        format!(
            "byte-identical metrics {identical}, alpha absent from checkpoint {ck_clean} and uploads {uploads_clean}, T=0 {zero_ok}"
        ),
    ))
}

fn selected() -> Option<Vec<usize>> {
    let v = std::env::var("FHBN_ACCEPT").ok()?;
    Some(v.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let root = dir.path();
    let criteria: [(&str, Box<dyn Fn() -> Outcome + '_>); 8] = [
        ("unbiasedness oracle", Box::new(unbiasedness)),
        ("bias demonstration", Box::new(bias)),
        ("gradient suite", Box::new(gradients)),
        ("hybrid mix algebra", Box::new(mix_algebra)),
        ("hand values", Box::new(hand_values)),
        ("desk-scale trend", Box::new(|| trend(&root.join("trend")))),
        ("two-cluster toy", Box::new(|| toy(root))),
        (
            "determinism and hygiene",
            Box::new(|| hygiene(&root.join("hygiene"))),
        ),
    ];
    let only = selected();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let (ok, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += usize::from(!ok);
        println!(
            "criterion {n} [PRIMARY] {name}: {} ({detail})",
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
