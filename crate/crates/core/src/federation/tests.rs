use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::data::{dirichlet_partition, synth_split, Dataset, PartitionSpec, SynthKind, SynthSpec};
use crate::nn::{softmax_cross_entropy, Layer, Model, NamedTensor, OptimState, Sgd, SimpleCnnSpec};
use crate::norm::{HybridBatchNorm, Moments, NormLayer, NormMode};
use crate::Error;

fn scalar_update(client: usize, value: f32) -> ClientUpdate {
    ClientUpdate {
        client,
        weights: vec![NamedTensor {
            name: "w".into(),
            tensor: Tensor::new(&[1], vec![value]).unwrap(),
        }],
        stats: Vec::new(),
        stats_capped: false,
        buffers: Vec::new(),
        samples: 0,
        train_loss: 0.0,
    }
}

fn stats_of(values: &[f64]) -> ChannelStats {
    ChannelStats::from_tensor(&Tensor::new(&[values.len(), 1], values.to_vec()).unwrap()).unwrap()
}

fn brute_sample_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn identical_updates_aggregate_to_themselves() {
    let plan = RoundPlan::new(1, vec![0, 1, 2], vec![3, 5, 7]).unwrap();
    let v = 0.123_456_79f32;
    let ups: Vec<_> = (0..3).map(|k| scalar_update(k, v)).collect();
    assert_eq!(
        aggregate_weights(&ups, &plan).unwrap()[0].tensor.data(),
        &[v]
    );
}

#[test]
fn two_equal_clients_give_the_midpoint() {
    let plan = RoundPlan::new(1, vec![0, 1], vec![4, 4]).unwrap();
    let ups = vec![scalar_update(0, 0.0), scalar_update(1, 2.0)];
    assert_eq!(
        aggregate_weights(&ups, &plan).unwrap()[0].tensor.data(),
        &[1.0]
    );
}

#[test]
fn weighted_mean_by_sample_count() {
    let plan = RoundPlan::new(1, vec![0, 1, 2], vec![1, 2, 3]).unwrap();
    let ups = vec![
        scalar_update(0, 6.0),
        scalar_update(1, 3.0),
        scalar_update(2, 1.0),
    ];
    assert_eq!(
        aggregate_weights(&ups, &plan).unwrap()[0].tensor.data(),
        &[2.5]
    );
}

#[test]
fn aggregation_ignores_upload_order() {
    let plan = RoundPlan::new(1, vec![0, 1, 2], vec![1, 2, 3]).unwrap();
    let ups = vec![
        scalar_update(0, 0.1),
        scalar_update(1, 0.7),
        scalar_update(2, -0.3),
    ];
    let mut shuffled = ups.clone();
    shuffled.reverse();
    assert_eq!(
        aggregate_weights(&ups, &plan).unwrap(),
        aggregate_weights(&shuffled, &plan).unwrap()
    );
}

#[test]
fn missing_participant_is_protocol_error() {
    let plan = RoundPlan::new(1, vec![0, 1], vec![1, 1]).unwrap();
    let err =
        aggregate_weights(&[scalar_update(0, 1.0), scalar_update(2, 1.0)], &plan).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)));
    let err = aggregate_weights(&[scalar_update(0, 1.0)], &plan).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)));
}

#[test]
fn plan_weights_sum_to_one() {
    let plan = RoundPlan::new(3, vec![1, 4, 9], vec![17, 3, 101]).unwrap();
    assert!((plan.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(RoundPlan::new(1, vec![2, 1], vec![1, 1]).is_err());
}

#[test]
fn two_client_pool_matches_hand_values() {
    let (a, b) = (stats_of(&[0.0, 2.0]), stats_of(&[4.0, 6.0]));
    assert_eq!(a.mean(), vec![1.0]);
    assert_eq!(a.population_variance(), vec![1.0]);
    let g = unbiased_pool(&[&a, &b]).unwrap();
    assert_eq!(g.mean, vec![3.0]);
    assert_eq!(g.var, vec![20.0 / 3.0]);
    let (m, v) = brute_sample_variance(&[0.0, 2.0, 4.0, 6.0]);
    assert_eq!((g.mean[0], g.var[0]), (m, v));
}

#[test]
fn identical_clients_get_bessel_correction() {
    let s = stats_of(&[1.0, 4.0, 2.5, -3.0]);
    let g = unbiased_pool(&[&s, &s, &s]).unwrap();
    let n = 12.0;
    assert!((g.mean[0] - s.mean()[0]).abs() < 1e-15);
    assert!((g.var[0] - n / (n - 1.0) * s.population_variance()[0]).abs() < 1e-12);
}

#[test]
fn single_client_pool_is_sample_variance() {
    let values = [0.5, -1.25, 3.0, 2.0, 7.5];
    let g = unbiased_pool(&[&stats_of(&values)]).unwrap();
    let (m, v) = brute_sample_variance(&values);
    assert!((g.mean[0] - m).abs() < 1e-14 && (g.var[0] - v).abs() < 1e-13);
}

#[test]
fn single_element_pool_is_degenerate() {
    let err = unbiased_pool(&[&stats_of(&[1.0])]).unwrap_err();
    assert!(matches!(err, Error::DegenerateVariance(_)));
}

proptest! {
    #[test]
    fn pooling_equals_brute_force(
        values in prop::collection::vec(-50.0f64..50.0, 2..80),
        cuts in prop::collection::vec(0usize..80, 0..6),
    ) {
        let mut bounds: Vec<usize> = cuts.into_iter().map(|c| c % values.len()).collect();
        bounds.push(0);
        bounds.push(values.len());
        bounds.sort_unstable();
        bounds.dedup();
        let parts: Vec<ChannelStats> = bounds.windows(2).map(|w| stats_of(&values[w[0]..w[1]])).collect();
        let refs: Vec<&ChannelStats> = parts.iter().collect();
        let g = unbiased_pool(&refs).unwrap();
        let (m, v) = brute_sample_variance(&values);
        prop_assert!((g.mean[0] - m).abs() <= 1e-9 * m.abs().max(1.0));
        prop_assert!((g.var[0] - v).abs() <= 1e-9 * v.abs().max(1.0));
    }

    #[test]
    fn participants_are_sorted_distinct_and_sized(k in 1usize..60, c in 0.01f64..=1.0, seed in any::<u64>(), round in 0u32..100) {
        let ids = sample_participants(k, c, seed, round);
        prop_assert_eq!(ids.len(), participant_count(k, c));
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ids.iter().all(|&i| i < k));
        prop_assert_eq!(ids, sample_participants(k, c, seed, round));
    }
}

#[test]
fn participant_count_rounds_up() {
    assert_eq!(participant_count(100, 0.1), 10);
    assert_eq!(participant_count(30, 0.1), 3);
    assert_eq!(participant_count(10, 0.25), 3);
    assert_eq!(participant_count(500, 0.02), 10);
    assert_eq!(participant_count(3, 0.01), 1);
}

#[test]
fn server_ema_cases() {
    let old = vec![Moments::new(vec![0.0], vec![1.0]).unwrap()];
    let new = vec![Moments::new(vec![1.0], vec![3.0]).unwrap()];
    assert_eq!(server_ema(Some(&old), new.clone(), 1.0).unwrap(), new);
    assert_eq!(server_ema(None, new.clone(), 0.01).unwrap(), new);
    // two rounds with the same new value: μ₂ = 1 − 0.99²
    let one = server_ema(Some(&old), new.clone(), 0.01).unwrap();
    let two = server_ema(Some(&one), new.clone(), 0.01).unwrap();
    assert!((two[0].mean[0] - (1.0 - 0.99f64 * 0.99)).abs() < 1e-15);
    assert!((two[0].var[0] - (3.0 - 2.0 * 0.99f64 * 0.99)).abs() < 1e-15);
    assert!(server_ema(None, new, 0.0).is_err());
}

#[test]
fn learning_rate_schedule() {
    let cfg = FedConfig {
        lr: 0.1,
        batch_size: 8,
        ..FedConfig::default()
    };
    assert!((cfg.learning_rate(1) - 0.2).abs() < 1e-15);
    assert!((cfg.learning_rate(3) - 0.2 * 0.998 * 0.998).abs() < 1e-15);
    let rounds = |t| FedConfig {
        rounds: t,
        ..FedConfig::default()
    };
    assert_eq!(rounds(10).freeze_round(), 5);
    assert_eq!(rounds(7).freeze_round(), 4);
}

fn single_hbn_model() -> Model<f32> {
    Model::new(
        vec![(
            "norm".into(),
            Layer::Norm(NormLayer::Hybrid(HybridBatchNorm::new(1))),
        )],
        NormKind::Hbn,
    )
}

fn flat_dataset(values: &[f32]) -> Dataset {
    Dataset::new(
        Tensor::new(&[values.len(), 1], values.to_vec()).unwrap(),
        vec![0; values.len()],
        1,
    )
    .unwrap()
}

#[test]
fn collect_stats_on_first_layer_is_plain_data_stats() {
    let model = single_hbn_model();
    let data = flat_dataset(&[0.0, 2.0, 0.0, 2.0]);
    let global = GlobalModel {
        weights: model.shared_params(),
        stats: vec![Moments::unit(1)],
        buffers: Vec::new(),
        round: 0,
    };
    let s = client_collect_stats(&model, &global, &data, &[0, 1], None).unwrap();
    assert_eq!(s[0].count, 2);
    assert_eq!(s[0].mean(), vec![1.0]);
    assert_eq!(s[0].population_variance(), vec![1.0]);
    // same data on another client, and a second pass: identical
    assert_eq!(
        client_collect_stats(&model, &global, &data, &[2, 3], None).unwrap(),
        s
    );
    assert_eq!(
        client_collect_stats(&model, &global, &data, &[0, 1], None).unwrap(),
        s
    );
    assert!(matches!(
        client_collect_stats(&model, &global, &data, &[], None),
        Err(Error::Data(_))
    ));
}

struct Fixture {
    train: Dataset,
    test: Dataset,
    arch: SimpleCnnSpec,
}

fn fixture(n: usize) -> Fixture {
    let spec = SynthSpec {
        classes: 4,
        kind: SynthKind::Image {
            channels: 3,
            height: 8,
            width: 8,
            tint: 0.0,
            contrast: 0.0,
        },
        separation: 1.5,
        seed: 11,
    };
    let (train, test) = synth_split(&spec, n, 40).unwrap();
    Fixture {
        train,
        test,
        arch: SimpleCnnSpec {
            in_channels: 3,
            height: 8,
            width: 8,
            num_classes: 4,
            norm: NormKind::Hbn,
            freeze_round: 0,
        },
    }
}

fn partition(train: &Dataset, clients: usize, phi: f64, seed: u64) -> Vec<Vec<usize>> {
    dirichlet_partition(
        &train.labels,
        train.classes,
        &PartitionSpec {
            clients,
            phi,
            seed,
            min_samples: 4,
        },
    )
    .unwrap()
}

fn cfg(norm: NormKind) -> FedConfig {
    FedConfig {
        norm,
        lr: 0.05,
        batch_size: 4,
        lambda: 1.0,
        seed: 5,
        ..FedConfig::default()
    }
}

#[test]
fn zero_epochs_and_zero_lr_leave_weights_alone() {
    let fx = fixture(32);
    let mut sim = Simulation::new(
        cfg(NormKind::Hbn),
        fx.arch,
        &fx.train,
        None,
        partition(&fx.train, 2, 1.0, 0),
    )
    .unwrap();
    sim.bootstrap(&Sequential).unwrap();
    let global = sim.global().clone();
    let mut client = sim.clients()[0].clone();
    for (epochs, lr) in [(0, 0.1), (2, 0.0)] {
        let local = LocalTrainConfig {
            epochs,
            batch_size: 4,
            sgd: Sgd { lr, momentum: 0.9 },
            seed: 0,
            round: 1,
        };
        let before = client.alphas.clone();
        let u =
            client_local_train(sim.template(), &global, &mut client, &fx.train, &local).unwrap();
        assert_eq!(u.weights, global.weights);
        assert_eq!(client.alphas, before);
    }
}

#[test]
fn alphas_stay_on_the_client() {
    let fx = fixture(32);
    let mut sim = Simulation::new(
        cfg(NormKind::Hbn),
        fx.arch,
        &fx.train,
        None,
        partition(&fx.train, 2, 1.0, 0),
    )
    .unwrap();
    sim.bootstrap(&Sequential).unwrap();
    let out = sim.run_round(&Sequential).unwrap();
    for u in &out.updates {
        assert!(u.weights.iter().all(|p| !p.name.contains("alpha")));
    }
    assert!(sim
        .global()
        .weights
        .iter()
        .all(|p| !p.name.contains("alpha")));
    // trained α moved away from zero and persists for the next round
    assert!(sim.clients()[0]
        .alphas
        .iter()
        .any(|a| a.data().iter().any(|&v| v != 0.0)));
}

#[test]
fn oversized_batch_degrades_to_full_batch() {
    let fx = fixture(32);
    let mut c = cfg(NormKind::Hbn);
    c.batch_size = 1000;
    let mut sim =
        Simulation::new(c, fx.arch, &fx.train, None, partition(&fx.train, 2, 1.0, 0)).unwrap();
    sim.bootstrap(&Sequential).unwrap();
    assert!(sim.run_round(&Sequential).is_ok());
}

#[test]
fn one_client_round_equals_centralized_training() {
    let fx = fixture(24);
    let mut c = cfg(NormKind::Hbn);
    c.local_epochs = 2;
    let all: Vec<usize> = (0..fx.train.len()).collect();
    let mut sim = Simulation::new(c.clone(), fx.arch, &fx.train, None, vec![all.clone()]).unwrap();
    sim.bootstrap(&Sequential).unwrap();

    // reference: plain mini-batch SGD over the whole dataset
    let mut model = sim.template().clone();
    let stats: Vec<_> = sim.global().stats.iter().cloned().map(Some).collect();
    model.set_global_stats(&stats).unwrap();
    let sgd = Sgd {
        lr: c.learning_rate(1),
        momentum: c.momentum,
    };
    let mut optim = OptimState::new();
    for epoch in 0..c.local_epochs {
        for chunk in batch_order(c.seed, 1, 0, epoch, all.len()).chunks(c.batch_size) {
            let x = fx.train.images.select_rows(chunk).unwrap();
            let labels: Vec<usize> = chunk.iter().map(|&i| fx.train.labels[i]).collect();
            let logits = model.forward(&x, NormMode::Train).unwrap();
            let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
            model.backward(&g).unwrap();
            sgd.step(&mut model, &mut optim).unwrap();
        }
    }

    sim.run_round(&Sequential).unwrap();
    assert_eq!(sim.global().weights, model.shared_params());
    assert_eq!(sim.clients()[0].alphas, model.alphas());
}

#[test]
fn zero_lr_round_only_refreshes_statistics() {
    let fx = fixture(40);
    let mut c = cfg(NormKind::Hbn);
    c.lr = 0.0;
    let mut sim =
        Simulation::new(c, fx.arch, &fx.train, None, partition(&fx.train, 3, 0.5, 1)).unwrap();
    sim.bootstrap(&Sequential).unwrap();
    let before = sim.global().clone();
    let out = sim.run_round(&Sequential).unwrap();
    assert_eq!(sim.global().weights, before.weights);
    assert_eq!(
        sim.global().stats,
        aggregate_stats_unbiased(&out.updates, &out.plan).unwrap()
    );
}

#[test]
fn single_client_stats_match_union_oracle() {
    let fx = fixture(24);
    let all: Vec<usize> = (0..fx.train.len()).collect();
    let mut sim = Simulation::new(
        cfg(NormKind::Hbn),
        fx.arch,
        &fx.train,
        None,
        vec![all.clone()],
    )
    .unwrap();
    sim.bootstrap(&Sequential).unwrap();
    let out = sim.run_round(&Sequential).unwrap();
    let pooled =
        client_collect_stats(sim.template(), &out.previous, &fx.train, &all, None).unwrap();
    let oracle: Vec<Moments> = pooled
        .iter()
        .map(|s| Moments::new(s.mean(), s.sample_variance().unwrap()).unwrap())
        .collect();
    assert!(max_relative_stats_error(&sim.global().stats, &oracle).unwrap() < 1e-12);
}

#[test]
fn uploaded_stats_do_not_depend_on_local_training() {
    let fx = fixture(40);
    let part = partition(&fx.train, 3, 0.5, 2);
    let stats_with_lr = |lr: f64| {
        let mut c = cfg(NormKind::Hbn);
        c.lr = lr;
        let mut sim = Simulation::new(c, fx.arch, &fx.train, None, part.clone()).unwrap();
        sim.bootstrap(&Sequential).unwrap();
        let out = sim.run_round(&Sequential).unwrap();
        (
            out.updates
                .iter()
                .map(|u| u.stats.clone())
                .collect::<Vec<_>>(),
            out.updates
                .iter()
                .map(|u| u.weights.clone())
                .collect::<Vec<_>>(),
        )
    };
    let (s1, w1) = stats_with_lr(0.01);
    let (s2, w2) = stats_with_lr(0.2);
    assert_eq!(s1, s2);
    assert_ne!(w1, w2);
}

#[test]
fn naive_bn_statistics_are_biased() {
    let fx = fixture(60);
    let mut c = cfg(NormKind::Bn);
    c.measure_gap = true;
    let mut sim =
        Simulation::new(c, fx.arch, &fx.train, None, partition(&fx.train, 3, 0.1, 3)).unwrap();
    let out = sim.run_round(&Sequential).unwrap();
    assert!(out.metrics.stats_gap.unwrap() > 0.0);
}

#[test]
fn zero_rounds_run_one_statistics_round() {
    let fx = fixture(32);
    let mut c = cfg(NormKind::Hbn);
    c.rounds = 0;
    let part = partition(&fx.train, 2, 1.0, 0);
    let sim = Simulation::new(c.clone(), fx.arch, &fx.train, None, part.clone()).unwrap();
    let initial = sim.global().weights.clone();
    let out = run_training(
        &c,
        fx.arch,
        &fx.train,
        Some(&fx.test),
        part,
        &Sequential,
        |_| {},
    )
    .unwrap();
    assert_eq!(out.metrics.len(), 1);
    assert_eq!(out.metrics[0].round, 1);
    assert_eq!(out.metrics[0].train_loss, None);
    assert_eq!(out.global.weights, initial);
    assert_eq!(out.global.stats.len(), 3);
}

#[test]
fn training_is_deterministic() {
    let fx = fixture(40);
    for norm in [
        NormKind::Hbn,
        NormKind::Bn,
        NormKind::Gn,
        NormKind::FixBn,
        NormKind::Fbn,
        NormKind::Ln,
    ] {
        let mut c = cfg(norm);
        c.rounds = 2;
        c.participation = 0.5;
        c.lambda = 0.01;
        let part = partition(&fx.train, 4, 0.3, 4);
        let run = || {
            run_training(
                &c,
                fx.arch,
                &fx.train,
                Some(&fx.test),
                part.clone(),
                &Sequential,
                |_| {},
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.global, b.global, "{norm}");
        assert_eq!(a.metrics, b.metrics, "{norm}");
        assert_eq!(a.metrics.len(), 3);
        assert_eq!(a.metrics[0].participants.len(), 2);
    }
}

#[test]
fn evaluation_is_pure_and_needs_statistics() {
    let fx = fixture(32);
    let mut sim = Simulation::new(
        cfg(NormKind::Hbn),
        fx.arch,
        &fx.train,
        None,
        partition(&fx.train, 2, 1.0, 0),
    )
    .unwrap();
    let err = evaluate_accuracy(sim.template(), sim.global(), &fx.test).unwrap_err();
    assert!(matches!(err, Error::State(_)));
    sim.bootstrap(&Sequential).unwrap();
    let a = evaluate_accuracy(sim.template(), sim.global(), &fx.test).unwrap();
    assert_eq!(
        a,
        evaluate_accuracy(sim.template(), sim.global(), &fx.test).unwrap()
    );
    assert!((0.0..=1.0).contains(&a));
}

#[test]
fn mismatched_norm_kind_is_rejected() {
    let fx = fixture(16);
    let model = single_hbn_model();
    let err = Simulation::from_model(cfg(NormKind::Bn), model, &fx.train, None, vec![vec![0, 1]])
        .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}
