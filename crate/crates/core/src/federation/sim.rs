use alloc::vec::Vec;

use super::aggregate::{
    aggregate_buffers, aggregate_stats_unbiased, aggregate_weights, server_ema,
};
use super::client::{
    bootstrap_global_stats, client_collect_stats, client_local_train, instantiate,
    LocalTrainConfig, INFERENCE_CHUNK,
};
use super::oracle::{layerwise_oracle, stats_gap};
use super::plan::{sample_participants, RoundPlan};
use super::{mode_name, ClientRecord, ClientUpdate, FedConfig, GlobalModel};
use crate::data::Dataset;
use crate::error::{bail, Result};
use crate::nn::loss::argmax_rows;
use crate::nn::{build_simple_cnn, Model, Sgd, SimpleCnnSpec};
use crate::norm::{ChannelStats, GlobalStats, Moments, NormKind, NormMode};
use crate::rng::{stream_rng, Stream};

/// Runs independent client jobs. Results come back in input order.
pub trait Executor: Sync {
    fn map<I, O, F>(&self, items: Vec<I>, f: F) -> Vec<O>
    where
        I: Send,
        O: Send,
        F: Fn(I) -> O + Sync;
}

/// Runs every job on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<I, O, F>(&self, items: Vec<I>, f: F) -> Vec<O>
    where
        I: Send,
        O: Send,
        F: Fn(I) -> O + Sync,
    {
        items.into_iter().map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: u32,
    pub mode: &'static str,
    pub test_acc: Option<f64>,
    /// Sample-weighted mean of the participants' local losses.
    pub train_loss: Option<f64>,
    pub stats_gap: Option<f64>,
    pub lr: f64,
    pub participants: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub plan: RoundPlan,
    pub updates: Vec<ClientUpdate>,
    /// Pooled statistics of this round before the moving average.
    pub aggregated_stats: Vec<GlobalStats>,
    /// Server state the clients downloaded.
    pub previous: GlobalModel,
    pub metrics: RoundMetrics,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub global: GlobalModel,
    /// Pooled sufficient statistics of the closing statistics round, per
    /// hybrid layer (empty for other models).
    pub final_stats: Vec<ChannelStats>,
    pub metrics: Vec<RoundMetrics>,
    pub clients: Vec<ClientRecord>,
}

/// Top-1 accuracy of the global model in evaluation mode.
pub fn evaluate_accuracy(
    template: &Model<f32>,
    global: &GlobalModel,
    test: &Dataset,
) -> Result<f64> {
    if test.is_empty() {
        bail!(Data, "empty evaluation set");
    }
    let mut model = instantiate(template, global, None)?;
    let mut correct = 0usize;
    let all: Vec<usize> = (0..test.len()).collect();
    for chunk in all.chunks(INFERENCE_CHUNK) {
        let logits = model.forward(&test.images.select_rows(chunk)?, NormMode::Eval)?;
        let predicted = argmax_rows(&logits)?;
        correct += chunk
            .iter()
            .zip(&predicted)
            .filter(|(&i, &p)| test.labels[i] == p)
            .count();
    }
    Ok(correct as f64 / test.len() as f64)
}

fn pooled_moments(stats: &[ChannelStats]) -> Result<Vec<Moments>> {
    stats
        .iter()
        .map(|s| Moments::new(s.mean(), s.sample_variance()?))
        .collect()
}

/// One federated experiment: server state, clients and the data they index.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    cfg: FedConfig,
    template: Model<f32>,
    train: &'a Dataset,
    test: Option<&'a Dataset>,
    clients: Vec<ClientRecord>,
    global: GlobalModel,
}

impl<'a> Simulation<'a> {
    /// Builds the Simple-CNN for `arch` (its norm kind and freeze round are
    /// taken from `cfg`) with weights drawn from the seed's init stream.
    pub fn new(
        cfg: FedConfig,
        arch: SimpleCnnSpec,
        train: &'a Dataset,
        test: Option<&'a Dataset>,
        partition: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let arch = SimpleCnnSpec {
            norm: cfg.norm,
            freeze_round: cfg.freeze_round(),
            ..arch
        };
        let mut rng = stream_rng(cfg.seed, Stream::Init, &[]);
        let mut template = build_simple_cnn(arch, &mut rng)?;
        template.set_epsilon(cfg.epsilon)?;
        Self::from_model(cfg, template, train, test, partition)
    }

    /// Uses `template` as the initial global model.
    pub fn from_model(
        cfg: FedConfig,
        template: Model<f32>,
        train: &'a Dataset,
        test: Option<&'a Dataset>,
        partition: Vec<Vec<usize>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if template.norm_kind() != cfg.norm {
            bail!(
                Config,
                "model uses {} but the run is configured for {}",
                template.norm_kind(),
                cfg.norm
            );
        }
        if partition.is_empty() {
            bail!(Config, "need at least one client");
        }
        let alphas = template.alphas();
        let mut clients = Vec::with_capacity(partition.len());
        for (id, indices) in partition.into_iter().enumerate() {
            if indices.is_empty() {
                bail!(Data, "client {} holds no samples", id);
            }
            if let Some(&bad) = indices.iter().find(|&&i| i >= train.len()) {
                bail!(
                    Data,
                    "client {} references sample {} of {}",
                    id,
                    bad,
                    train.len()
                );
            }
            clients.push(ClientRecord {
                id,
                indices,
                alphas: alphas.clone(),
            });
        }
        let global = GlobalModel {
            weights: template.shared_params(),
            stats: Vec::new(),
            buffers: template.buffers(),
            round: 0,
        };
        Ok(Self {
            cfg,
            template,
            train,
            test,
            clients,
            global,
        })
    }

    pub fn config(&self) -> &FedConfig {
        &self.cfg
    }

    pub fn template(&self) -> &Model<f32> {
        &self.template
    }

    pub fn global(&self) -> &GlobalModel {
        &self.global
    }

    pub fn clients(&self) -> &[ClientRecord] {
        &self.clients
    }

    fn is_hybrid(&self) -> bool {
        self.cfg.norm == NormKind::Hbn
    }

    /// Whether the global model can run in evaluation mode.
    pub fn is_ready(&self) -> bool {
        !self.is_hybrid() || !self.global.stats.is_empty()
    }

    /// Initial global statistics from the round-0 participants. A no-op for
    /// models without hybrid layers.
    pub fn bootstrap<E: Executor>(&mut self, executor: &E) -> Result<()> {
        if !self.is_hybrid() || !self.global.stats.is_empty() {
            return Ok(());
        }
        let ids = sample_participants(self.clients.len(), self.cfg.participation, self.cfg.seed, 0);
        let parts: Vec<&[usize]> = ids
            .iter()
            .map(|&i| self.clients[i].indices.as_slice())
            .collect();
        self.global.stats = bootstrap_global_stats(
            &self.template,
            &self.global.weights,
            self.train,
            &parts,
            self.cfg.stats_cap,
            executor,
        )?;
        Ok(())
    }

    fn plan(&self, round: u32, ids: Vec<usize>) -> Result<RoundPlan> {
        let samples = ids.iter().map(|&i| self.clients[i].samples()).collect();
        RoundPlan::new(round, ids, samples)
    }

    fn union(&self, plan: &RoundPlan) -> Vec<usize> {
        let mut all: Vec<usize> = plan
            .participants
            .iter()
            .flat_map(|&i| self.clients[i].indices.iter().copied())
            .collect();
        all.sort_unstable();
        all
    }

    fn evaluate(&self, force: bool) -> Result<Option<f64>> {
        let due =
            force || (self.cfg.eval_every > 0 && self.global.round % self.cfg.eval_every == 0);
        match self.test {
            Some(test) if due && self.is_ready() => {
                Ok(Some(evaluate_accuracy(&self.template, &self.global, test)?))
            }
            _ => Ok(None),
        }
    }

    /// Statistics of the downloaded model on the pooled data of the plan, in
    /// one `CollectStats` pass.
    fn collected_oracle(&self, previous: &GlobalModel, plan: &RoundPlan) -> Result<Vec<Moments>> {
        let union = self.union(plan);
        pooled_moments(&client_collect_stats(
            &self.template,
            previous,
            self.train,
            &union,
            None,
        )?)
    }

    /// One weight-updating round.
    pub fn run_round<E: Executor>(&mut self, executor: &E) -> Result<RoundOutcome> {
        if !self.is_ready() {
            bail!(
                State,
                "global statistics must be bootstrapped before training"
            );
        }
        let round = self.global.round + 1;
        let ids = sample_participants(
            self.clients.len(),
            self.cfg.participation,
            self.cfg.seed,
            round,
        );
        let plan = self.plan(round, ids)?;
        let lr = self.cfg.learning_rate(round);
        let local = LocalTrainConfig {
            epochs: self.cfg.local_epochs,
            batch_size: self.cfg.batch_size,
            sgd: Sgd {
                lr,
                momentum: self.cfg.momentum,
            },
            seed: self.cfg.seed,
            round,
        };
        let hybrid = self.is_hybrid();
        let cap = self.cfg.stats_cap;
        let (template, global, train) = (&self.template, &self.global, self.train);
        let jobs: Vec<&mut ClientRecord> = self
            .clients
            .iter_mut()
            .filter(|c| plan.participants.binary_search(&c.id).is_ok())
            .collect();
        let updates = executor
            .map(jobs, |client| -> Result<ClientUpdate> {
                let stats = if hybrid {
                    client_collect_stats(template, global, train, &client.indices, cap)?
                } else {
                    Vec::new()
                };
                let mut update = client_local_train(template, global, client, train, &local)?;
                update.stats_capped = hybrid && cap.is_some_and(|k| k < client.indices.len());
                update.stats = stats;
                Ok(update)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

        let previous = self.global.clone();
        let weights = aggregate_weights(&updates, &plan)?;
        let mut gap = None;
        let (aggregated_stats, stats) = if hybrid {
            let pooled = aggregate_stats_unbiased(&updates, &plan)?;
            if self.cfg.measure_gap && !updates.iter().any(|u| u.stats_capped) {
                gap = Some(stats_gap(
                    &pooled,
                    &self.collected_oracle(&previous, &plan)?,
                )?);
            }
            let blended = server_ema(Some(&previous.stats), pooled.clone(), self.cfg.lambda)?;
            (pooled, blended)
        } else {
            (Vec::new(), Vec::new())
        };
        let buffers = if self.cfg.norm.has_buffers() {
            aggregate_buffers(&updates, &plan)?
        } else {
            previous.buffers.clone()
        };
        self.global = GlobalModel {
            weights,
            stats,
            buffers,
            round,
        };
        if self.cfg.norm == NormKind::Bn && self.cfg.measure_gap {
            let model = instantiate(&self.template, &self.global, None)?;
            let oracle = layerwise_oracle(&model, self.train, &self.union(&plan))?;
            let running: Vec<Moments> =
                self.global.buffers.iter().map(|(_, m)| m.clone()).collect();
            gap = Some(stats_gap(&running, &oracle)?);
        }

        let (mut loss, mut weight) = (0.0, 0.0);
        for (u, &w) in updates.iter().zip(&plan.weights) {
            if u.train_loss.is_finite() {
                loss += w * u.train_loss;
                weight += w;
            }
        }
        let metrics = RoundMetrics {
            round,
            mode: mode_name(self.cfg.norm),
            test_acc: self.evaluate(round == self.cfg.rounds)?,
            train_loss: (weight > 0.0).then(|| loss / weight),
            stats_gap: gap,
            lr,
            participants: plan.participants.clone(),
        };
        Ok(RoundOutcome {
            plan,
            updates,
            aggregated_stats,
            previous,
            metrics,
        })
    }

    /// The closing statistics-only round: every client reports statistics of
    /// the final weights and they replace the global estimate outright. The
    /// weights are left untouched.
    pub fn final_round<E: Executor>(&mut self, executor: &E) -> Result<RoundOutcome> {
        if !self.is_ready() {
            bail!(State, "global statistics must be bootstrapped first");
        }
        let round = self.global.round + 1;
        let plan = self.plan(round, (0..self.clients.len()).collect())?;
        let previous = self.global.clone();
        let mut updates = Vec::new();
        let mut aggregated_stats = Vec::new();
        let mut gap = None;
        if self.is_hybrid() {
            let cap = self.cfg.stats_cap;
            let (template, global, train) = (&self.template, &self.global, self.train);
            updates = executor
                .map(
                    self.clients.iter().collect(),
                    |client| -> Result<ClientUpdate> {
                        Ok(ClientUpdate {
                            client: client.id,
                            weights: Vec::new(),
                            stats: client_collect_stats(
                                template,
                                global,
                                train,
                                &client.indices,
                                cap,
                            )?,
                            stats_capped: cap.is_some_and(|k| k < client.indices.len()),
                            buffers: Vec::new(),
                            samples: client.samples(),
                            train_loss: f64::NAN,
                        })
                    },
                )
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            aggregated_stats = aggregate_stats_unbiased(&updates, &plan)?;
            if self.cfg.measure_gap && !updates.iter().any(|u| u.stats_capped) {
                gap = Some(stats_gap(
                    &aggregated_stats,
                    &self.collected_oracle(&previous, &plan)?,
                )?);
            }
            self.global.stats = aggregated_stats.clone();
        }
        self.global.round = round;
        let metrics = RoundMetrics {
            round,
            mode: mode_name(self.cfg.norm),
            test_acc: self.evaluate(true)?,
            train_loss: None,
            stats_gap: gap,
            lr: 0.0,
            participants: plan.participants.clone(),
        };
        Ok(RoundOutcome {
            plan,
            updates,
            aggregated_stats,
            previous,
            metrics,
        })
    }

    pub fn into_outcome(
        self,
        metrics: Vec<RoundMetrics>,
        final_stats: Vec<ChannelStats>,
    ) -> TrainingOutcome {
        TrainingOutcome {
            global: self.global,
            final_stats,
            metrics,
            clients: self.clients,
        }
    }
}

/// Bootstrap, `cfg.rounds` training rounds and the closing statistics round.
/// `on_round` sees every metrics row as soon as it exists.
pub fn run_training<E: Executor>(
    cfg: &FedConfig,
    arch: SimpleCnnSpec,
    train: &Dataset,
    test: Option<&Dataset>,
    partition: Vec<Vec<usize>>,
    executor: &E,
    mut on_round: impl FnMut(&RoundMetrics),
) -> Result<TrainingOutcome> {
    let mut sim = Simulation::new(cfg.clone(), arch, train, test, partition)?;
    sim.bootstrap(executor)?;
    let mut metrics = Vec::with_capacity(cfg.rounds as usize + 1);
    for _ in 0..cfg.rounds {
        let outcome = sim.run_round(executor)?;
        on_round(&outcome.metrics);
        metrics.push(outcome.metrics);
    }
    let outcome = sim.final_round(executor)?;
    on_round(&outcome.metrics);
    let final_stats = merge_uploads(&outcome.updates)?;
    metrics.push(outcome.metrics);
    Ok(sim.into_outcome(metrics, final_stats))
}

/// Per-layer sum of the uploaded sufficient statistics.
pub fn merge_uploads(updates: &[ClientUpdate]) -> Result<Vec<ChannelStats>> {
    let Some(first) = updates.first() else {
        return Ok(Vec::new());
    };
    let mut merged = first.stats.clone();
    for u in &updates[1..] {
        if u.stats.len() != merged.len() {
            bail!(
                Protocol,
                "clients uploaded statistics for different layer counts"
            );
        }
        for (m, s) in merged.iter_mut().zip(&u.stats) {
            m.merge_in(s)?;
        }
    }
    Ok(merged)
}
