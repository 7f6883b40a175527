use std::time::Instant;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{default_loss_scale, OptimizerConfig, TrainConfig};
use super::evaluate::evaluate_mse;
use super::optimizer::Optimizer;
use super::unroll::{backward, unroll, UnrollSpec};
use crate::data::{Split, TrajectoryDataset};
use crate::error::{check_len, Error, Result};
use crate::nn::{init_module_with, AttentionModule, GradientSet};
use crate::solvers::IntegrationScheme;

const NOISE_STREAM_SALT: u64 = 0x6e6f_6973_6500_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean `R_e` over the epoch's non-exploded trajectories, each measured
    /// before the update of its batch.
    pub train_loss: f64,
    /// Full-rollout MSE on the validation split.
    pub val_loss: f64,
    /// Mean network output over every training step of the epoch.
    pub mean_attention: f64,
    /// Training unrolls that failed numerically.
    pub exploded: usize,
    /// Updates skipped for non-finite gradients.
    pub skipped_updates: usize,
    pub seconds: f64,
}

/// Loss and gradient of one batch, averaged over its non-exploded members.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss: f64,
    pub gradient: GradientSet,
    pub used: usize,
    pub exploded: usize,
    pub attention_sum: f64,
    pub attention_count: usize,
}

/// Everything needed to continue training after a restart, apart from the
/// module weights themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub scheme: IntegrationScheme,
    pub config: TrainConfig,
    pub loss_scale: f64,
    pub epochs_done: usize,
    pub optimizer: Optimizer,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub scheme: IntegrationScheme,
    pub config: TrainConfig,
    pub loss_scale: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Module with the lowest validation loss.
    pub best_module: AttentionModule,
    /// Module after the last epoch.
    pub final_module: AttentionModule,
}

impl TrainReport {
    /// `epoch,train_loss,val_loss,mean_attention,exploded,skipped_updates,seconds`.
    pub fn curves_csv(&self) -> String {
        curves_csv(&self.epochs)
    }
}

pub fn curves_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,learning_rate,train_loss,val_loss,mean_attention,exploded,skipped_updates,seconds\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch, r.learning_rate, r.train_loss, r.val_loss, r.mean_attention, r.exploded, r.skipped_updates, r.seconds
        ));
    }
    out
}

/// Single-writer training loop around one module.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub module: AttentionModule,
    pub scheme: IntegrationScheme,
    pub config: TrainConfig,
    pub loss_scale: f64,
    pub optimizer: Optimizer,
    pub epochs_done: usize,
    pub history: Vec<EpochRecord>,
    best: Option<(usize, f64, AttentionModule)>,
}

fn check_train_split(train: &TrajectoryDataset) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if train.split != Split::Train {
        warn!("training on a dataset labelled {}", train.split);
    }
    Ok(())
}

impl Trainer {
    /// Fresh module from `config.seed`; `c_n` from the training split unless
    /// fixed by the config.
    pub fn new(train: &TrajectoryDataset, scheme: IntegrationScheme, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        check_train_split(train)?;
        let arch = &config.architecture;
        let module = init_module_with(
            train.dim,
            arch.hidden,
            arch.depth,
            config.seed,
            arch.module_options(config.mode),
        )?;
        let loss_scale = config.loss_scale.unwrap_or_else(|| default_loss_scale(train.mean_square()));
        Self::with_module(module, scheme, config, loss_scale)
    }

    pub fn with_module(
        module: AttentionModule,
        scheme: IntegrationScheme,
        config: TrainConfig,
        loss_scale: f64,
    ) -> Result<Self> {
        config.validate()?;
        let optimizer = Optimizer::new(config.optimizer, module.param_count());
        Ok(Self {
            module,
            scheme,
            config,
            loss_scale,
            optimizer,
            epochs_done: 0,
            history: Vec::new(),
            best: None,
        })
    }

    /// Rebuilds a trainer from its saved state, the last module, and the
    /// best module seen so far.
    pub fn resume(module: AttentionModule, best_module: Option<AttentionModule>, state: TrainerState) -> Result<Self> {
        state.config.validate()?;
        if let OptimizerConfig::Adam { .. } = state.optimizer.config {
            check_len("optimizer moments", module.param_count(), state.optimizer.first_moment.len())?;
            check_len("optimizer moments", module.param_count(), state.optimizer.second_moment.len())?;
        }
        let best = match (state.best_epoch, state.best_val_loss, best_module) {
            (Some(e), Some(v), Some(m)) => Some((e, v, m)),
            _ => None,
        };
        Ok(Self {
            module,
            scheme: state.scheme,
            config: state.config,
            loss_scale: state.loss_scale,
            optimizer: state.optimizer,
            epochs_done: state.epochs_done,
            history: state.history,
            best,
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            scheme: self.scheme,
            config: self.config.clone(),
            loss_scale: self.loss_scale,
            epochs_done: self.epochs_done,
            optimizer: self.optimizer.clone(),
            history: self.history.clone(),
            best_epoch: self.best.as_ref().map(|b| b.0),
            best_val_loss: self.best.as_ref().map(|b| b.1),
        }
    }

    pub fn best_module(&self) -> Option<&AttentionModule> {
        self.best.as_ref().map(|b| &b.2)
    }

    pub fn spec<'a>(&self, dataset: &'a TrajectoryDataset) -> UnrollSpec<'a> {
        UnrollSpec {
            system: &dataset.system,
            scheme: self.scheme,
            dt: dataset.dt_coarse,
            mode: self.config.mode,
            teacher_forcing: self.config.teacher_forcing,
            noise_sigma: self.config.noise_sigma,
            noise_kind: self.config.noise_kind,
            loss_scale: self.loss_scale,
        }
    }

    /// Loss and gradient over the trajectories `indices`, at the current
    /// parameters. `epoch` only selects the noise streams.
    pub fn batch_loss_and_gradient(
        &self,
        dataset: &TrajectoryDataset,
        indices: &[usize],
        epoch: usize,
    ) -> Result<BatchResult> {
        check_len("dataset dimension", self.module.dim, dataset.dim)?;
        let spec = self.spec(dataset);
        let module = &self.module;
        let salt = self.config.seed ^ NOISE_STREAM_SALT;
        let parts: Vec<Result<Option<(f64, GradientSet, f64, usize)>>> = indices
            .par_iter()
            .map(|&i| {
                let mut rng = ChaCha8Rng::seed_from_u64(salt);
                rng.set_stream(((epoch as u64) << 32) | i as u64);
                let truth = dataset.trajectory(i);
                let record = unroll(module, &spec, truth, &mut rng)?;
                if record.is_exploded() {
                    return Ok(None);
                }
                let mut grads = GradientSet::zeros_like(module);
                let loss = backward(module, &spec, &record, truth, &mut grads)?;
                if !loss.is_finite() {
                    return Ok(None);
                }
                Ok(Some((loss, grads, record.q.iter().sum(), record.q.len())))
            })
            .collect();
        let mut out = BatchResult {
            loss: 0.0,
            gradient: GradientSet::zeros_like(module),
            used: 0,
            exploded: 0,
            attention_sum: 0.0,
            attention_count: 0,
        };
        for part in parts {
            match part? {
                Some((loss, grads, q_sum, q_count)) => {
                    out.loss += loss;
                    out.gradient.add_assign(&grads);
                    out.used += 1;
                    out.attention_sum += q_sum;
                    out.attention_count += q_count;
                }
                None => out.exploded += 1,
            }
        }
        if out.used > 0 {
            out.loss /= out.used as f64;
            out.gradient.scale(1.0 / out.used as f64);
        }
        Ok(out)
    }

    /// Applies `gradient` with the given rate. Returns `false` if the update
    /// was skipped because the gradient was not finite.
    pub fn update_parameters(&mut self, gradient: &GradientSet, learning_rate: f64) -> Result<bool> {
        let mut params = self.module.flat_params();
        let mask = self.module.trainable_mask();
        let applied = self.optimizer.update(&mut params, &gradient.flatten(), &mask, learning_rate)?;
        if applied {
            self.module.set_flat_params(&params)?;
        }
        Ok(applied)
    }

    /// One pass over `train` in a seeded order with one update per batch.
    /// Returns the record without validation loss or timing.
    pub fn train_epoch(&mut self, train: &TrajectoryDataset) -> Result<EpochRecord> {
        check_train_split(train)?;
        let epoch = self.epochs_done;
        let lr = self.config.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let (mut loss_sum, mut used, mut exploded, mut skipped) = (0.0, 0usize, 0usize, 0usize);
        let (mut q_sum, mut q_count) = (0.0, 0usize);
        for batch in order.chunks(self.config.batch_size) {
            let result = self.batch_loss_and_gradient(train, batch, epoch)?;
            exploded += result.exploded;
            if result.used == 0 {
                skipped += 1;
                continue;
            }
            loss_sum += result.loss * result.used as f64;
            used += result.used;
            q_sum += result.attention_sum;
            q_count += result.attention_count;
            if !self.update_parameters(&result.gradient, lr)? {
                skipped += 1;
            }
        }
        self.epochs_done += 1;
        if exploded > 0 {
            warn!("epoch {}: {exploded} training unrolls exploded", epoch + 1);
        }
        Ok(EpochRecord {
            epoch: epoch + 1,
            learning_rate: lr,
            train_loss: if used > 0 { loss_sum / used as f64 } else { f64::NAN },
            val_loss: f64::NAN,
            mean_attention: if q_count > 0 { q_sum / q_count as f64 } else { f64::NAN },
            exploded,
            skipped_updates: skipped,
            seconds: 0.0,
        })
    }

    /// Trains until `config.epochs` epochs are done, validating after each.
    /// `on_epoch` sees the trainer after every epoch (for checkpointing).
    pub fn run<F>(&mut self, train: &TrajectoryDataset, val: &TrajectoryDataset, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&Trainer, &EpochRecord) -> Result<()>,
    {
        if val.is_empty() {
            return Err(Error::Config("validation dataset is empty".into()));
        }
        check_len("validation dimension", train.dim, val.dim)?;
        while self.epochs_done < self.config.epochs {
            let start = Instant::now();
            let mut record = self.train_epoch(train)?;
            record.val_loss = evaluate_mse(Some(&self.module), self.scheme, self.config.mode, val)?.mse;
            record.seconds = start.elapsed().as_secs_f64();
            let improved = match &self.best {
                None => true,
                Some((_, best, _)) => record.val_loss < *best,
            };
            if improved {
                self.best = Some((record.epoch, record.val_loss, self.module.clone()));
            }
            info!(
                "epoch {}/{}: train {:.6e}, val {:.6e}, mean Q {:.4}{}",
                record.epoch,
                self.config.epochs,
                record.train_loss,
                record.val_loss,
                record.mean_attention,
                if improved { " *" } else { "" }
            );
            debug!("epoch {} took {:.2}s", record.epoch, record.seconds);
            self.history.push(record.clone());
            on_epoch(self, &record)?;
        }
        Ok(())
    }

    pub fn into_report(self) -> Result<TrainReport> {
        let (best_epoch, best_val_loss, best_module) = self
            .best
            .ok_or_else(|| Error::Config("no epoch has been run".into()))?;
        Ok(TrainReport {
            scheme: self.scheme,
            config: self.config,
            loss_scale: self.loss_scale,
            epochs: self.history,
            best_epoch,
            best_val_loss,
            best_module,
            final_module: self.module,
        })
    }
}

/// Trains a fresh module and keeps the best-validation weights.
pub fn fit(
    train: &TrajectoryDataset,
    val: &TrajectoryDataset,
    scheme: IntegrationScheme,
    config: &TrainConfig,
) -> Result<TrainReport> {
    let mut trainer = Trainer::new(train, scheme, config.clone())?;
    trainer.run(train, val, |_, _| Ok(()))?;
    trainer.into_report()
}
