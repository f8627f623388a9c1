use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

use super::checkpoint::{Checkpoint, RngState};
use super::cmat::CMat;
use super::model::{Model, NetInput};
use crate::alignment::build_pseudo_channel;
use crate::channel::SystemConfig;
use crate::dataset::derive_seed;
use crate::error::{Error, Result};
use crate::feature_store::FeaturePath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Pseudo-channel counts are drawn uniformly from `0..=n_max` per sample.
    pub n_max: usize,
    pub sigma_z: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// 1000 epochs, batch 500, lr 1e-4 decayed by 0.8 every 100 epochs.
    pub fn full_scale() -> Self {
        Self {
            epochs: 1000,
            batch_size: 500,
            lr_initial: 1e-4,
            lr_decay_factor: 0.8,
            lr_decay_every: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            n_max: 16,
            sigma_z: crate::alignment::DEFAULT_SIGMA_Z,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            epochs: 150,
            batch_size: 64,
            lr_initial: 1e-3,
            lr_decay_every: 15,
            n_max: 8,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.lr_initial >= 0.0
            && self.lr_decay_factor > 0.0
            && self.lr_decay_every > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.sigma_z >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("train config out of range: {self:?}")))
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_initial * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, tc: &TrainConfig) -> Self {
        Self {
            beta1: tc.beta1,
            beta2: tc.beta2,
            eps: tc.eps,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// A prepared sample in the normalized domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub partial: CMat,
    pub full: CMat,
    /// Path features of the retrieved grid points, nearest first.
    pub neighbors: Vec<Vec<FeaturePath>>,
    /// Normalization scale (RMS amplitude of the raw partial channel).
    pub scale: f64,
    pub seed: u64,
}

impl Example {
    /// Network input with the first `n` neighbors and placeholders drawn from
    /// the given seeds.
    pub fn input_with(&self, sys: &SystemConfig, n: usize, sigma_z: f64, seeds: &[u64]) -> NetInput {
        let pseudos = self
            .neighbors
            .iter()
            .take(n)
            .zip(seeds)
            .map(|(f, &s)| {
                CMat::from_complex(&build_pseudo_channel(f, sys, sigma_z, s).entries).scaled(1.0 / self.scale)
            })
            .collect();
        NetInput {
            partial: self.partial.clone(),
            pseudos,
        }
    }

    /// Evaluation input: placeholders fixed by the sample seed.
    pub fn eval_input(&self, sys: &SystemConfig, n: usize, sigma_z: f64) -> NetInput {
        let seeds: Vec<u64> = (0..n as u64).map(|j| derive_seed(self.seed, j)).collect();
        self.input_with(sys, n, sigma_z, &seeds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// State at the epoch with the lowest validation loss.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub records: Vec<TrainRecord>,
}

/// Mean loss over `set` with `n` pseudo channels and evaluation placeholders.
pub fn evaluate_loss(model: &Model, set: &[Example], sys: &SystemConfig, n: usize, sigma_z: f64) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    let mut total = 0.0;
    for chunk in set.chunks(128) {
        let inputs: Vec<_> = chunk.iter().map(|e| e.eval_input(sys, n, sigma_z)).collect();
        let targets: Vec<_> = chunk.iter().map(|e| e.full.clone()).collect();
        total += model.batch_loss(&inputs, &targets)? * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

/// Optimizer state plus the sampling generator.
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, tc: &TrainConfig) -> Self {
        let adam = Adam::new(model.param_count(), tc);
        Self {
            model,
            adam,
            rng: ChaCha8Rng::seed_from_u64(tc.seed),
            epoch: 0,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(Self {
            model: Model::from_params(ck.model.clone(), ck.params.clone())?,
            adam: ck.adam.clone(),
            rng: ck.rng.restore(),
            epoch: ck.epoch,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.cfg.clone(),
            params: self.model.params.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
            rng: RngState::capture(&self.rng),
        }
    }

    /// One optimizer update on `batch`; returns the batch loss.
    pub fn step(&mut self, batch: &[&Example], sys: &SystemConfig, tc: &TrainConfig, lr: f64) -> Result<f64> {
        let mut inputs = Vec::with_capacity(batch.len());
        for e in batch {
            let n = self.rng.random_range(0..=tc.n_max);
            let seeds: Vec<u64> = (0..n).map(|_| self.rng.random()).collect();
            inputs.push(e.input_with(sys, n, tc.sigma_z, &seeds));
        }
        let targets: Vec<_> = batch.iter().map(|e| e.full.clone()).collect();
        let (loss, grads) = self.model.loss_and_grad(&inputs, &targets)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch: self.epoch,
                detail: format!(
                    "batch loss {loss} at lr {lr:e}; lower the learning rate or check input normalization"
                ),
            });
        }
        self.adam.update(&mut self.model.params, &grads, lr);
        Ok(loss)
    }

    /// One shuffled pass over `data`; returns the mean training loss.
    pub fn epoch(&mut self, data: &[Example], sys: &SystemConfig, tc: &TrainConfig) -> Result<f64> {
        let lr = tc.lr_at(self.epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for idx in order.chunks(tc.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &data[i]).collect();
            total += self.step(&batch, sys, tc, lr)? * batch.len() as f64;
        }
        self.epoch += 1;
        Ok(total / data.len() as f64)
    }
}

/// Trains with Adam and the step-decay schedule, keeping the best-validation
/// state. Writes one CSV row per epoch to `log` when given.
pub fn train(
    model: Model,
    train_set: &[Example],
    val_set: &[Example],
    sys: &SystemConfig,
    tc: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    tc.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset("training needs train and validation samples".into()));
    }
    let n_eval = if model.cfg.kind == super::ModelKind::Gcd { tc.n_max } else { 0 };
    let mut tr = Trainer::new(model, tc);
    let start = Instant::now();
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "epoch,lr,train_loss,val_loss,wall_seconds")?;
    }
    let mut best: Option<(f64, usize, Checkpoint)> = None;
    let mut records = Vec::with_capacity(tc.epochs);
    for _ in 0..tc.epochs {
        let epoch = tr.epoch;
        let lr = tc.lr_at(epoch);
        let train_loss = tr.epoch(train_set, sys, tc)?;
        let val_loss = evaluate_loss(&tr.model, val_set, sys, n_eval, tc.sigma_z)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("validation loss {val_loss}"),
            });
        }
        let rec = TrainRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(
                w,
                "{},{:e},{:.9e},{:.9e},{:.3}",
                rec.epoch, rec.lr, rec.train_loss, rec.val_loss, rec.wall_seconds
            )?;
        }
        records.push(rec);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, tr.checkpoint()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        records,
    })
}
