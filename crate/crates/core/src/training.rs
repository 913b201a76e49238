//! Loss composition, the Adam optimiser and a deterministic training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamStore, Tape, Var};
use crate::error::{invalid_arg, invalid_state, Error, Result};
use crate::geometry::PointCloud;
use crate::scoring::{DEFAULT_ALPHA_CLASSIFICATION, DEFAULT_K};
use crate::tasks::LabeledCloud;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub alpha: f64,
    pub k: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight of the sampling loss in the total.
    pub sample_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
            alpha: DEFAULT_ALPHA_CLASSIFICATION,
            k: DEFAULT_K,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            sample_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return invalid_arg("epochs and batch size must be at least 1");
        }
        // A zero rate is allowed: it freezes the parameters.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return invalid_arg(format!("learning rate must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return invalid_arg("Adam needs beta1, beta2 in [0, 1) and eps > 0");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return invalid_arg(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.sample_weight >= 0.0 && self.sample_weight.is_finite()) {
            return invalid_arg("sample loss weight must be finite and >= 0");
        }
        Ok(())
    }
}

/// Sum of all point losses plus all patch losses.
pub fn sample_loss(point_losses: &[f64], shape_losses: &[f64]) -> Result<f64> {
    if point_losses.is_empty() || shape_losses.is_empty() {
        return invalid_arg("sample loss needs point and shape losses");
    }
    Ok(point_losses.iter().sum::<f64>() + shape_losses.iter().sum::<f64>())
}

pub fn total_loss(sample: f64, task: f64) -> Result<f64> {
    if !(sample.is_finite() && task.is_finite()) {
        return invalid_state(format!("non-finite loss (sample {sample}, task {task})"));
    }
    Ok(sample + task)
}

/// Tape form of [`sample_loss`] over `n×1` and `p×1` loss columns.
pub fn sample_loss_var(tape: &mut Tape, point_losses: Var, shape_losses: Var) -> Result<Var> {
    let a = tape.sum(point_losses)?;
    let b = tape.sum(shape_losses)?;
    tape.add(a, b)
}

/// `task + weight · sample` on the tape.
pub fn total_loss_var(tape: &mut Tape, sample: Var, task: Var, weight: f64) -> Result<Var> {
    let s = if weight == 1.0 { sample } else { tape.scale(sample, weight)? };
    tape.add(s, task)
}

/// Per-sample loss terms built by a model on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub sample: Option<Var>,
    pub task: Var,
}

/// Anything the training loop can optimise.
pub trait Model: Sync {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;

    /// Records the loss of one labelled cloud. `seed` drives any internal
    /// randomness such as patch splits.
    fn loss(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        cloud: &PointCloud,
        label: usize,
        seed: u64,
    ) -> Result<LossParts>;

    fn logits(&self, cloud: &PointCloud, seed: u64) -> Result<Vec<f64>>;

    /// Highest logit, lowest class on ties.
    fn predict(&self, cloud: &PointCloud, seed: u64) -> Result<usize> {
        let logits = self.logits(cloud, seed)?;
        Ok(argmax(&logits))
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// splitmix64 finaliser over a combined seed and stream id.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Adam without weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: &TrainConfig) -> Self {
        let zeros: Vec<Tensor> =
            store.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.m.len() {
            return invalid_arg("gradient list does not match the parameter store");
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return invalid_state(format!("non-finite gradient for parameter {}", store.names()[i]));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in store
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let delta = self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                // Skipping zero steps keeps the bit pattern of -0.0 intact.
                if delta != 0.0 {
                    *p -= delta;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss per cloud.
    pub train_loss: f64,
    pub sample_loss: f64,
    pub task_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.epochs {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

struct StepResult {
    sample: f64,
    task: f64,
    total: f64,
    grads: Vec<Tensor>,
}

fn sample_step<M: Model>(model: &M, item: &LabeledCloud, weight: f64, seed: u64) -> Result<StepResult> {
    let mut tape = Tape::new();
    let bound = tape.bind(model.store())?;
    let parts = model.loss(&mut tape, &bound, &item.cloud, item.label, seed)?;
    let (sample, total) = match parts.sample {
        Some(s) => (tape.value(s).item(), total_loss_var(&mut tape, s, parts.task, weight)?),
        None => (0.0, parts.task),
    };
    let task = tape.value(parts.task).item();
    let total_value = tape.value(total).item();
    total_loss(sample, task)?;
    let grads = tape.backward(total)?.for_params(&tape, &bound);
    Ok(StepResult { sample, task, total: total_value, grads })
}

/// Fraction of clouds whose predicted class matches the label.
pub fn accuracy<M: Model>(model: &M, data: &[LabeledCloud], seed: u64) -> Result<f64> {
    if data.is_empty() {
        return invalid_arg("accuracy of an empty set");
    }
    let hits = data
        .par_iter()
        .enumerate()
        .map(|(i, item)| Ok(usize::from(model.predict(&item.cloud, mix_seed(seed, i as u64))? == item.label)))
        .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
}

fn tag_epoch(err: Error, epoch: usize) -> Error {
    match err {
        Error::InvalidState(msg) => Error::InvalidState(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

/// Seeded mini-batch Adam over `train`; `val` is scored after every epoch.
///
/// Per-cloud gradients are computed in parallel and summed in batch order,
/// so results do not depend on the thread count.
pub fn train<M: Model>(
    model: &mut M,
    train: &[LabeledCloud],
    val: &[LabeledCloud],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() {
        return invalid_arg("training set is empty");
    }
    let mut opt = Adam::new(model.store(), config);
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64)));
        let (mut sum_sample, mut sum_task, mut sum_total) = (0.0, 0.0, 0.0);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let shared: &M = model;
            let results = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let stream = ((epoch as u64) << 40) ^ ((b as u64) << 20) ^ j as u64;
                    sample_step(shared, &train[i], config.sample_weight, mix_seed(config.seed, stream))
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| tag_epoch(e, epoch))?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads = results[0].grads.clone();
            for r in &results[1..] {
                for (g, h) in grads.iter_mut().zip(&r.grads) {
                    g.add_assign(h);
                }
            }
            for g in &mut grads {
                g.scale_in_place(scale);
            }
            for r in &results {
                sum_sample += r.sample;
                sum_task += r.task;
                sum_total += r.total;
            }
            opt.update(model.store_mut(), &grads).map_err(|e| tag_epoch(e, epoch))?;
        }
        let n = train.len() as f64;
        let record = EpochRecord {
            epoch,
            train_loss: sum_total / n,
            sample_loss: sum_sample / n,
            task_loss: sum_task / n,
            val_accuracy: if val.is_empty() {
                None
            } else {
                Some(accuracy(model, val, config.seed).map_err(|e| tag_epoch(e, epoch))?)
            },
        };
        if !record.train_loss.is_finite() {
            return invalid_state(format!("epoch {epoch}: non-finite training loss"));
        }
        report.epochs.push(record);
    }
    Ok(report)
}
