//! Downstream classifiers, the synthetic benchmark and the harnesses that
//! compare samplers under a frozen task network.

mod classifier;
mod synthetic;

pub use classifier::{
    ClassifierConfig, ClassifierOutput, PointNetClassifier, RepsClassifier, RepsSampler, Stage,
};
pub use synthetic::{
    make_synthetic_dataset, sample_shape, ShapeKind, ShapeSample, CLASS_NAMES, JITTER, NUM_CLASSES,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::geometry::{
    farthest_point_sample, random_sample, seeded_start, voxel_sample_to_count, PointCloud,
    SampleResult,
};
use crate::training::{accuracy, mix_seed, train, Model, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Disjoint seeded train and test sets of the synthetic benchmark.
pub fn synthetic_split(split: Split, num_per_class: usize, n_points: usize, seed: u64) -> Result<Vec<LabeledCloud>> {
    let stream = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    make_synthetic_dataset(num_per_class, n_points, mix_seed(seed, stream))
}

/// A downsampling strategy. Samplers only ever see coordinates.
#[derive(Debug, Clone, Copy)]
pub enum Sampler<'a> {
    /// The first `m` points in file order.
    Identity,
    Random,
    Fps,
    Voxel,
    Reps { sampler: RepsSampler<'a>, alpha: f64 },
}

impl Sampler<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Sampler::Identity => "identity",
            Sampler::Random => "random",
            Sampler::Fps => "fps",
            Sampler::Voxel => "voxel",
            Sampler::Reps { .. } => "reps",
        }
    }

    /// Downsamples to `m` points (voxel sampling may return fewer).
    pub fn sample(&self, cloud: &PointCloud, m: usize, seed: u64) -> Result<SampleResult> {
        if m == 0 || m > cloud.len() {
            return invalid_arg(format!("sample size {m} outside [1, {}]", cloud.len()));
        }
        match self {
            Sampler::Identity => Ok(SampleResult::new((0..m).collect(), cloud.len())),
            Sampler::Random => random_sample(cloud, m, seed),
            Sampler::Fps => farthest_point_sample(cloud, m, seeded_start(cloud, seed)),
            Sampler::Voxel => voxel_sample_to_count(cloud, m),
            Sampler::Reps { sampler, alpha } => sampler.sample(cloud, m, *alpha, seed, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub sampler: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub accuracy: f64,
}

/// `matrix[label][predicted]` counts.
pub fn confusion_matrix(labels: &[usize], predicted: &[usize], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    if labels.len() != predicted.len() {
        return invalid_arg("labels and predictions differ in length");
    }
    let mut m = vec![vec![0; num_classes]; num_classes];
    for (&l, &p) in labels.iter().zip(predicted) {
        if l >= num_classes || p >= num_classes {
            return invalid_arg(format!("class id outside [0, {num_classes})"));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

pub fn confusion_accuracy(matrix: &[Vec<usize>]) -> f64 {
    let total: usize = matrix.iter().flatten().sum();
    let hits: usize = (0..matrix.len()).map(|i| matrix[i][i]).sum();
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Accuracy of a frozen task network on every sampler and size.
///
/// Cloud `i` is sampled with seed `mix_seed(seed, i)`.
pub fn eval_samplers<M: Model>(
    dataset: &[LabeledCloud],
    task: &M,
    samplers: &[Sampler<'_>],
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<EvalRow>> {
    if dataset.is_empty() {
        return invalid_arg("evaluation set is empty");
    }
    let min_len = dataset.iter().map(|c| c.cloud.len()).min().unwrap_or(0);
    if let Some(&m) = sizes.iter().find(|&&m| m == 0 || m > min_len) {
        return invalid_arg(format!("sample size {m} outside [1, {min_len}]"));
    }
    let num_classes = dataset.iter().map(|c| c.label).max().unwrap_or(0) + 1;
    let labels: Vec<usize> = dataset.iter().map(|c| c.label).collect();
    let mut rows = Vec::with_capacity(samplers.len() * sizes.len());
    for sampler in samplers {
        for &m in sizes {
            let predicted = dataset
                .par_iter()
                .enumerate()
                .map(|(i, item)| {
                    let s = mix_seed(seed, i as u64);
                    let picked = sampler.sample(&item.cloud, m, s)?;
                    task.predict(&item.cloud.subset(&picked.indices), s)
                })
                .collect::<Result<Vec<_>>>()?;
            let classes = num_classes.max(predicted.iter().max().map_or(0, |p| p + 1));
            let matrix = confusion_matrix(&labels, &predicted, classes)?;
            rows.push(EvalRow { sampler: sampler.name().into(), m, accuracy: confusion_accuracy(&matrix) });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub ks: Vec<usize>,
    pub alphas: Vec<f64>,
    pub base: ClassifierConfig,
    pub train: TrainConfig,
    pub model_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `"k"` or `"alpha"`.
    pub sweep: String,
    pub k: usize,
    pub alpha: f64,
    pub accuracy: f64,
}

fn train_classifier(
    config: ClassifierConfig,
    seed: u64,
    train_set: &[LabeledCloud],
    train_cfg: &TrainConfig,
) -> Result<(RepsClassifier, TrainReport)> {
    let mut model = RepsClassifier::new(config, seed)?;
    let cfg = TrainConfig { k: config.k, alpha: config.alpha, ..*train_cfg };
    let report = train(&mut model, train_set, &[], &cfg)?;
    Ok((model, report))
}

/// Retrains the classifier for every neighbourhood size and re-scores one
/// model (built with `base.k`) for every blend weight.
pub fn run_ablation(
    train_set: &[LabeledCloud],
    test_set: &[LabeledCloud],
    config: &AblationConfig,
) -> Result<Vec<AblationRow>> {
    if config.ks.is_empty() && config.alphas.is_empty() {
        return invalid_arg("ablation needs at least one k or alpha");
    }
    let eval_seed = config.train.seed;
    let mut rows = Vec::new();
    let mut base_model = None;
    for &k in &config.ks {
        let cfg = ClassifierConfig { k, ..config.base };
        let (model, _) = train_classifier(cfg, config.model_seed, train_set, &config.train)?;
        rows.push(AblationRow {
            sweep: "k".into(),
            k,
            alpha: cfg.alpha,
            accuracy: accuracy(&model, test_set, eval_seed)?,
        });
        if k == config.base.k {
            base_model = Some(model);
        }
    }
    if !config.alphas.is_empty() {
        let mut model = match base_model {
            Some(m) => m,
            None => train_classifier(config.base, config.model_seed, train_set, &config.train)?.0,
        };
        for &alpha in &config.alphas {
            if !(0.0..=1.0).contains(&alpha) {
                return invalid_arg(format!("alpha must lie in [0, 1], got {alpha}"));
            }
            model.config.alpha = alpha;
            rows.push(AblationRow {
                sweep: "alpha".into(),
                k: model.config.k,
                alpha,
                accuracy: accuracy(&model, test_set, eval_seed)?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests;
