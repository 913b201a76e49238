//! Reconstruction-based importance scores and score-ranked sampling.
//!
//! Pipeline for one cloud:
//!
//! 1. every point is predicted from its `k` nearest neighbours (itself
//!    excluded); the prediction error is its point loss;
//! 2. the cloud is covered by patches of `k` points, each split into a
//!    removed and a retained half; the whole patch is predicted from the
//!    retained half and the summed member error is the patch loss;
//! 3. losses are min-max normalised and turned into per-point scores:
//!    removed members of a patch inherit its normalised loss, retained
//!    members its complement, and the blended total is
//!    `alpha · point + (1 − alpha) · shape`;
//! 4. the `m` highest totals are kept.

mod nets;

pub use nets::{
    point_reconstruction, shape_reconstruction, PointRecon, PointReconNet, ReconNets, ReconShape,
    ShapeRecon, ShapeReconNet,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape};
use crate::error::{invalid_arg, Result};
use crate::geometry::{
    dist2, farthest_point_sample, knn_indices, partition_patches, seeded_start, NeighborSet, Patch,
    Point3, PointCloud, SampleResult, SelfMatch,
};
use crate::tensor::Tensor;

pub const DEFAULT_K: usize = 16;
pub const DEFAULT_ALPHA_CLASSIFICATION: f64 = 0.8;
pub const DEFAULT_ALPHA_SEGMENTATION: f64 = 0.6;
/// Shape score given to points that belong to no patch.
pub const UNCOVERED_SHAPE_SCORE: f64 = 0.5;

/// Per-point scores of one cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub point_score: Vec<f64>,
    pub shape_score: Vec<f64>,
    pub total: Vec<f64>,
    pub alpha: f64,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    /// Recomputes the blend for a different `alpha`.
    pub fn reblend(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            point_score: self.point_score.clone(),
            shape_score: self.shape_score.clone(),
            total: blend(&self.point_score, &self.shape_score, alpha),
            alpha,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepsConfig {
    pub k: usize,
    pub alpha: f64,
    /// `None` means `ceil(n / k)`.
    pub num_patches: Option<usize>,
    pub seed: u64,
    /// Farthest-point prefilter to `2m` points before scoring.
    pub prefilter: bool,
}

impl Default for RepsConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            alpha: DEFAULT_ALPHA_CLASSIFICATION,
            num_patches: None,
            seed: 0,
            prefilter: false,
        }
    }
}

impl RepsConfig {
    pub fn patches_for(&self, n: usize) -> usize {
        self.num_patches.unwrap_or_else(|| n.div_ceil(self.k)).clamp(1, n.max(1))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return invalid_arg(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    Ok(())
}

fn blend(point: &[f64], shape: &[f64], alpha: f64) -> Vec<f64> {
    point
        .iter()
        .zip(shape)
        .map(|(p, s)| alpha * p + (1.0 - alpha) * s)
        .collect()
}

/// Maps values affinely onto `[0, 1]`; a constant input maps to all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    let span = hi - lo;
    values.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Turns raw reconstruction losses into a [`ScoreTable`].
///
/// Points covered by several patches receive the mean of their
/// assignments.
pub fn score(
    point_losses: &[f64],
    patches: &[Patch],
    shape_losses: &[f64],
    alpha: f64,
) -> Result<ScoreTable> {
    check_alpha(alpha)?;
    if point_losses.is_empty() || patches.is_empty() {
        return invalid_arg("scoring needs point losses and at least one patch");
    }
    if patches.len() != shape_losses.len() {
        return invalid_arg(format!(
            "{} patches but {} shape losses",
            patches.len(),
            shape_losses.len()
        ));
    }
    let n = point_losses.len();
    let point_score = min_max_normalize(point_losses);
    let patch_score = min_max_normalize(shape_losses);
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (p, &l) in patches.iter().zip(&patch_score) {
        for (set, value) in [(&p.removed, l), (&p.retained, 1.0 - l)] {
            for &i in set {
                if i >= n {
                    return invalid_arg(format!("patch member {i} out of range for {n} points"));
                }
                sum[i] += value;
                count[i] += 1;
            }
        }
    }
    let shape_score: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { UNCOVERED_SHAPE_SCORE } else { s / c as f64 })
        .collect();
    Ok(ScoreTable {
        total: blend(&point_score, &shape_score, alpha),
        point_score,
        shape_score,
        alpha,
    })
}

/// The `m` highest totals, best first; ties go to the lower index.
pub fn sample_top_m(scores: &ScoreTable, m: usize) -> Result<SampleResult> {
    let n = scores.len();
    if m == 0 || m > n {
        return invalid_arg(format!("sample size {m} outside [1, {n}]"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores.total[b].total_cmp(&scores.total[a]).then(a.cmp(&b)));
    order.truncate(m);
    Ok(SampleResult::new(order, n))
}

pub fn point_loss(cloud: &PointCloud, predicted: &[Point3]) -> Result<Vec<f64>> {
    if predicted.len() != cloud.len() {
        return invalid_arg(format!(
            "{} predictions for {} points",
            predicted.len(),
            cloud.len()
        ));
    }
    Ok(cloud.coords().iter().zip(predicted).map(|(p, q)| dist2(p, q).sqrt()).collect())
}

/// Sum of member errors under the members ordering.
pub fn shape_loss(cloud: &PointCloud, patch: &Patch, predicted: &[Point3]) -> Result<f64> {
    if predicted.len() != patch.members.len() {
        return invalid_arg(format!(
            "{} predictions for a patch of {}",
            predicted.len(),
            patch.members.len()
        ));
    }
    Ok(patch
        .members
        .iter()
        .zip(predicted)
        .map(|(&i, q)| dist2(cloud.point(i), q).sqrt())
        .sum())
}

fn require_feats<'a>(cloud: &'a PointCloud, nets: &ReconNets) -> Result<&'a Tensor> {
    let Some(f) = cloud.feats() else {
        return invalid_arg("reconstruction needs per-point features");
    };
    if f.cols() != nets.shape.feat_dim {
        return invalid_arg(format!(
            "feature width {} does not match the network's {}",
            f.cols(),
            nets.shape.feat_dim
        ));
    }
    Ok(f)
}

fn to_points(t: &Tensor) -> Vec<Point3> {
    (0..t.rows()).map(|r| [t.get(r, 0), t.get(r, 1), t.get(r, 2)]).collect()
}

/// Predicts one point from a neighbour set that excludes it.
pub fn reconstruct_point(
    cloud: &PointCloud,
    center: usize,
    neighbors: &NeighborSet,
    nets: &ReconNets,
    store: &ParamStore,
) -> Result<Point3> {
    let feats = require_feats(cloud, nets)?;
    let mut tape = Tape::new();
    let bound = tape.bind_frozen(store)?;
    let fv = tape.constant(feats.clone())?;
    let rec = point_reconstruction(
        &mut tape,
        &bound,
        nets,
        cloud.coords(),
        fv,
        &[center],
        std::slice::from_ref(&neighbors.indices),
    )?;
    Ok(to_points(tape.value(rec.predicted))[0])
}

/// Predicts all `k` members of a patch from its retained half.
pub fn reconstruct_shape(
    cloud: &PointCloud,
    patch: &Patch,
    nets: &ReconNets,
    store: &ParamStore,
) -> Result<Vec<Point3>> {
    let feats = require_feats(cloud, nets)?;
    let mut tape = Tape::new();
    let bound = tape.bind_frozen(store)?;
    let fv = tape.constant(feats.clone())?;
    let rec = shape_reconstruction(
        &mut tape,
        &bound,
        nets,
        cloud.coords(),
        fv,
        std::slice::from_ref(patch),
    )?;
    Ok(to_points(tape.value(rec.predicted)))
}

/// Raw losses and the resulting scores of one cloud.
#[derive(Debug, Clone)]
pub struct ScoreDetails {
    pub table: ScoreTable,
    pub point_losses: Vec<f64>,
    pub shape_losses: Vec<f64>,
    pub patches: Vec<Patch>,
}

/// Neighbour lists for point reconstruction (self excluded).
pub fn reconstruction_neighbors(cloud: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    if cloud.len() < k + 1 {
        return invalid_arg(format!(
            "point reconstruction with k = {k} needs at least {} points, got {}",
            k + 1,
            cloud.len()
        ));
    }
    let all: Vec<usize> = (0..cloud.len()).collect();
    Ok(knn_indices(cloud, &all, k, SelfMatch::Exclude)?
        .into_iter()
        .map(|found| found.into_iter().map(|(_, i)| i).collect())
        .collect())
}

/// Scores every point of `cloud` given its features.
pub fn reps_scores(
    cloud: &PointCloud,
    feats: &Tensor,
    config: &RepsConfig,
    nets: &ReconNets,
    store: &ParamStore,
) -> Result<ScoreDetails> {
    if config.k != nets.k() {
        return invalid_arg(format!(
            "configured k = {} but the networks were built for k = {}",
            config.k,
            nets.k()
        ));
    }
    let n = cloud.len();
    let neighbors = reconstruction_neighbors(cloud, config.k)?;
    let patches = partition_patches(cloud, config.patches_for(n), config.k, config.seed)?;
    let mut tape = Tape::new();
    let bound = tape.bind_frozen(store)?;
    let fv = tape.constant(feats.clone())?;
    let centers: Vec<usize> = (0..n).collect();
    let point = point_reconstruction(&mut tape, &bound, nets, cloud.coords(), fv, &centers, &neighbors)?;
    let shape = shape_reconstruction(&mut tape, &bound, nets, cloud.coords(), fv, &patches)?;
    let point_losses = tape.value(point.losses).data().to_vec();
    let shape_losses = tape.value(shape.losses).data().to_vec();
    let table = score(&point_losses, &patches, &shape_losses, config.alpha)?;
    Ok(ScoreDetails { table, point_losses, shape_losses, patches })
}

/// Indices of the farthest-point prefilter, or `None` when disabled.
pub fn prefilter_indices(cloud: &PointCloud, m: usize, config: &RepsConfig) -> Result<Option<Vec<usize>>> {
    if !config.prefilter {
        return Ok(None);
    }
    if 2 * m > cloud.len() {
        return invalid_arg(format!(
            "prefilter to 2m = {} exceeds the cloud size {}",
            2 * m,
            cloud.len()
        ));
    }
    let start = seeded_start(cloud, config.seed);
    Ok(Some(farthest_point_sample(cloud, 2 * m, start)?.indices))
}

/// End-to-end score-ranked sampling; indices address `cloud`.
pub fn reps_sample(
    cloud: &PointCloud,
    feats: &Tensor,
    m: usize,
    config: &RepsConfig,
    nets: &ReconNets,
    store: &ParamStore,
) -> Result<SampleResult> {
    if m == 0 || m > cloud.len() {
        return invalid_arg(format!("sample size {m} outside [1, {}]", cloud.len()));
    }
    if feats.rows() != cloud.len() {
        return invalid_arg("one feature row per point is required");
    }
    match prefilter_indices(cloud, m, config)? {
        Some(idx) => {
            let sub = cloud.subset(&idx);
            let details = reps_scores(&sub, &feats.select_rows(&idx), config, nets, store)?;
            Ok(sample_top_m(&details.table, m)?.lift(&idx, cloud.len()))
        }
        None => {
            let details = reps_scores(cloud, feats, config, nets, store)?;
            sample_top_m(&details.table, m)
        }
    }
}
