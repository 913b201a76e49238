//! Spatial primitives: point clouds, nearest neighbours, classical samplers
//! and patch partitioning.
//!
//! All distances are Euclidean in raw coordinates. Anything that involves a
//! choice between equidistant points resolves it by ascending point index, so
//! every result here is a deterministic function of its inputs and seed.

mod kdtree;
mod patches;
mod samplers;

pub use kdtree::KdTree;
pub use patches::{partition_patches, Patch};
pub use samplers::{
    farthest_point_sample, random_sample, seeded_start, voxel_sample, voxel_sample_to_count,
    SampleResult,
};

use std::cmp::Ordering;

use crate::error::{invalid_arg, Result};
use crate::tensor::Tensor;

pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Orders `(squared distance, index)` pairs: nearer first, lower index on ties.
#[inline]
pub(crate) fn cmp_candidates(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// `n` points in 3-D with optional per-point feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: Vec<Point3>,
    feats: Option<Tensor>,
}

impl PointCloud {
    pub fn new(coords: Vec<Point3>) -> Result<Self> {
        if let Some(i) = coords.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return invalid_arg(format!("point {i} has a non-finite coordinate"));
        }
        Ok(Self { coords, feats: None })
    }

    pub fn with_features(mut self, feats: Tensor) -> Result<Self> {
        if feats.rows() != self.coords.len() {
            return invalid_arg(format!(
                "feature rows {} do not match point count {}",
                feats.rows(),
                self.coords.len()
            ));
        }
        if !feats.is_finite() {
            return invalid_arg("features contain non-finite values");
        }
        self.feats = Some(feats);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Point3] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> &Point3 {
        &self.coords[i]
    }

    pub fn feats(&self) -> Option<&Tensor> {
        self.feats.as_ref()
    }

    /// Feature width `d`, 0 when the cloud carries no features.
    pub fn feature_dim(&self) -> usize {
        self.feats.as_ref().map_or(0, Tensor::cols)
    }

    /// The points at `indices`, in that order, with their features.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
            feats: self.feats.as_ref().map(|f| f.select_rows(indices)),
        }
    }

    pub fn translated(&self, t: Point3) -> Self {
        Self {
            coords: self
                .coords
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
            feats: self.feats.clone(),
        }
    }

    pub fn centroid(&self) -> Point3 {
        centroid_of(self.coords.iter())
    }

    pub fn coords_tensor(&self) -> Tensor {
        Tensor::from_points(&self.coords)
    }
}

pub(crate) fn centroid_of<'a>(points: impl Iterator<Item = &'a Point3>) -> Point3 {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for p in points {
        for a in 0..3 {
            sum[a] += p[a];
        }
        n += 1;
    }
    if n == 0 {
        return sum;
    }
    let n = n as f64;
    [sum[0] / n, sum[1] / n, sum[2] / n]
}

/// Whether a point may appear in its own neighbour list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelfMatch {
    Include,
    Exclude,
}

/// The `k` nearest neighbours of one cloud point.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub center: usize,
    /// Ascending distance, ties by ascending index.
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
    pub positions: Vec<Point3>,
    pub features: Option<Tensor>,
}

impl NeighborSet {
    fn gather(cloud: &PointCloud, center: usize, found: Vec<(f64, usize)>) -> Self {
        let indices: Vec<usize> = found.iter().map(|&(_, i)| i).collect();
        Self {
            center,
            distances: found.iter().map(|&(d2, _)| d2.sqrt()).collect(),
            positions: indices.iter().map(|&i| cloud.coords[i]).collect(),
            features: cloud.feats.as_ref().map(|f| f.select_rows(&indices)),
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn check_knn_args(cloud: &PointCloud, k: usize, self_match: SelfMatch) -> Result<()> {
    if cloud.is_empty() {
        return invalid_arg("kNN on an empty cloud");
    }
    let available = match self_match {
        SelfMatch::Include => cloud.len(),
        SelfMatch::Exclude => cloud.len() - 1,
    };
    if k == 0 || k > available {
        return invalid_arg(format!(
            "k = {k} outside [1, {available}] for a cloud of {} points",
            cloud.len()
        ));
    }
    Ok(())
}

/// Exact `k` nearest neighbours of `cloud[query]`, the query itself included.
pub fn knn(cloud: &PointCloud, query: usize, k: usize) -> Result<NeighborSet> {
    knn_with(cloud, query, k, SelfMatch::Include)
}

/// Single-query kNN by a full scan.
pub fn knn_with(
    cloud: &PointCloud,
    query: usize,
    k: usize,
    self_match: SelfMatch,
) -> Result<NeighborSet> {
    check_knn_args(cloud, k, self_match)?;
    if query >= cloud.len() {
        return invalid_arg(format!("query index {query} out of range"));
    }
    let q = cloud.coords[query];
    let mut cand: Vec<(f64, usize)> = cloud
        .coords
        .iter()
        .enumerate()
        .filter(|&(i, _)| self_match == SelfMatch::Include || i != query)
        .map(|(i, p)| (dist2(&q, p), i))
        .collect();
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, |a, b| cmp_candidates(*a, *b));
        cand.truncate(k);
    }
    cand.sort_unstable_by(|a, b| cmp_candidates(*a, *b));
    Ok(NeighborSet::gather(cloud, query, cand))
}

/// kNN for many queries through one spatial index.
pub fn knn_batch(cloud: &PointCloud, queries: &[usize], k: usize) -> Result<Vec<NeighborSet>> {
    knn_batch_with(cloud, queries, k, SelfMatch::Include)
}

pub fn knn_batch_with(
    cloud: &PointCloud,
    queries: &[usize],
    k: usize,
    self_match: SelfMatch,
) -> Result<Vec<NeighborSet>> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    Ok(knn_indices(cloud, queries, k, self_match)?
        .into_iter()
        .zip(queries)
        .map(|(found, &q)| NeighborSet::gather(cloud, q, found))
        .collect())
}

/// Neighbour `(squared distance, index)` lists without gathering positions.
pub(crate) fn knn_indices(
    cloud: &PointCloud,
    queries: &[usize],
    k: usize,
    self_match: SelfMatch,
) -> Result<Vec<Vec<(f64, usize)>>> {
    check_knn_args(cloud, k, self_match)?;
    if let Some(&q) = queries.iter().find(|&&q| q >= cloud.len()) {
        return invalid_arg(format!("query index {q} out of range"));
    }
    let tree = KdTree::build(cloud.coords());
    Ok(queries
        .iter()
        .map(|&q| {
            let skip = (self_match == SelfMatch::Exclude).then_some(q);
            tree.nearest(&cloud.coords[q], k, skip)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn square() -> PointCloud {
        PointCloud::new(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 1.0, 0.0],
        ])
        .unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect())
            .unwrap()
    }

    fn brute_force(cloud: &PointCloud, q: usize, k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = (0..cloud.len())
            .map(|i| (dist2(cloud.point(q), cloud.point(i)), i))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn single_point_neighbors_itself() {
        let cloud = PointCloud::new(vec![[0.5, 0.5, 0.5]]).unwrap();
        assert_eq!(knn(&cloud, 0, 1).unwrap().indices, vec![0]);
    }

    #[test]
    fn square_tie_breaks_by_index() {
        let set = knn(&square(), 0, 2).unwrap();
        assert_eq!(set.indices, vec![0, 1]);
        assert_eq!(set.distances, vec![0.0, 1.0]);
        assert_eq!(set.positions[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn k_equal_n_is_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = random_cloud(&mut rng, 17);
        let mut idx = knn(&cloud, 5, 17).unwrap().indices;
        idx.sort_unstable();
        assert_eq!(idx, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn knn_errors() {
        let cloud = square();
        assert!(knn(&cloud, 0, 5).is_err());
        assert!(knn(&cloud, 0, 0).is_err());
        assert!(knn(&cloud, 9, 1).is_err());
        assert!(knn_with(&cloud, 0, 4, SelfMatch::Exclude).is_err());
        let empty = PointCloud::new(vec![]).unwrap();
        assert!(knn(&empty, 0, 1).is_err());
    }

    #[test]
    fn exclude_self_skips_query_only() {
        let cloud = PointCloud::new(vec![[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let set = knn_with(&cloud, 0, 2, SelfMatch::Exclude).unwrap();
        assert_eq!(set.indices, vec![1, 2]);
        let batch = knn_batch_with(&cloud, &[0], 2, SelfMatch::Exclude).unwrap();
        assert_eq!(batch[0], set);
    }

    #[test]
    fn batch_matches_single_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let cloud = random_cloud(&mut rng, 64);
            let queries: Vec<usize> = (0..64).collect();
            let k = rng.random_range(1..=64);
            let batch = knn_batch(&cloud, &queries, k).unwrap();
            for (q, set) in queries.iter().zip(&batch) {
                assert_eq!(set, &knn(&cloud, *q, k).unwrap());
                assert_eq!(set.indices, brute_force(&cloud, *q, k));
            }
        }
        let cloud = square();
        assert!(knn_batch(&cloud, &[], 1).unwrap().is_empty());
        assert_eq!(knn_batch(&cloud, &[0], 1).unwrap(), vec![knn(&cloud, 0, 1).unwrap()]);
    }

    #[test]
    fn features_follow_neighbors() {
        let feats = Tensor::from_vec(4, 1, vec![10.0, 11.0, 12.0, 13.0]).unwrap();
        let cloud = square().with_features(feats).unwrap();
        let set = knn(&cloud, 3, 3).unwrap();
        assert_eq!(set.indices, vec![3, 1, 2]);
        assert_eq!(set.features.unwrap().data(), &[13.0, 11.0, 12.0]);
    }

    #[test]
    fn cloud_rejects_bad_input() {
        assert!(PointCloud::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
        let err = square().with_features(Tensor::zeros(3, 2));
        assert!(err.is_err());
    }
}
