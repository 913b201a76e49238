use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{dist2, PointCloud, Point3};
use crate::error::{invalid_arg, Result};

/// Ordered selection of `m` indices out of an `n`-point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub indices: Vec<usize>,
    /// Downsampling rate `n / m`.
    pub ratio: f64,
}

impl SampleResult {
    pub fn new(indices: Vec<usize>, n: usize) -> Self {
        let ratio = if indices.is_empty() { f64::INFINITY } else { n as f64 / indices.len() as f64 };
        Self { indices, ratio }
    }

    pub fn m(&self) -> usize {
        self.indices.len()
    }

    /// Re-expresses indices of a sub-cloud in terms of its parent.
    pub fn lift(self, parent_indices: &[usize], parent_len: usize) -> Self {
        Self::new(self.indices.iter().map(|&i| parent_indices[i]).collect(), parent_len)
    }
}

fn check_count(cloud: &PointCloud, m: usize) -> Result<()> {
    if m == 0 || m > cloud.len() {
        return invalid_arg(format!("sample size {m} outside [1, {}]", cloud.len()));
    }
    Ok(())
}

/// `m` distinct indices drawn uniformly without replacement.
pub fn random_sample(cloud: &PointCloud, m: usize, seed: u64) -> Result<SampleResult> {
    check_count(cloud, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = rand::seq::index::sample(&mut rng, cloud.len(), m).into_vec();
    Ok(SampleResult::new(indices, cloud.len()))
}

/// Greedy max-min selection starting from `start`.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize, start: usize) -> Result<SampleResult> {
    check_count(cloud, m)?;
    if start >= cloud.len() {
        return invalid_arg(format!("start index {start} out of range"));
    }
    let pts = cloud.coords();
    let mut min_d2: Vec<f64> = pts.iter().map(|p| dist2(p, &pts[start])).collect();
    min_d2[start] = f64::NEG_INFINITY;
    let mut selected = Vec::with_capacity(m);
    selected.push(start);
    while selected.len() < m {
        // Strict comparison keeps the lowest index among equal maxima.
        let mut best = 0;
        let mut best_d2 = f64::NEG_INFINITY;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best_d2 {
                best = i;
                best_d2 = d;
            }
        }
        selected.push(best);
        let chosen = pts[best];
        for (d, p) in min_d2.iter_mut().zip(pts) {
            let nd = dist2(p, &chosen);
            if nd < *d {
                *d = nd;
            }
        }
        min_d2[best] = f64::NEG_INFINITY;
    }
    Ok(SampleResult::new(selected, cloud.len()))
}

/// Seeded starting point that does not depend on point order: the point
/// furthest along a seeded random direction (lowest index on ties).
pub fn seeded_start(cloud: &PointCloud, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir: Point3 = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
    let mut best = 0;
    let mut best_dot = f64::NEG_INFINITY;
    for (i, p) in cloud.coords().iter().enumerate() {
        let dot = p[0] * dir[0] + p[1] * dir[1] + p[2] * dir[2];
        if dot > best_dot {
            best = i;
            best_dot = dot;
        }
    }
    best
}

fn bounds_min(cloud: &PointCloud) -> Point3 {
    let mut lo = [f64::INFINITY; 3];
    for p in cloud.coords() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
        }
    }
    lo
}

/// One point per occupied voxel: the member nearest the cell centre.
///
/// The grid is anchored at the minimum corner of the bounding box. Output
/// is sorted ascending.
pub fn voxel_sample(cloud: &PointCloud, voxel_size: f64) -> Result<SampleResult> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return invalid_arg(format!("voxel size must be positive, got {voxel_size}"));
    }
    if cloud.is_empty() {
        return invalid_arg("voxel sampling of an empty cloud");
    }
    let lo = bounds_min(cloud);
    let mut best: HashMap<[i64; 3], (f64, usize)> = HashMap::new();
    for (i, p) in cloud.coords().iter().enumerate() {
        let key: [i64; 3] = std::array::from_fn(|a| ((p[a] - lo[a]) / voxel_size).floor() as i64);
        let center: Point3 =
            std::array::from_fn(|a| lo[a] + (key[a] as f64 + 0.5) * voxel_size);
        let d = dist2(p, &center);
        best.entry(key)
            .and_modify(|e| {
                if d < e.0 {
                    *e = (d, i);
                }
            })
            .or_insert((d, i));
    }
    let mut indices: Vec<usize> = best.into_values().map(|(_, i)| i).collect();
    indices.sort_unstable();
    Ok(SampleResult::new(indices, cloud.len()))
}

/// Voxel sampling with the cell size bisected so the output holds as many
/// points as possible without exceeding `m`.
pub fn voxel_sample_to_count(cloud: &PointCloud, m: usize) -> Result<SampleResult> {
    check_count(cloud, m)?;
    let lo = bounds_min(cloud);
    let diag = cloud
        .coords()
        .iter()
        .map(|p| dist2(p, &lo).sqrt())
        .fold(0.0, f64::max);
    // Large enough to hold everything in one cell.
    let mut hi = diag.max(1e-12) * 2.0;
    let mut best = voxel_sample(cloud, hi)?;
    let mut small = hi / 1e6;
    for _ in 0..60 {
        let mid = 0.5 * (small + hi);
        let res = voxel_sample(cloud, mid)?;
        if res.m() <= m {
            hi = mid;
            if res.m() >= best.m() {
                best = res;
            }
            if best.m() == m {
                break;
            }
        } else {
            small = mid;
        }
    }
    Ok(best)
}

pub(crate) fn shuffle_split(members: &[usize], rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = members.to_vec();
    rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), rng);
    let retained = shuffled.split_off(shuffled.len() / 2);
    (shuffled, retained)
}
