use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::samplers::shuffle_split;
use super::{farthest_point_sample, knn_indices, seeded_start, PointCloud, SelfMatch};
use crate::error::{invalid_arg, Result};

/// A local group of `k` points split into equal removed and retained halves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub center: usize,
    /// kNN order around `center`.
    pub members: Vec<usize>,
    pub removed: Vec<usize>,
    pub retained: Vec<usize>,
}

impl Patch {
    pub fn k(&self) -> usize {
        self.members.len()
    }
}

/// Splits the cloud into `num_patches` possibly overlapping patches.
///
/// Centres come from farthest point sampling (seeded, order-independent
/// start), members are each centre's `k` nearest neighbours including the
/// centre, and each patch's members are shuffled and cut in half.
pub fn partition_patches(
    cloud: &PointCloud,
    num_patches: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Patch>> {
    if k == 0 || k % 2 != 0 {
        return invalid_arg(format!("patch size must be even and positive, got {k}"));
    }
    if k > cloud.len() {
        return invalid_arg(format!("patch size {k} exceeds cloud size {}", cloud.len()));
    }
    if num_patches == 0 || num_patches > cloud.len() {
        return invalid_arg(format!("patch count {num_patches} outside [1, {}]", cloud.len()));
    }
    let start = seeded_start(cloud, seed);
    let centers = farthest_point_sample(cloud, num_patches, start)?.indices;
    let neighborhoods = knn_indices(cloud, &centers, k, SelfMatch::Include)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    Ok(centers
        .into_iter()
        .zip(neighborhoods)
        .map(|(center, found)| {
            let members: Vec<usize> = found.into_iter().map(|(_, i)| i).collect();
            let (removed, retained) = shuffle_split(&members, &mut rng);
            Patch { center, members, removed, retained }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::collections::HashSet;

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect())
            .unwrap()
    }

    #[test]
    fn single_patch_covers_everything() {
        let cloud = random_cloud(1, 10);
        let patches = partition_patches(&cloud, 1, 10, 4).unwrap();
        assert_eq!(patches.len(), 1);
        let mut m = patches[0].members.clone();
        m.sort_unstable();
        assert_eq!(m, (0..10).collect::<Vec<_>>());
        assert_eq!(patches[0].removed.len(), 5);
        assert_eq!(patches[0].retained.len(), 5);
    }

    #[test]
    fn invariants_hold_on_random_clouds() {
        for seed in 0..10 {
            let cloud = random_cloud(seed, 128);
            let patches = partition_patches(&cloud, 8, 16, seed).unwrap();
            assert_eq!(patches.len(), 8);
            for p in &patches {
                assert_eq!(p.members.len(), 16);
                assert_eq!(p.members[0], p.center);
                let removed: HashSet<_> = p.removed.iter().collect();
                let retained: HashSet<_> = p.retained.iter().collect();
                let members: HashSet<_> = p.members.iter().collect();
                assert_eq!(removed.len(), 8);
                assert_eq!(retained.len(), 8);
                assert!(removed.is_disjoint(&retained));
                assert_eq!(&removed | &retained, members);
                assert!(p.members.iter().all(|&i| i < 128));
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cloud = random_cloud(7, 64);
        let a = partition_patches(&cloud, 4, 8, 42).unwrap();
        assert_eq!(a, partition_patches(&cloud, 4, 8, 42).unwrap());
    }

    #[test]
    fn rejects_bad_arguments() {
        let cloud = random_cloud(2, 16);
        assert!(partition_patches(&cloud, 2, 3, 0).is_err());
        assert!(partition_patches(&cloud, 2, 18, 0).is_err());
        assert!(partition_patches(&cloud, 0, 4, 0).is_err());
    }
}
