//! Global-local fusion attention.
//!
//! For each sampled point the features of its `k` nearest neighbours are
//! projected, mixed by self-attention inside the neighbourhood and max-pooled
//! to one row. The pooled rows then attend to each other globally before a
//! final projection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Mlp, ParamStore, Tape, Var};
use crate::error::{invalid_arg, Result};
use crate::geometry::{knn_indices, PointCloud, SampleResult, SelfMatch};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Glfa {
    pub d_in: usize,
    pub d_out: usize,
    /// `d_in → d_out → d_out`, applied per gathered row.
    pub pre: Mlp,
    /// `d_out → d_out → d_out`, applied per sampled point.
    pub post: Mlp,
}

impl Glfa {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            d_in,
            d_out,
            pre: Mlp::new(store, &format!("{name}.pre"), &[d_in, d_out, d_out], false, rng)?,
            post: Mlp::new(store, &format!("{name}.post"), &[d_out, d_out, d_out], false, rng)?,
        })
    }

    /// Runs the block on precomputed neighbourhoods, each of length `k`.
    pub fn forward_neighborhoods(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        feats: Var,
        neighborhoods: &[Vec<usize>],
    ) -> Result<Var> {
        let width = tape.value(feats).cols();
        if width != self.d_in {
            return invalid_arg(format!("GLFA expects width {}, got {width}", self.d_in));
        }
        let Some(k) = neighborhoods.first().map(Vec::len) else {
            return invalid_arg("GLFA needs at least one sampled point");
        };
        if k == 0 || neighborhoods.iter().any(|nb| nb.len() != k) {
            return invalid_arg("GLFA neighbourhoods must share one positive size");
        }
        let flat: Vec<usize> = neighborhoods.iter().flatten().copied().collect();
        let rows = tape.gather_rows(feats, &flat)?;
        let local = self.pre.forward(tape, bound, rows)?;
        let local = tape.grouped_self_attention(local, k)?;
        let pooled = tape.segment_max(local, k)?;
        let global = tape.self_attention(pooled)?;
        self.post.forward(tape, bound, global)
    }

    /// Neighbourhoods are the `k` nearest cloud points of each sampled point,
    /// itself included.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        cloud: &PointCloud,
        feats: Var,
        sampled: &[usize],
        k: usize,
    ) -> Result<Var> {
        if tape.value(feats).rows() != cloud.len() {
            return invalid_arg("GLFA needs one feature row per cloud point");
        }
        let neighborhoods = glfa_neighborhoods(cloud, sampled, k)?;
        self.forward_neighborhoods(tape, bound, feats, &neighborhoods)
    }
}

pub fn glfa_neighborhoods(cloud: &PointCloud, sampled: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    if sampled.is_empty() {
        return invalid_arg("GLFA needs at least one sampled point");
    }
    Ok(knn_indices(cloud, sampled, k, SelfMatch::Include)?
        .into_iter()
        .map(|found| found.into_iter().map(|(_, i)| i).collect())
        .collect())
}

/// Convenience wrapper over [`Glfa::forward`] taking a sampler result.
pub fn glfa_forward(
    tape: &mut Tape,
    bound: &Bound,
    cloud: &PointCloud,
    feats: Var,
    sampled: &SampleResult,
    k: usize,
    params: &Glfa,
) -> Result<Var> {
    params.forward(tape, bound, cloud, feats, &sampled.indices, k)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{gradient_check_params, softmax_rows};
    use crate::tensor::Tensor;

    fn setup(n: usize, d_in: usize, d_out: usize, seed: u64) -> (PointCloud, Tensor, ParamStore, Glfa) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = PointCloud::new(
            (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(),
        )
        .unwrap();
        let feats = Tensor::from_vec(
            n,
            d_in,
            (0..n * d_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let mut store = ParamStore::new();
        let glfa = Glfa::new(&mut store, "g", d_in, d_out, &mut rng).unwrap();
        (cloud, feats, store, glfa)
    }

    fn run(store: &ParamStore, glfa: &Glfa, feats: &Tensor, nbs: &[Vec<usize>]) -> Tensor {
        let mut tape = Tape::new();
        let b = tape.bind_frozen(store).unwrap();
        let f = tape.constant(feats.clone()).unwrap();
        let out = glfa.forward_neighborhoods(&mut tape, &b, f, nbs).unwrap();
        tape.value(out).clone()
    }

    fn plain_attention(x: &Tensor) -> Tensor {
        let d = x.cols();
        let mut s = Tensor::zeros(x.rows(), x.rows());
        for i in 0..x.rows() {
            for j in 0..x.rows() {
                let dot: f64 = (0..d).map(|c| x.get(i, c) * x.get(j, c)).sum();
                s.set(i, j, dot / (d as f64).sqrt());
            }
        }
        let a = softmax_rows(&s);
        let mut out = Tensor::zeros(x.rows(), d);
        for i in 0..x.rows() {
            for c in 0..d {
                out.set(i, c, (0..x.rows()).map(|j| a.get(i, j) * x.get(j, c)).sum());
            }
        }
        out
    }

    fn plain_glfa(store: &ParamStore, glfa: &Glfa, feats: &Tensor, nbs: &[Vec<usize>]) -> Tensor {
        let mut pooled = Tensor::zeros(nbs.len(), glfa.d_out);
        for (r, nb) in nbs.iter().enumerate() {
            let local = plain_attention(&glfa.pre.forward_plain(store, &feats.select_rows(nb)));
            for c in 0..glfa.d_out {
                let m = (0..local.rows()).map(|i| local.get(i, c)).fold(f64::NEG_INFINITY, f64::max);
                pooled.set(r, c, m);
            }
        }
        glfa.post.forward_plain(store, &plain_attention(&pooled))
    }

    #[test]
    fn single_row_reduces_to_projections() {
        let (_, feats, store, glfa) = setup(5, 3, 4, 0);
        let out = run(&store, &glfa, &feats, &[vec![2]]);
        let want = glfa.post.forward_plain(&store, &glfa.pre.forward_plain(&store, &feats.select_rows(&[2])));
        assert!(out.max_abs_diff(&want) < 1e-12);
        assert_eq!(out.shape(), [1, 4]);
    }

    #[test]
    fn duplicated_features_stay_the_common_row() {
        let (_, _, store, glfa) = setup(6, 3, 4, 1);
        let feats = Tensor::from_rows(&vec![[0.3, -0.2, 0.9]; 6]).unwrap();
        let nbs = vec![vec![0, 1, 2], vec![3, 4, 5]];
        let mut tape = Tape::new();
        let b = tape.bind_frozen(&store).unwrap();
        let f = tape.constant(feats.clone()).unwrap();
        let rows = tape.gather_rows(f, &[0, 1, 2]).unwrap();
        let pre = glfa.pre.forward(&mut tape, &b, rows).unwrap();
        let att = tape.grouped_self_attention(pre, 3).unwrap();
        assert!(tape.value(att).max_abs_diff(tape.value(pre)) < 1e-12);
        let out = run(&store, &glfa, &feats, &nbs);
        let row = glfa.pre.forward_plain(&store, &feats.select_rows(&[0]));
        let want = glfa.post.forward_plain(&store, &row);
        for r in 0..2 {
            for c in 0..4 {
                assert!((out.get(r, c) - want.get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_plain_oracle() {
        let (cloud, feats, store, glfa) = setup(32, 5, 6, 2);
        let sampled = [0, 5, 9, 17, 31];
        let nbs = glfa_neighborhoods(&cloud, &sampled, 6).unwrap();
        let got = run(&store, &glfa, &feats, &nbs);
        let want = plain_glfa(&store, &glfa, &feats, &nbs);
        assert_eq!(got.shape(), [5, 6]);
        assert!(got.max_abs_diff(&want) < 1e-9);
    }

    #[test]
    fn rejects_bad_input() {
        let (cloud, feats, store, glfa) = setup(8, 3, 4, 3);
        let mut tape = Tape::new();
        let b = tape.bind_frozen(&store).unwrap();
        let wrong = tape.constant(Tensor::zeros(8, 2)).unwrap();
        assert!(glfa.forward(&mut tape, &b, &cloud, wrong, &[0], 2).is_err());
        let f = tape.constant(feats).unwrap();
        assert!(glfa.forward(&mut tape, &b, &cloud, f, &[0], 9).is_err());
        assert!(glfa.forward(&mut tape, &b, &cloud, f, &[8], 2).is_err());
        assert!(glfa.forward(&mut tape, &b, &cloud, f, &[], 2).is_err());
    }

    #[test]
    fn gradients_on_sixteen_points() {
        let (cloud, feats, store, glfa) = setup(16, 3, 4, 4);
        let nbs = glfa_neighborhoods(&cloud, &[0, 3, 7, 12], 4).unwrap();
        let rep = gradient_check_params(
            |t, b| {
                let f = t.constant(feats.clone())?;
                let out = glfa.forward_neighborhoods(t, b, f, &nbs)?;
                t.sum(out)
            },
            &store,
            None,
            0,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(rep.passed, "max rel error {}", rep.max_rel_error);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn local_order_does_not_matter(seed in 0u64..500, perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle()) {
            let (cloud, feats, store, glfa) = setup(20, 3, 4, seed);
            let nbs = glfa_neighborhoods(&cloud, &[1, 8, 15], 5).unwrap();
            let shuffled: Vec<Vec<usize>> =
                nbs.iter().map(|nb| perm.iter().map(|&p| nb[p]).collect()).collect();
            let a = run(&store, &glfa, &feats, &nbs);
            let b = run(&store, &glfa, &feats, &shuffled);
            prop_assert!(a.max_abs_diff(&b) < 1e-12);
        }

        #[test]
        fn global_stage_is_equivariant(seed in 0u64..500, perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle()) {
            let (cloud, feats, store, glfa) = setup(20, 3, 4, seed);
            let nbs = glfa_neighborhoods(&cloud, &[2, 6, 11, 19], 4).unwrap();
            let moved: Vec<Vec<usize>> = perm.iter().map(|&p| nbs[p].clone()).collect();
            let a = run(&store, &glfa, &feats, &nbs);
            let b = run(&store, &glfa, &feats, &moved);
            for (j, &p) in perm.iter().enumerate() {
                for c in 0..4 {
                    prop_assert!((b.get(j, c) - a.get(p, c)).abs() < 1e-12);
                }
            }
        }
    }
}
