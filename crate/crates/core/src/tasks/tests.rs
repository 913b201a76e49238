use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{gradient_check_params, Tape};

fn tiny() -> ClassifierConfig {
    ClassifierConfig {
        num_classes: 3,
        embed: 6,
        recon_hidden: 8,
        stage_width: 8,
        head_hidden: 8,
        stages: 2,
        k: 4,
        alpha: 0.8,
    }
}

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new((0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect())
        .unwrap()
}

#[test]
fn classifier_shapes_and_selection() {
    let model = RepsClassifier::new(tiny(), 0).unwrap();
    let cloud = random_cloud(40, 1);
    let mut tape = Tape::new();
    let b = tape.bind_frozen(&model.store).unwrap();
    let out = model.forward(&mut tape, &b, &cloud, 3).unwrap();
    assert_eq!(tape.value(out.logits).shape(), [1, 3]);
    assert_eq!(out.selected.len(), 2);
    assert_eq!(out.selected[0].len(), 20);
    assert_eq!(out.selected[1].len(), 10);
    assert!(tape.value(out.sample_loss).item() >= 0.0);
    assert_eq!(model.logits(&cloud, 3).unwrap().len(), 3);
    assert!(model.logits(&random_cloud(9, 1), 0).is_err());
}

#[test]
fn classifier_ignores_point_order() {
    let model = RepsClassifier::new(tiny(), 2).unwrap();
    for seed in 0..5 {
        let cloud = random_cloud(48, 10 + seed);
        let mut perm: Vec<usize> = (0..48).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let a = model.logits(&cloud, seed).unwrap();
        let b = model.logits(&cloud.subset(&perm), seed).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn zero_head_gives_uniform_logits() {
    let mut model = RepsClassifier::new(tiny(), 4).unwrap();
    model.head.last_layer().zero(&mut model.store);
    let logits = model.logits(&random_cloud(32, 5), 0).unwrap();
    assert!(logits.iter().all(|&v| v == logits[0]));

    let mut pn = PointNetClassifier::new(4, 0).unwrap();
    pn.head.last_layer().zero(&mut pn.store);
    let logits = pn.logits(&random_cloud(32, 5), 0).unwrap();
    assert_eq!(logits, vec![0.0; 4]);
}

#[test]
fn classifier_gradients_match_differences() {
    let model = RepsClassifier::new(tiny(), 6).unwrap();
    let cloud = random_cloud(24, 7);
    let rep = gradient_check_params(
        |t, b| model.loss(t, b, &cloud, 1, 9).and_then(|p| {
            crate::training::total_loss_var(t, p.sample.unwrap(), p.task, 1.0)
        }),
        &model.store,
        Some(3),
        0,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(rep.passed, "max rel error {}", rep.max_rel_error);
}

#[test]
fn pointnet_plain_and_tape_logits_agree() {
    let pn = PointNetClassifier::new(4, 8).unwrap();
    let cloud = random_cloud(20, 9);
    let mut tape = Tape::new();
    let b = tape.bind_frozen(&pn.store).unwrap();
    let l = pn.forward(&mut tape, &b, &cloud).unwrap();
    let plain = pn.logits(&cloud, 0).unwrap();
    for (x, y) in tape.value(l).data().iter().zip(&plain) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn labelled(n: usize, seed: u64) -> Vec<LabeledCloud> {
    (0..n)
        .map(|i| LabeledCloud { cloud: random_cloud(32, seed + i as u64), label: i % 4 })
        .collect()
}

#[test]
fn identity_at_full_size_reproduces_full_accuracy() {
    let pn = PointNetClassifier::new(4, 1).unwrap();
    let data = labelled(12, 3);
    let before = pn.store.checksum();
    let rows = eval_samplers(&data, &pn, &[Sampler::Identity, Sampler::Random], &[32, 8], 0).unwrap();
    assert_eq!(pn.store.checksum(), before);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].sampler, "identity");
    assert_eq!(rows[0].m, 32);
    assert_eq!(rows[0].accuracy, accuracy(&pn, &data, 0).unwrap());
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
    assert!(eval_samplers(&data, &pn, &[Sampler::Fps], &[33], 0).is_err());
}

#[test]
fn samplers_produce_valid_subsets() {
    let model = RepsClassifier::new(tiny(), 3).unwrap();
    let cloud = random_cloud(64, 4);
    let reps = Sampler::Reps { sampler: model.sampler(), alpha: 0.8 };
    for s in [Sampler::Identity, Sampler::Random, Sampler::Fps, Sampler::Voxel, reps] {
        for m in [8, 32, 64] {
            let r = s.sample(&cloud, m, 5).unwrap();
            let mut idx = r.indices.clone();
            idx.sort_unstable();
            idx.dedup();
            assert_eq!(idx.len(), r.m());
            assert!(r.m() <= m && idx.iter().all(|&i| i < 64));
            if !matches!(s, Sampler::Voxel) {
                assert_eq!(r.m(), m);
            }
        }
    }
}

#[test]
fn ablation_runs_both_sweeps() {
    let data: Vec<LabeledCloud> =
        labelled(4, 20).into_iter().map(|c| LabeledCloud { label: c.label % 3, ..c }).collect();
    let cfg = AblationConfig {
        ks: vec![2, 4],
        alphas: vec![0.0, 1.0],
        base: tiny(),
        train: TrainConfig { epochs: 1, batch_size: 2, ..TrainConfig::default() },
        model_seed: 0,
    };
    let rows = run_ablation(&data, &data, &cfg).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().filter(|r| r.sweep == "k").count(), 2);
    assert_eq!(rows[2].alpha, 0.0);
    assert_eq!(rows[3].k, 4);
}

proptest! {
    #[test]
    fn confusion_accuracy_matches_direct_count(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..60),
    ) {
        let labels: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let predicted: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let m = confusion_matrix(&labels, &predicted, 5).unwrap();
        let direct = pairs.iter().filter(|p| p.0 == p.1).count() as f64 / pairs.len() as f64;
        prop_assert_eq!(confusion_accuracy(&m), direct);
        for l in 0..5 {
            for p in 0..5 {
                let n = pairs.iter().filter(|q| q.0 == l && q.1 == p).count();
                prop_assert_eq!(m[l][p], n);
            }
        }
    }
}
