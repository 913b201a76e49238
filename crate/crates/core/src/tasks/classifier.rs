//! Hierarchical classifier whose stages downsample by reconstruction scores,
//! and the standalone sampler cut out of its first stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Mlp, ParamStore, Tape, Var};
use crate::error::{invalid_arg, Result};
use crate::geometry::{partition_patches, PointCloud, SampleResult};
use crate::glfa::Glfa;
use crate::scoring::{
    point_reconstruction, prefilter_indices, reconstruction_neighbors, sample_top_m, score,
    shape_reconstruction, ReconNets, ReconShape, RepsConfig, ScoreDetails,
};
use crate::tensor::Tensor;
use crate::training::{mix_seed, sample_loss_var, LossParts, Model};

use super::synthetic::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub num_classes: usize,
    /// Width of the per-point coordinate embedding.
    pub embed: usize,
    /// Hidden width of the reconstruction networks.
    pub recon_hidden: usize,
    /// Output width of each stage's attention block.
    pub stage_width: usize,
    pub head_hidden: usize,
    pub stages: usize,
    pub k: usize,
    pub alpha: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            num_classes: NUM_CLASSES,
            embed: 64,
            recon_hidden: 64,
            stage_width: 64,
            head_hidden: 64,
            stages: 2,
            k: crate::scoring::DEFAULT_K,
            alpha: crate::scoring::DEFAULT_ALPHA_CLASSIFICATION,
        }
    }
}

impl ClassifierConfig {
    /// Reduced widths for quick runs on a laptop.
    pub fn desk() -> Self {
        Self { embed: 16, recon_hidden: 32, stage_width: 32, head_hidden: 32, ..Self::default() }
    }

    pub fn min_points(&self) -> usize {
        // The last stage's input still needs k + 1 points.
        (self.k + 1) << (self.stages - 1)
    }

    fn validate(&self) -> Result<()> {
        if self.stages == 0 || self.num_classes < 2 {
            return invalid_arg("classifier needs >= 1 stage and >= 2 classes");
        }
        if self.k < 2 || self.k % 2 != 0 {
            return invalid_arg(format!("k must be even and >= 2, got {}", self.k));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return invalid_arg(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub recon: ReconNets,
    pub glfa: Glfa,
}

#[derive(Debug, Clone)]
pub struct RepsClassifier {
    pub config: ClassifierConfig,
    pub store: ParamStore,
    pub embed: Mlp,
    pub stages: Vec<Stage>,
    pub head: Mlp,
}

/// Tape outputs of one classifier pass.
#[derive(Debug, Clone)]
pub struct ClassifierOutput {
    /// `1 × num_classes`.
    pub logits: Var,
    /// Summed reconstruction losses of all stages.
    pub sample_loss: Var,
    /// Points kept by each stage, as indices into that stage's input.
    pub selected: Vec<Vec<usize>>,
}

impl RepsClassifier {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let e = config.embed;
        let embed = Mlp::new(&mut store, "embed", &[3, e, e], false, &mut rng)?;
        let mut stages = Vec::with_capacity(config.stages);
        let mut width = e;
        for s in 0..config.stages {
            let shape = ReconShape { feat_dim: width, hidden: config.recon_hidden, k: config.k };
            let recon = ReconNets::new(&mut store, &format!("stage{s}.recon"), shape, &mut rng)?;
            let glfa = Glfa::new(&mut store, &format!("stage{s}.glfa"), width, config.stage_width, &mut rng)?;
            width = config.stage_width;
            stages.push(Stage { recon, glfa });
        }
        let head = Mlp::new(
            &mut store,
            "head",
            &[width, config.head_hidden, config.num_classes],
            false,
            &mut rng,
        )?;
        Ok(Self { config, store, embed, stages, head })
    }

    fn reps_config(&self, seed: u64) -> RepsConfig {
        RepsConfig { k: self.config.k, alpha: self.config.alpha, num_patches: None, seed, prefilter: false }
    }

    /// Records a full pass; `seed` fixes the patch splits of every stage.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, cloud: &PointCloud, seed: u64) -> Result<ClassifierOutput> {
        if cloud.len() < self.config.min_points() {
            return invalid_arg(format!(
                "classifier needs at least {} points, got {}",
                self.config.min_points(),
                cloud.len()
            ));
        }
        let k = self.config.k;
        let x = tape.constant(cloud.coords_tensor())?;
        let mut feats = self.embed.forward(tape, bound, x)?;
        let mut current = cloud.clone();
        let mut losses = Vec::with_capacity(self.stages.len());
        let mut selected = Vec::with_capacity(self.stages.len());
        for (s, stage) in self.stages.iter().enumerate() {
            let n = current.len();
            let cfg = self.reps_config(mix_seed(seed, s as u64));
            let neighbors = reconstruction_neighbors(&current, k)?;
            let patches = partition_patches(&current, cfg.patches_for(n), k, cfg.seed)?;
            let centers: Vec<usize> = (0..n).collect();
            let point =
                point_reconstruction(tape, bound, &stage.recon, current.coords(), feats, &centers, &neighbors)?;
            let shape = shape_reconstruction(tape, bound, &stage.recon, current.coords(), feats, &patches)?;
            losses.push(sample_loss_var(tape, point.losses, shape.losses)?);
            let table = score(
                tape.value(point.losses).data(),
                &patches,
                tape.value(shape.losses).data(),
                cfg.alpha,
            )?;
            let keep = sample_top_m(&table, n / 2)?.indices;
            feats = stage.glfa.forward(tape, bound, &current, feats, &keep, k)?;
            current = current.subset(&keep);
            selected.push(keep);
        }
        let pooled = tape.max_pool_rows(feats)?;
        let logits = self.head.forward(tape, bound, pooled)?;
        let mut sample_loss = losses[0];
        for &l in &losses[1..] {
            sample_loss = tape.add(sample_loss, l)?;
        }
        Ok(ClassifierOutput { logits, sample_loss, selected })
    }

    pub fn sampler(&self) -> RepsSampler<'_> {
        RepsSampler { embed: &self.embed, recon: &self.stages[0].recon, store: &self.store, k: self.config.k }
    }
}

impl Model for RepsClassifier {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn loss(&self, tape: &mut Tape, bound: &Bound, cloud: &PointCloud, label: usize, seed: u64) -> Result<LossParts> {
        let out = self.forward(tape, bound, cloud, seed)?;
        let task = tape.cross_entropy(out.logits, &[label])?;
        Ok(LossParts { sample: Some(out.sample_loss), task })
    }

    fn logits(&self, cloud: &PointCloud, seed: u64) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = tape.bind_frozen(&self.store)?;
        let out = self.forward(&mut tape, &bound, cloud, seed)?;
        Ok(tape.value(out.logits).data().to_vec())
    }
}

/// Coordinates-only sampler: the classifier's embedding followed by its
/// first-stage reconstruction networks.
#[derive(Debug, Clone, Copy)]
pub struct RepsSampler<'a> {
    pub embed: &'a Mlp,
    pub recon: &'a ReconNets,
    pub store: &'a ParamStore,
    pub k: usize,
}

impl RepsSampler<'_> {
    pub fn features(&self, cloud: &PointCloud) -> Tensor {
        self.embed.forward_plain(self.store, &cloud.coords_tensor())
    }

    pub fn scores(&self, cloud: &PointCloud, alpha: f64, seed: u64) -> Result<ScoreDetails> {
        let cfg = RepsConfig { k: self.k, alpha, num_patches: None, seed, prefilter: false };
        crate::scoring::reps_scores(cloud, &self.features(cloud), &cfg, self.recon, self.store)
    }

    /// Scores and keeps the best `m`; the prefilter runs only when it fits,
    /// i.e. when `2m` does not exceed the cloud size.
    pub fn sample(&self, cloud: &PointCloud, m: usize, alpha: f64, seed: u64, prefilter: bool) -> Result<SampleResult> {
        let cfg = RepsConfig { k: self.k, alpha, num_patches: None, seed, prefilter };
        let idx = match prefilter_indices(cloud, m, &cfg) {
            Ok(idx) => idx,
            Err(_) if 2 * m > cloud.len() => None,
            Err(e) => return Err(e),
        };
        let cfg = RepsConfig { prefilter: false, ..cfg };
        match idx {
            Some(idx) => {
                let sub = cloud.subset(&idx);
                let d = crate::scoring::reps_scores(&sub, &self.features(&sub), &cfg, self.recon, self.store)?;
                Ok(sample_top_m(&d.table, m)?.lift(&idx, cloud.len()))
            }
            None => {
                let d = crate::scoring::reps_scores(cloud, &self.features(cloud), &cfg, self.recon, self.store)?;
                sample_top_m(&d.table, m)
            }
        }
    }
}

/// Shared per-point MLP, max-pool and classification head.
#[derive(Debug, Clone)]
pub struct PointNetClassifier {
    pub store: ParamStore,
    pub point_mlp: Mlp,
    pub head: Mlp,
}

impl PointNetClassifier {
    pub fn new(num_classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let point_mlp = Mlp::new(&mut store, "pointnet.point", &[3, 16, 32, 64], true, &mut rng)?;
        let head = Mlp::new(&mut store, "pointnet.head", &[64, 32, num_classes], false, &mut rng)?;
        Ok(Self { store, point_mlp, head })
    }

    pub fn num_classes(&self) -> usize {
        self.head.out_dim()
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, cloud: &PointCloud) -> Result<Var> {
        if cloud.is_empty() {
            return invalid_arg("cannot classify an empty cloud");
        }
        let x = tape.constant(cloud.coords_tensor())?;
        let h = self.point_mlp.forward(tape, bound, x)?;
        let pooled = tape.max_pool_rows(h)?;
        self.head.forward(tape, bound, pooled)
    }
}

impl Model for PointNetClassifier {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn loss(&self, tape: &mut Tape, bound: &Bound, cloud: &PointCloud, label: usize, _: u64) -> Result<LossParts> {
        let logits = self.forward(tape, bound, cloud)?;
        Ok(LossParts { sample: None, task: tape.cross_entropy(logits, &[label])? })
    }

    fn logits(&self, cloud: &PointCloud, _: u64) -> Result<Vec<f64>> {
        if cloud.is_empty() {
            return invalid_arg("cannot classify an empty cloud");
        }
        let h = self.point_mlp.forward_plain(&self.store, &cloud.coords_tensor());
        let mut pooled = Tensor::filled(1, h.cols(), f64::NEG_INFINITY);
        for r in 0..h.rows() {
            for (p, v) in pooled.data_mut().iter_mut().zip(h.row(r)) {
                *p = p.max(*v);
            }
        }
        Ok(self.head.forward_plain(&self.store, &pooled).into_data())
    }
}
