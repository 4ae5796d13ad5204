//! Predictive clustering of encoded steps.
//!
//! An assigner `f` maps each latent step `z` to cluster probabilities, a
//! predictor `g` maps latents (and cluster centroids `e_k`) to label
//! distributions. Training minimizes
//!
//! ```text
//! L1 = mean_traj Σ_j CE(y_j, g(z_j))                 (Σ_k f_k = 1 folded in)
//! L2 = mean_traj Σ_j Σ_k f_k(z_j) · CE(y_j, g(e_k))
//! KL = mean_step KL(ŷ_j ‖ ȳ_j),  ŷ = g(z), ȳ = Σ_k f_k(z) g(e_k)
//! ```
//!
//! with total `L1 + L2 + α·KL`. Gradients are written out by hand.

use std::path::Path;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    featurize_label_seq, featurize_subtraj, Encoder, EncoderConfig, FeatureStep, Featurizer, Normalizer,
    DEFAULT_DROPOUT_KEEP, DEFAULT_HIDDEN_DIM,
};
use crate::error::{Error, Result};
use crate::kmeans::{count_distinct, kmeans_restarts};
use crate::model::{LabelSequence, PositionSequence, SubTrajectory, VesselType};
use crate::nn::{
    argmax, axpy, dot, dropout_mask, log_softmax, softmax, softmax_backward, Adam, AdamConfig, Lstm, Matrix, Mlp,
    MlpCache,
};

pub const DEFAULT_MLP_HIDDEN: usize = 50;
/// Floor applied to probabilities inside the KL logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_clusters: usize,
    pub hidden_dim: usize,
    pub mlp_hidden: usize,
    pub dropout_keep: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_clusters: 2,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            mlp_hidden: DEFAULT_MLP_HIDDEN,
            dropout_keep: DEFAULT_DROPOUT_KEEP,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 {
            return Err(Error::Parameter("K must be at least 1".into()));
        }
        if self.hidden_dim == 0 || self.mlp_hidden == 0 {
            return Err(Error::Parameter("layer sizes must be at least 1".into()));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::Parameter(format!("dropout keep probability must be in (0, 1], got {}", self.dropout_keep)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Joint epochs after initialization.
    pub epochs: usize,
    /// Encoder + predictor warm-up epochs on L1 alone.
    pub pretrain_epochs: usize,
    /// Supervised epochs fitting the assigner to the k-means partition.
    pub assigner_epochs: usize,
    /// Trajectories per update.
    pub batch_size: usize,
    /// Weight α of the KL term.
    pub kl_weight: f64,
    pub kl_to_assigner: bool,
    pub kl_to_predictor: bool,
    pub kmeans_iters: usize,
    /// Seeded k-means runs; the lowest inertia wins.
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 30,
            pretrain_epochs: 10,
            assigner_epochs: 10,
            batch_size: 8,
            kl_weight: 1.0,
            kl_to_assigner: true,
            kl_to_predictor: true,
            kmeans_iters: 100,
            kmeans_restarts: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Parameter(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::Parameter("at least one k-means run is needed".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Parameter(format!("KL weight must be finite and >= 0, got {}", self.kl_weight)));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, ..AdamConfig::default() }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            l1: 1.0,
            l2: 1.0,
            kl: self.kl_weight,
            kl_to_assigner: self.kl_to_assigner,
            kl_to_predictor: self.kl_to_predictor,
        }
    }
}

/// Term weights of the training objective. The KL flags decide whether the
/// KL gradient reaches the assigner output and the predictor outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub l1: f64,
    pub l2: f64,
    pub kl: f64,
    pub kl_to_assigner: bool,
    pub kl_to_predictor: bool,
}

impl Objective {
    pub fn joint(alpha: f64) -> Self {
        Objective { l1: 1.0, l2: 1.0, kl: alpha, kl_to_assigner: true, kl_to_predictor: true }
    }

    pub fn pretrain() -> Self {
        Objective { l1: 1.0, l2: 0.0, kl: 0.0, kl_to_assigner: false, kl_to_predictor: false }
    }
}

/// Unweighted term values plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub l1: f64,
    pub l2: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossParts {
    fn is_finite(&self) -> bool {
        self.l1.is_finite() && self.l2.is_finite() && self.kl.is_finite() && self.total.is_finite()
    }
}

/// One featurized sequence with its per-step targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub mmsi: String,
    pub vessel_type: VesselType,
    pub steps: Vec<FeatureStep>,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub featurizer: Featurizer,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn from_subtraj(items: &[(PositionSequence, Vec<SubTrajectory>)]) -> Result<Self> {
        let samples = items
            .iter()
            .map(|(seq, segs)| {
                let (steps, targets) = featurize_subtraj(seq, segs)?;
                Ok(Sample { mmsi: seq.mmsi.clone(), vessel_type: seq.vessel_type, steps, targets })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { featurizer: Featurizer::SubTrajectory, samples })
    }

    /// `categories` fixes the one-hot order; `None` takes the sorted set seen in `sequences`.
    pub fn from_labels(sequences: &[LabelSequence], categories: Option<Vec<String>>, grid_step: Option<i64>) -> Result<Self> {
        let categories = categories.unwrap_or_else(|| {
            let mut names: Vec<String> =
                sequences.iter().flat_map(|s| s.label_points.iter().map(|lp| lp.port_label.name().to_string())).collect();
            names.sort();
            names.dedup();
            names
        });
        let samples = sequences
            .iter()
            .map(|seq| {
                let (steps, targets) = featurize_label_seq(seq, &categories, grid_step)?;
                Ok(Sample { mmsi: seq.mmsi.clone(), vessel_type: seq.vessel_type, steps, targets })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { featurizer: Featurizer::Label { categories, grid_step }, samples })
    }

    pub fn num_steps(&self) -> usize {
        self.samples.iter().map(|s| s.steps.len()).sum()
    }
}

/// A normalized input sequence ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<usize>,
}

/// Network outputs at one step, inference mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    /// `f(z)`
    pub assignment: Vec<f64>,
    /// `ŷ = g(z)`
    pub predicted: Vec<f64>,
    /// `ȳ = Σ_k f_k(z) g(e_k)`
    pub centroid_predicted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub featurizer: Featurizer,
    pub encoder: Encoder,
    pub assigner: Mlp,
    pub predictor: Mlp,
    /// One centroid per row, `K × hidden`.
    pub centroids: Matrix,
}

/// Gradient buffers shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub lstm: Lstm,
    pub assigner: Mlp,
    pub predictor: Mlp,
    pub centroids: Matrix,
}

impl Gradients {
    pub fn zeros_like(model: &ClusterModel) -> Self {
        let (d, h, m) = (model.encoder.lstm.input_dim(), model.hidden_dim(), model.assigner.hidden_dim());
        Gradients {
            lstm: Lstm::zeros(d, h),
            assigner: Mlp::zeros(h, m, model.num_clusters()),
            predictor: Mlp::zeros(h, model.predictor.hidden_dim(), model.num_labels()),
            centroids: Matrix::zeros(model.num_clusters(), h),
        }
    }

    /// Same order and names as [`ClusterModel::tensors`].
    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        vec![
            ("encoder.w_x", &self.lstm.w_x),
            ("encoder.w_h", &self.lstm.w_h),
            ("encoder.bias", &self.lstm.bias),
            ("assigner.w1", &self.assigner.w1),
            ("assigner.b1", &self.assigner.b1),
            ("assigner.w2", &self.assigner.w2),
            ("assigner.b2", &self.assigner.b2),
            ("predictor.w1", &self.predictor.w1),
            ("predictor.b1", &self.predictor.b1),
            ("predictor.w2", &self.predictor.w2),
            ("predictor.b2", &self.predictor.b2),
            ("centroids", &self.centroids),
        ]
    }
}

fn draw(rng: &mut Option<&mut ChaCha8Rng>, len: usize, keep: f64) -> Option<Vec<f64>> {
    rng.as_deref_mut().map(|r| dropout_mask(len, keep, r))
}

fn mix(f: &[f64], gbar: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; gbar[0].len()];
    for (fk, g) in f.iter().zip(gbar) {
        axpy(*fk, g, &mut out);
    }
    out
}

/// `KL(p ‖ q)` with both arguments floored inside the logarithm.
pub fn kl_floor(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&pc, &qc)| pc * (pc.max(LOG_FLOOR).ln() - qc.max(LOG_FLOOR).ln())).sum()
}

impl ClusterModel {
    pub fn new(featurizer: Featurizer, normalizer: Normalizer, config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let labels = featurizer.num_labels();
        if labels == 0 {
            return Err(Error::Data("no target labels to predict".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc_cfg = EncoderConfig {
            input_dim: featurizer.input_dim(),
            hidden_dim: config.hidden_dim,
            dropout_keep: config.dropout_keep,
            seed,
        };
        let encoder = Encoder::new(enc_cfg, normalizer, &mut rng)?;
        let assigner = Mlp::new(config.hidden_dim, config.mlp_hidden, config.num_clusters, &mut rng);
        let predictor = Mlp::new(config.hidden_dim, config.mlp_hidden, labels, &mut rng);
        let centroids = Matrix::uniform(config.num_clusters, config.hidden_dim, 0.1, &mut rng);
        Ok(ClusterModel { featurizer, encoder, assigner, predictor, centroids })
    }

    /// Fits the normalizer on `data` and builds a fresh model.
    pub fn for_dataset(data: &Dataset, config: &ModelConfig, seed: u64) -> Result<Self> {
        let normalizer = Normalizer::fit(data.samples.iter().flat_map(|s| &s.steps), data.featurizer.input_dim())?;
        Self::new(data.featurizer.clone(), normalizer, config, seed)
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.rows
    }

    pub fn num_labels(&self) -> usize {
        self.predictor.output_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.lstm.hidden_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.lstm.input_dim()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            num_clusters: self.num_clusters(),
            hidden_dim: self.hidden_dim(),
            mlp_hidden: self.assigner.hidden_dim(),
            dropout_keep: self.encoder.config.dropout_keep,
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        vec![
            ("encoder.w_x", &self.encoder.lstm.w_x),
            ("encoder.w_h", &self.encoder.lstm.w_h),
            ("encoder.bias", &self.encoder.lstm.bias),
            ("assigner.w1", &self.assigner.w1),
            ("assigner.b1", &self.assigner.b1),
            ("assigner.w2", &self.assigner.w2),
            ("assigner.b2", &self.assigner.b2),
            ("predictor.w1", &self.predictor.w1),
            ("predictor.b1", &self.predictor.b1),
            ("predictor.w2", &self.predictor.w2),
            ("predictor.b2", &self.predictor.b2),
            ("centroids", &self.centroids),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        vec![
            ("encoder.w_x", &mut self.encoder.lstm.w_x),
            ("encoder.w_h", &mut self.encoder.lstm.w_h),
            ("encoder.bias", &mut self.encoder.lstm.bias),
            ("assigner.w1", &mut self.assigner.w1),
            ("assigner.b1", &mut self.assigner.b1),
            ("assigner.w2", &mut self.assigner.w2),
            ("assigner.b2", &mut self.assigner.b2),
            ("predictor.w1", &mut self.predictor.w1),
            ("predictor.b1", &mut self.predictor.b1),
            ("predictor.w2", &mut self.predictor.w2),
            ("predictor.b2", &mut self.predictor.b2),
            ("centroids", &mut self.centroids),
        ]
    }

    /// Checks that every tensor agrees with the declared dimensions.
    pub fn check_shapes(&self) -> Result<()> {
        let (d, h, k, l) = (self.input_dim(), self.hidden_dim(), self.num_clusters(), self.num_labels());
        let (ma, mp) = (self.assigner.hidden_dim(), self.predictor.hidden_dim());
        let expected = [
            (4 * h, d),
            (4 * h, h),
            (4 * h, 1),
            (ma, h),
            (ma, 1),
            (k, ma),
            (k, 1),
            (mp, h),
            (mp, 1),
            (l, mp),
            (l, 1),
            (k, h),
        ];
        for ((name, t), (rows, cols)) in self.tensors().into_iter().zip(expected) {
            if t.rows != rows || t.cols != cols || t.data.len() != rows * cols {
                return Err(Error::Data(format!(
                    "tensor {name} is {}x{} with {} values, expected {rows}x{cols}",
                    t.rows,
                    t.cols,
                    t.data.len()
                )));
            }
        }
        if d != self.featurizer.input_dim() || l != self.featurizer.num_labels() {
            return Err(Error::Data("featurizer does not match the network dimensions".into()));
        }
        if self.encoder.normalizer.width() != d || self.encoder.normalizer.std.len() != d {
            return Err(Error::Width { expected: d, got: self.encoder.normalizer.width() });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Cluster probabilities `f(z)`.
    pub fn assign(&self, z: &[f64]) -> Vec<f64> {
        softmax(&self.assigner.logits(z))
    }

    /// Hard cluster; ties go to the smallest index.
    pub fn hard_assign(&self, z: &[f64]) -> usize {
        argmax(&self.assign(z))
    }

    /// Label distribution `g(x)` for a latent or a centroid.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.predictor.logits(x))
    }

    /// `g(e_k)` for every centroid.
    pub fn centroid_predictions(&self) -> Vec<Vec<f64>> {
        (0..self.num_clusters()).map(|k| self.predict(self.centroids.row(k))).collect()
    }

    /// Latents of already-normalized inputs, inference mode.
    pub fn latents(&self, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.encoder.lstm.forward(inputs).hidden
    }

    pub fn example(&self, sample: &Sample) -> Result<Example> {
        if sample.steps.len() != sample.targets.len() {
            return Err(Error::Data(format!("{}: {} steps but {} targets", sample.mmsi, sample.steps.len(), sample.targets.len())));
        }
        Ok(Example { inputs: self.encoder.normalizer.apply(&sample.steps)?, targets: sample.targets.clone() })
    }

    pub fn examples(&self, data: &Dataset) -> Result<Vec<Example>> {
        if data.featurizer != self.featurizer {
            return Err(Error::Data(format!(
                "dataset was featurized at the {} level with a different layout than the model",
                data.featurizer.level_name()
            )));
        }
        data.samples.iter().map(|s| self.example(s)).collect()
    }

    /// Inference-mode outputs for every step of normalized inputs.
    pub fn outputs(&self, inputs: &[Vec<f64>]) -> Result<Vec<StepOutput>> {
        self.check_inputs(inputs)?;
        let gbar = self.centroid_predictions();
        Ok(self
            .latents(inputs)
            .iter()
            .map(|z| {
                let assignment = self.assign(z);
                let centroid_predicted = mix(&assignment, &gbar);
                StepOutput { predicted: self.predict(z), assignment, centroid_predicted }
            })
            .collect())
    }

    fn check_inputs(&self, inputs: &[Vec<f64>]) -> Result<()> {
        let d = self.input_dim();
        match inputs.iter().find(|x| x.len() != d) {
            Some(x) => Err(Error::Width { expected: d, got: x.len() }),
            None => Ok(()),
        }
    }

    fn check_batch(&self, batch: &[Example]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let l = self.num_labels();
        for ex in batch {
            if ex.inputs.len() != ex.targets.len() {
                return Err(Error::Data(format!("{} inputs but {} targets", ex.inputs.len(), ex.targets.len())));
            }
            if ex.inputs.is_empty() {
                return Err(Error::Data("empty sequence in batch".into()));
            }
            self.check_inputs(&ex.inputs)?;
            if let Some(&y) = ex.targets.iter().find(|&&y| y >= l) {
                return Err(Error::Data(format!("label index {y} out of range for {l} labels")));
            }
        }
        Ok(())
    }

    pub fn loss_l1(&self, batch: &[Example]) -> Result<f64> {
        Ok(self.pass(batch, &Objective::joint(1.0), None, None)?.l1)
    }

    pub fn loss_l2(&self, batch: &[Example]) -> Result<f64> {
        Ok(self.pass(batch, &Objective::joint(1.0), None, None)?.l2)
    }

    pub fn loss_kl(&self, batch: &[Example]) -> Result<f64> {
        Ok(self.pass(batch, &Objective::joint(1.0), None, None)?.kl)
    }

    /// All loss terms in inference mode.
    pub fn losses(&self, batch: &[Example], objective: &Objective) -> Result<LossParts> {
        self.pass(batch, objective, None, None)
    }

    /// Losses and the exact gradient of `objective`'s total, inference mode.
    pub fn gradient(&self, batch: &[Example], objective: &Objective) -> Result<(LossParts, Gradients)> {
        let mut grad = Gradients::zeros_like(self);
        let parts = self.pass(batch, objective, None, Some(&mut grad))?;
        Ok((parts, grad))
    }

    /// Forward pass over a batch, optionally with dropout and gradient accumulation.
    fn pass(
        &self,
        batch: &[Example],
        obj: &Objective,
        mut rng: Option<&mut ChaCha8Rng>,
        mut grad: Option<&mut Gradients>,
    ) -> Result<LossParts> {
        self.check_batch(batch)?;
        let (k_n, l_n, h_n) = (self.num_clusters(), self.num_labels(), self.hidden_dim());
        let keep = self.encoder.config.dropout_keep;
        let centroid_caches: Vec<MlpCache> = (0..k_n)
            .map(|k| {
                let m = draw(&mut rng, self.predictor.hidden_dim(), keep);
                self.predictor.forward(self.centroids.row(k), m.as_deref())
            })
            .collect();
        let gbar: Vec<Vec<f64>> = centroid_caches.iter().map(|c| softmax(&c.logits)).collect();
        let ln_gbar: Vec<Vec<f64>> = centroid_caches.iter().map(|c| log_softmax(&c.logits)).collect();

        let b = batch.len() as f64;
        let n_steps = batch.iter().map(|e| e.targets.len()).sum::<usize>() as f64;
        let (w1, w2, wkl) = (obj.l1 / b, obj.l2 / b, obj.kl / n_steps);
        let mut parts = LossParts::default();
        let mut d_cl = vec![vec![0.0; l_n]; k_n];

        for ex in batch {
            let cache = self.encoder.lstm.forward(&ex.inputs);
            let mut d_hidden = Vec::with_capacity(ex.targets.len());
            for (h, &y) in cache.hidden.iter().zip(&ex.targets) {
                let z_mask = draw(&mut rng, h_n, keep);
                let z: Vec<f64> = match &z_mask {
                    Some(m) => h.iter().zip(m).map(|(a, b)| a * b).collect(),
                    None => h.clone(),
                };
                let a_mask = draw(&mut rng, self.assigner.hidden_dim(), keep);
                let p_mask = draw(&mut rng, self.predictor.hidden_dim(), keep);
                let a_cache = self.assigner.forward(&z, a_mask.as_deref());
                let p_cache = self.predictor.forward(&z, p_mask.as_deref());
                let f = softmax(&a_cache.logits);
                let yhat = softmax(&p_cache.logits);
                let ln_yhat = log_softmax(&p_cache.logits);
                let ce_centroid: Vec<f64> = ln_gbar.iter().map(|lg| -lg[y]).collect();
                let ybar = mix(&f, &gbar);

                parts.l1 += -ln_yhat[y] / b;
                parts.l2 += dot(&f, &ce_centroid) / b;
                parts.kl += kl_floor(&yhat, &ybar) / n_steps;

                let Some(g) = grad.as_deref_mut() else { continue };
                let mut d_pl = vec![0.0; l_n];
                let mut d_al = vec![0.0; k_n];
                if w1 != 0.0 {
                    for (c, d) in d_pl.iter_mut().enumerate() {
                        *d += w1 * (yhat[c] - if c == y { 1.0 } else { 0.0 });
                    }
                }
                if w2 != 0.0 {
                    axpy(w2, &softmax_backward(&f, &ce_centroid), &mut d_al);
                    for (k, dk) in d_cl.iter_mut().enumerate() {
                        for (c, d) in dk.iter_mut().enumerate() {
                            *d += w2 * f[k] * (gbar[k][c] - if c == y { 1.0 } else { 0.0 });
                        }
                    }
                }
                if wkl != 0.0 && (obj.kl_to_assigner || obj.kl_to_predictor) {
                    let d_ybar: Vec<f64> = yhat
                        .iter()
                        .zip(&ybar)
                        .map(|(&p, &q)| if q > LOG_FLOOR { -p / q } else { 0.0 })
                        .collect();
                    if obj.kl_to_predictor {
                        let d_yhat: Vec<f64> = yhat
                            .iter()
                            .zip(&ybar)
                            .map(|(&p, &q)| {
                                p.max(LOG_FLOOR).ln() + if p > LOG_FLOOR { 1.0 } else { 0.0 } - q.max(LOG_FLOOR).ln()
                            })
                            .collect();
                        axpy(wkl, &softmax_backward(&yhat, &d_yhat), &mut d_pl);
                        for (k, dk) in d_cl.iter_mut().enumerate() {
                            let d_g: Vec<f64> = d_ybar.iter().map(|v| f[k] * v).collect();
                            axpy(wkl, &softmax_backward(&gbar[k], &d_g), dk);
                        }
                    }
                    if obj.kl_to_assigner {
                        let d_f: Vec<f64> = gbar.iter().map(|gk| dot(&d_ybar, gk)).collect();
                        axpy(wkl, &softmax_backward(&f, &d_f), &mut d_al);
                    }
                }
                let mut dz = self.assigner.backward(&a_cache, &d_al, &mut g.assigner);
                let dz_p = self.predictor.backward(&p_cache, &d_pl, &mut g.predictor);
                axpy(1.0, &dz_p, &mut dz);
                if let Some(m) = &z_mask {
                    dz.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
                }
                d_hidden.push(dz);
            }
            if let Some(g) = grad.as_deref_mut() {
                self.encoder.lstm.backward(&cache, &d_hidden, &mut g.lstm);
            }
        }
        if let Some(g) = grad {
            for (k, (cc, dk)) in centroid_caches.iter().zip(&d_cl).enumerate() {
                let de = self.predictor.backward(cc, dk, &mut g.predictor);
                axpy(1.0, &de, g.centroids.row_mut(k));
            }
        }
        parts.total = obj.l1 * parts.l1 + obj.l2 * parts.l2 + obj.kl * parts.kl;
        Ok(parts)
    }

    fn adam_step(&mut self, adam: &mut Adam, grad: &Gradients) {
        let grads: Vec<&[f64]> = grad.tensors().into_iter().map(|(_, t)| t.data.as_slice()).collect();
        let params: Vec<&mut [f64]> = self.tensors_mut().into_iter().map(|(_, t)| t.data.as_mut_slice()).collect();
        adam.step(params, grads);
    }

    fn new_adam(&self, cfg: &TrainConfig) -> Adam {
        let sizes: Vec<usize> = self.tensors().iter().map(|(_, t)| t.data.len()).collect();
        Adam::new(cfg.adam(), &sizes)
    }

    /// One pass over `examples` in shuffled minibatches; returns the mean batch loss.
    fn run_epoch(
        &mut self,
        examples: &[Example],
        obj: &Objective,
        cfg: &TrainConfig,
        adam: &mut Adam,
        rng: &mut ChaCha8Rng,
        epoch: usize,
    ) -> Result<LossParts> {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(rng);
        let mut sum = LossParts::default();
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let mut grad = Gradients::zeros_like(self);
            let parts = self.pass(&batch, obj, Some(rng), Some(&mut grad))?;
            if !parts.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {bi}: L1={} L2={} KL={}",
                    parts.l1, parts.l2, parts.kl
                )));
            }
            self.adam_step(adam, &grad);
            if !self.is_finite() {
                return Err(Error::Numeric(format!("non-finite weights after epoch {epoch}, batch {bi}")));
            }
            sum.l1 += parts.l1;
            sum.l2 += parts.l2;
            sum.kl += parts.kl;
            sum.total += parts.total;
            batches += 1;
        }
        let n = batches as f64;
        Ok(LossParts { l1: sum.l1 / n, l2: sum.l2 / n, kl: sum.kl / n, total: sum.total / n })
    }

    /// Pretrains encoder and predictor, places centroids by k-means over the
    /// latents, then fits the assigner to that partition.
    pub fn init(&mut self, data: &Dataset, cfg: &TrainConfig) -> Result<InitReport> {
        cfg.validate()?;
        let examples = self.examples(data)?;
        if examples.is_empty() {
            return Err(Error::Data("no sequences to train on".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut report = InitReport::default();

        let mut adam = self.new_adam(cfg);
        for epoch in 0..cfg.pretrain_epochs {
            let parts = self.run_epoch(&examples, &Objective::pretrain(), cfg, &mut adam, &mut rng, epoch)?;
            debug!("pretrain epoch {epoch}: L1 {:.5}", parts.l1);
            report.pretrain_history.push(parts.l1);
        }

        let latents: Vec<Vec<Vec<f64>>> = examples.iter().map(|e| self.latents(&e.inputs)).collect();
        let flat: Vec<Vec<f64>> = latents.iter().flatten().cloned().collect();
        let k = self.num_clusters();
        let distinct = count_distinct(&flat);
        if distinct < k {
            return Err(Error::Parameter(format!(
                "only {distinct} distinct latent states for K = {k}; choose a smaller K"
            )));
        }
        let km = kmeans_restarts(&flat, k, cfg.kmeans_iters, cfg.kmeans_restarts, &mut rng)?;
        for (c, centre) in km.centroids.iter().enumerate() {
            self.centroids.row_mut(c).copy_from_slice(centre);
        }
        report.kmeans_inertia = km.inertia;

        let mut targets = Vec::with_capacity(latents.len());
        let mut offset = 0;
        for l in &latents {
            targets.push(km.assignments[offset..offset + l.len()].to_vec());
            offset += l.len();
        }
        report.assigner_history = self.fit_assigner(&latents, &targets, cfg, &mut rng)?;
        debug!("initialized {k} clusters (k-means inertia {:.4})", km.inertia);
        Ok(report)
    }

    /// Cross-entropy fit of the assigner alone on fixed latents.
    fn fit_assigner(
        &mut self,
        latents: &[Vec<Vec<f64>>],
        targets: &[Vec<usize>],
        cfg: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let keep = self.encoder.config.dropout_keep;
        let (h, m, k) = (self.hidden_dim(), self.assigner.hidden_dim(), self.num_clusters());
        let sizes = [m * h, m, k * m, k];
        let mut adam = Adam::new(cfg.adam(), &sizes);
        let mut history = Vec::with_capacity(cfg.assigner_epochs);
        let mut order: Vec<usize> = (0..latents.len()).collect();
        for epoch in 0..cfg.assigner_epochs {
            order.shuffle(rng);
            let mut total = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(cfg.batch_size) {
                let n: usize = chunk.iter().map(|&i| latents[i].len()).sum();
                let mut grad = Mlp::zeros(h, m, k);
                let mut loss = 0.0;
                for &i in chunk {
                    for (z, &t) in latents[i].iter().zip(&targets[i]) {
                        let mask = dropout_mask(m, keep, rng);
                        let cache = self.assigner.forward(z, Some(&mask));
                        let p = softmax(&cache.logits);
                        loss -= log_softmax(&cache.logits)[t] / n as f64;
                        let d: Vec<f64> =
                            p.iter().enumerate().map(|(c, pc)| (pc - if c == t { 1.0 } else { 0.0 }) / n as f64).collect();
                        self.assigner.backward(&cache, &d, &mut grad);
                    }
                }
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("non-finite assigner loss at epoch {epoch}")));
                }
                let a = &mut self.assigner;
                adam.step(
                    vec![&mut a.w1.data, &mut a.b1.data, &mut a.w2.data, &mut a.b2.data],
                    vec![&grad.w1.data, &grad.b1.data, &grad.w2.data, &grad.b2.data],
                );
                total += loss;
                batches += 1;
            }
            history.push(total / batches as f64);
        }
        Ok(history)
    }

    /// Joint training of encoder, assigner, predictor and centroids on
    /// `L1 + L2 + α·KL`. Call [`ClusterModel::init`] first.
    pub fn train(&mut self, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochLoss>> {
        cfg.validate()?;
        let examples = self.examples(data)?;
        if examples.is_empty() {
            return Err(Error::Data("no sequences to train on".into()));
        }
        let obj = cfg.objective();
        // a separate stream from the one init draws from
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let mut adam = self.new_adam(cfg);
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let train = self.run_epoch(&examples, &obj, cfg, &mut adam, &mut rng, epoch)?;
            let eval = self.losses(&examples, &obj)?;
            if !eval.is_finite() {
                return Err(Error::Numeric(format!("non-finite evaluation loss after epoch {epoch}")));
            }
            debug!(
                "epoch {epoch}: train {:.5} | L1 {:.5} L2 {:.5} KL {:.5} total {:.5}",
                train.total, eval.l1, eval.l2, eval.kl, eval.total
            );
            history.push(EpochLoss { epoch, train_total: train.total, eval });
        }
        Ok(history)
    }

    /// Per-step cluster history of one featurized sequence, inference mode.
    pub fn trace(&self, mmsi: &str, steps: &[FeatureStep]) -> Result<EvolutionTrace> {
        let inputs = self.encoder.normalizer.apply(steps)?;
        let outputs = self.outputs(&inputs)?;
        let steps = steps
            .iter()
            .zip(outputs)
            .map(|(s, o)| TraceStep {
                relative_time: s.relative_time,
                cluster: argmax(&o.assignment),
                assignment: o.assignment,
                predicted: o.predicted,
                centroid_predicted: o.centroid_predicted,
            })
            .collect();
        Ok(EvolutionTrace { mmsi: mmsi.to_string(), steps })
    }

    /// Majority-vote cluster of every sample.
    pub fn cluster_samples(&self, data: &Dataset) -> Result<Vec<usize>> {
        data.samples
            .iter()
            .map(|s| {
                let t = self.trace(&s.mmsi, &s.steps)?;
                t.majority().ok_or_else(|| Error::Data(format!("empty trace for {}", s.mmsi)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub pretrain_history: Vec<f64>,
    pub kmeans_inertia: f64,
    pub assigner_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean minibatch objective with dropout active.
    pub train_total: f64,
    /// Full-dataset terms after the epoch, inference mode.
    pub eval: LossParts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub init: InitReport,
    pub history: Vec<EpochLoss>,
}

/// Builds, initializes and trains a model on `data`.
pub fn fit(data: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(ClusterModel, TrainReport)> {
    let mut model = ClusterModel::for_dataset(data, model_cfg, cfg.seed)?;
    let init = model.init(data, cfg)?;
    let history = model.train(data, cfg)?;
    Ok((model, TrainReport { init, history }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub relative_time: i64,
    pub cluster: usize,
    pub assignment: Vec<f64>,
    pub predicted: Vec<f64>,
    pub centroid_predicted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTrace {
    pub mmsi: String,
    pub steps: Vec<TraceStep>,
}

impl EvolutionTrace {
    pub fn clusters(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.cluster).collect()
    }

    pub fn majority(&self) -> Option<usize> {
        majority_vote(&self.clusters())
    }
}

/// Most frequent id; ties go to the smallest.
pub fn majority_vote(ids: &[usize]) -> Option<usize> {
    let max = *ids.iter().max()?;
    let mut counts = vec![0usize; max + 1];
    ids.iter().for_each(|&i| counts[i] += 1);
    let best = counts.iter().copied().max()?;
    counts.iter().position(|&c| c == best)
}

pub const CHECKPOINT_FORMAT: &str = "vbclust-model";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing model file: matrices carry their shapes and row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ClusterModel,
    pub train_config: Option<TrainConfig>,
    pub report: Option<TrainReport>,
}

impl Checkpoint {
    pub fn new(model: ClusterModel, train_config: Option<TrainConfig>, report: Option<TrainReport>) -> Self {
        Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, model, train_config, report }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("not a model checkpoint (format `{}`)", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", ck.version)));
        }
        ck.model.check_shapes()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_model(k: usize, labels: usize, seed: u64) -> ClusterModel {
        let featurizer = Featurizer::Label { categories: (0..labels).map(|i| format!("c{i}")).collect(), grid_step: None };
        let width = featurizer.input_dim();
        let cfg = ModelConfig { num_clusters: k, hidden_dim: 8, mlp_hidden: 5, dropout_keep: 0.7 };
        ClusterModel::new(featurizer, Normalizer::identity(width), &cfg, seed).unwrap()
    }

    fn random_batch(model: &ClusterModel, seed: u64, trajectories: usize, steps: usize) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..trajectories)
            .map(|_| Example {
                inputs: (0..steps).map(|_| (0..model.input_dim()).map(|_| rng.random_range(-1.5..1.5)).collect()).collect(),
                targets: (0..steps).map(|_| rng.random_range(0..model.num_labels())).collect(),
            })
            .collect()
    }

    #[test]
    fn assignment_is_a_distribution() {
        let m = tiny_model(3, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let z: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = m.assign(&z);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_logits_assign_cluster_zero() {
        let mut m = tiny_model(4, 3, 1);
        m.assigner.w2.fill(0.0);
        m.assigner.b2.fill(0.0);
        let p = m.assign(&[0.3; 8]);
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert_eq!(m.hard_assign(&[0.3; 8]), 0);
    }

    #[test]
    fn logit_shift_keeps_argmax() {
        let mut m = tiny_model(3, 3, 5);
        let z = [0.1, -0.4, 0.2, 0.9, -0.3, 0.0, 0.5, -0.8];
        let before = m.hard_assign(&z);
        m.assigner.b2.data.iter_mut().for_each(|b| *b += 7.5);
        assert_eq!(m.hard_assign(&z), before);
    }

    #[test]
    fn uniform_predictor_gives_ln_labels() {
        let mut m = tiny_model(2, 10, 3);
        m.predictor.w2.fill(0.0);
        m.predictor.b2.fill(0.0);
        let batch = random_batch(&m, 4, 1, 5);
        let l1 = m.loss_l1(&batch).unwrap();
        assert!((l1 - 5.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_hand_case() {
        let v = kl_floor(&[0.9, 0.1], &[0.5, 0.5]);
        assert!((v - (0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln())).abs() < 1e-15);
        assert!((v - 0.3681).abs() < 1e-4);
        assert_eq!(kl_floor(&[0.2, 0.8], &[0.2, 0.8]), 0.0);
    }

    #[test]
    fn losses_are_nonnegative() {
        for seed in 0..10 {
            let m = tiny_model(3, 4, seed);
            let batch = random_batch(&m, seed + 100, 2, 6);
            let p = m.losses(&batch, &Objective::joint(1.0)).unwrap();
            assert!(p.l1 >= 0.0 && p.l2 >= 0.0 && p.kl >= 0.0);
        }
    }

    #[test]
    fn out_of_range_label_is_an_error() {
        let m = tiny_model(2, 3, 0);
        let mut batch = random_batch(&m, 1, 1, 3);
        batch[0].targets[1] = 3;
        assert!(matches!(m.loss_l1(&batch), Err(Error::Data(_))));
    }

    #[test]
    fn single_cluster_l2_is_centroid_cross_entropy() {
        let m = tiny_model(1, 4, 9);
        let batch = random_batch(&m, 10, 2, 6);
        let g = m.centroid_predictions();
        let direct: f64 = batch.iter().flat_map(|e| &e.targets).map(|&y| -g[0][y].ln()).sum::<f64>() / 2.0;
        assert!((m.loss_l2(&batch).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn cluster_permutation_leaves_losses_unchanged() {
        let m = tiny_model(3, 4, 21);
        let batch = random_batch(&m, 22, 2, 6);
        let mut p = m.clone();
        let perm = [2, 0, 1];
        for (dst, &src) in perm.iter().enumerate() {
            p.centroids.row_mut(dst).copy_from_slice(m.centroids.row(src));
            p.assigner.w2.row_mut(dst).copy_from_slice(m.assigner.w2.row(src));
            p.assigner.b2.data[dst] = m.assigner.b2.data[src];
        }
        let a = m.losses(&batch, &Objective::joint(1.0)).unwrap();
        let b = p.losses(&batch, &Objective::joint(1.0)).unwrap();
        assert!((a.l1 - b.l1).abs() < 1e-12);
        assert!((a.l2 - b.l2).abs() < 1e-12);
        assert!((a.kl - b.kl).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = tiny_model(2, 3, 31);
        let batch = random_batch(&m, 32, 2, 6);
        let obj = Objective::joint(0.7);
        let (_, grad) = m.gradient(&batch, &obj).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let names: Vec<&str> = m.tensors().iter().map(|(n, _)| *n).collect();
        for (ti, name) in names.iter().enumerate() {
            let len = m.tensors()[ti].1.data.len();
            for i in 0..len {
                let bump = |d: f64| {
                    let mut p = m.clone();
                    p.tensors_mut()[ti].1.data[i] += d;
                    p.losses(&batch, &obj).unwrap().total
                };
                let numeric = (bump(h) - bump(-h)) / (2.0 * h);
                let analytic = grad.tensors()[ti].1.data[i];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-7);
                assert!(rel < 1e-4, "{name}[{i}]: numeric {numeric} analytic {analytic}");
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn kl_flags_stop_gradients() {
        let m = tiny_model(2, 3, 41);
        let batch = random_batch(&m, 42, 2, 4);
        let only_kl = Objective { l1: 0.0, l2: 0.0, kl: 1.0, kl_to_assigner: false, kl_to_predictor: true };
        let (_, g) = m.gradient(&batch, &only_kl).unwrap();
        assert!(g.assigner.w2.data.iter().all(|&v| v == 0.0));
        let only_assigner = Objective { kl_to_assigner: true, kl_to_predictor: false, ..only_kl };
        let (_, g) = m.gradient(&batch, &only_assigner).unwrap();
        assert!(g.predictor.w2.data.iter().all(|&v| v == 0.0));
        assert!(g.assigner.w2.data.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn majority_vote_ties_to_smallest() {
        assert_eq!(majority_vote(&[2, 1, 2, 1]), Some(1));
        assert_eq!(majority_vote(&[0, 3, 3]), Some(3));
        assert_eq!(majority_vote(&[]), None);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = tiny_model(3, 4, 7);
        let ck = Checkpoint::new(m, Some(TrainConfig::default()), None);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let mut bad = ck.clone();
        bad.model.centroids.data.pop();
        assert!(Checkpoint::from_json(&bad.to_json().unwrap()).is_err());
        let mut wrong = ck;
        wrong.version = 99;
        assert!(Checkpoint::from_json(&wrong.to_json().unwrap()).is_err());
    }
}
