//! Per-step featurization of behavior sequences and the recurrent encoder.
//!
//! Sub-trajectory level: one step per fix carrying speed, course as a
//! sine/cosine pair and a one-hot code of the enclosing slice's behavior; the
//! target is that behavior code. Label level: one step per label point (or
//! per tick of an optional virtual clock, holding the latest label point)
//! carrying its position and a one-hot berth category; the target is the
//! category. Absolute time is dropped: every sequence starts at zero.

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BehaviorLabel, LabelSequence, PositionSequence, SubTrajectory, NUM_BEHAVIORS};
use crate::nn::Lstm;

pub const DEFAULT_HIDDEN_DIM: usize = 150;
/// Probability of keeping a unit under dropout.
pub const DEFAULT_DROPOUT_KEEP: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStep {
    /// Seconds since the first step of the sequence.
    pub relative_time: i64,
    pub features: Vec<f64>,
}

/// How raw sequences become feature steps and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "snake_case")]
pub enum Featurizer {
    SubTrajectory,
    Label {
        /// Category names in one-hot order.
        categories: Vec<String>,
        /// Virtual clock period in seconds; `None` gives one step per label point.
        grid_step: Option<i64>,
    },
}

impl Featurizer {
    pub fn input_dim(&self) -> usize {
        match self {
            Featurizer::SubTrajectory => 3 + NUM_BEHAVIORS,
            Featurizer::Label { categories, .. } => 2 + categories.len(),
        }
    }

    pub fn label_names(&self) -> Vec<String> {
        match self {
            Featurizer::SubTrajectory => BehaviorLabel::all().map(|b| b.name()).collect(),
            Featurizer::Label { categories, .. } => categories.clone(),
        }
    }

    pub fn num_labels(&self) -> usize {
        match self {
            Featurizer::SubTrajectory => NUM_BEHAVIORS,
            Featurizer::Label { categories, .. } => categories.len(),
        }
    }

    pub fn level_name(&self) -> &'static str {
        match self {
            Featurizer::SubTrajectory => "subtraj",
            Featurizer::Label { .. } => "label",
        }
    }
}

/// Steps and per-step targets of one sequence.
pub type Featurized = (Vec<FeatureStep>, Vec<usize>);

/// One step per fix. `segments` must be labelled and partition `sequence`.
pub fn featurize_subtraj(sequence: &PositionSequence, segments: &[SubTrajectory]) -> Result<Featurized> {
    if sequence.is_empty() {
        return Err(Error::Data(format!("empty sequence {}", sequence.mmsi)));
    }
    let mut codes = vec![usize::MAX; sequence.len()];
    for s in segments {
        let b = s.behavior.ok_or_else(|| Error::Data("unlabelled segment".into()))?;
        if s.end_index >= codes.len() {
            return Err(Error::Data(format!("segment {}..{} exceeds sequence {}", s.start_index, s.end_index, sequence.mmsi)));
        }
        codes[s.start_index..=s.end_index].iter_mut().for_each(|c| *c = b.code());
    }
    if codes.contains(&usize::MAX) {
        return Err(Error::Data(format!("segments do not cover sequence {}", sequence.mmsi)));
    }
    let t0 = sequence.points[0].timestamp;
    let steps = sequence
        .points
        .iter()
        .zip(&codes)
        .map(|(p, &code)| {
            let (s, c) = p.cog.to_radians().sin_cos();
            let mut features = vec![0.0; 3 + NUM_BEHAVIORS];
            features[0] = p.sog;
            features[1] = s;
            features[2] = c;
            features[3 + code] = 1.0;
            FeatureStep { relative_time: p.timestamp - t0, features }
        })
        .collect();
    Ok((steps, codes))
}

/// Label-level steps with hold-last semantics on an optional virtual clock.
pub fn featurize_label_seq(sequence: &LabelSequence, categories: &[String], grid_step: Option<i64>) -> Result<Featurized> {
    let lps = &sequence.label_points;
    if lps.is_empty() {
        return Err(Error::Data(format!("empty label sequence {}", sequence.mmsi)));
    }
    let classes: Vec<usize> = lps
        .iter()
        .map(|lp| {
            let name = lp.port_label.name();
            categories
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Data(format!("unknown berth category `{name}`")))
        })
        .collect::<Result<_>>()?;
    let t0 = lps[0].timestamp;
    let step_for = |i: usize, relative_time: i64| {
        let mut features = vec![0.0; 2 + categories.len()];
        features[0] = lps[i].position.lat;
        features[1] = lps[i].position.lon;
        features[2 + classes[i]] = 1.0;
        FeatureStep { relative_time, features }
    };
    match grid_step {
        None => Ok((lps.iter().enumerate().map(|(i, lp)| step_for(i, lp.timestamp - t0)).collect(), classes)),
        Some(step) if step <= 0 => Err(Error::Parameter(format!("grid step must be positive, got {step}"))),
        Some(step) => {
            let span = lps[lps.len() - 1].timestamp - t0;
            let mut steps = Vec::new();
            let mut targets = Vec::new();
            let mut current = 0;
            let mut tick = 0;
            while tick <= span {
                while current + 1 < lps.len() && lps[current + 1].timestamp - t0 <= tick {
                    current += 1;
                }
                steps.push(step_for(current, tick));
                targets.push(classes[current]);
                tick += step;
            }
            Ok((steps, targets))
        }
    }
}

/// Per-feature z-normalization fitted on training steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Constant features fall back to unit scale.
    pub fn fit<'a, I: IntoIterator<Item = &'a FeatureStep>>(steps: I, width: usize) -> Result<Self> {
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        let mut count = 0usize;
        for s in steps {
            if s.features.len() != width {
                return Err(Error::Width { expected: width, got: s.features.len() });
            }
            for (j, &v) in s.features.iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Data("cannot fit normalization on zero steps".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .enumerate()
            .map(|(j, (q, m))| {
                let var = (q / n - m * m).max(0.0);
                if var.sqrt() < 1e-9 {
                    info!("feature {j} is constant; using unit scale");
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn identity(width: usize) -> Self {
        Normalizer { mean: vec![0.0; width], std: vec![1.0; width] }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, steps: &[FeatureStep]) -> Result<Vec<Vec<f64>>> {
        steps
            .iter()
            .map(|s| {
                if s.features.len() != self.width() {
                    return Err(Error::Width { expected: self.width(), got: s.features.len() });
                }
                Ok(s.features.iter().zip(&self.mean).zip(&self.std).map(|((x, m), sd)| (x - m) / sd).collect())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Keep probability for inverted dropout during training.
    pub dropout_keep: f64,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn new(input_dim: usize) -> Self {
        EncoderConfig { input_dim, hidden_dim: DEFAULT_HIDDEN_DIM, dropout_keep: DEFAULT_DROPOUT_KEEP, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Parameter("encoder dimensions must be at least 1".into()));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::Parameter(format!("dropout keep probability must be in (0, 1], got {}", self.dropout_keep)));
        }
        Ok(())
    }
}

/// Normalizer plus LSTM: maps feature steps to latent states `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub normalizer: Normalizer,
    pub lstm: Lstm,
}

impl Encoder {
    pub fn new<R: rand::Rng>(config: EncoderConfig, normalizer: Normalizer, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if normalizer.width() != config.input_dim {
            return Err(Error::Width { expected: config.input_dim, got: normalizer.width() });
        }
        let lstm = Lstm::new(config.input_dim, config.hidden_dim, rng);
        Ok(Encoder { config, normalizer, lstm })
    }

    /// Inference-mode encoding: one latent vector per step, no dropout.
    pub fn encode(&self, steps: &[FeatureStep]) -> Result<Vec<Vec<f64>>> {
        let inputs = self.normalizer.apply(steps)?;
        Ok(self.lstm.forward(&inputs).hidden)
    }
}
