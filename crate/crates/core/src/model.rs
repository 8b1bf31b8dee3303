//! The base network: an MLP feature extractor and a prototype classifier.
//!
//! The classifier head comes in two flavors. The cosine head ℓ2-normalizes
//! the feature, projects it onto one prototype vector per class, and divides
//! by a temperature, so its logits depend only on feature direction. The
//! standard linear head (used for the head ablation) applies `f·Wᵀ + b` to
//! raw features and is deliberately scale-sensitive.
//!
//! Parameters live outside any tape as plain `f64` buffers; [`ModelParams::bind`]
//! registers them as leaves on a fresh tape for each training step.

use crate::autodiff::{Tape, TapeError, TensorId};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Cosine,
    Linear,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadKind::Cosine => write!(f, "cosine"),
            HeadKind::Linear => write!(f, "linear"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    Dimension(String),
    Tape(TapeError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Dimension(d) => write!(f, "dimension error: {d}"),
            ModelError::Tape(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<TapeError> for ModelError {
    fn from(e: TapeError) -> Self {
        ModelError::Tape(e)
    }
}

/// Layer sizes of the network: `input_dim → hidden… → feat_dim`, plus the
/// class count K of the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feat_dim: usize,
    pub num_classes: usize,
}

impl ModelDims {
    /// Desk-scale default: input → 64 → 64 → 16.
    pub fn default_for(input_dim: usize, num_classes: usize) -> Self {
        ModelDims {
            input_dim,
            hidden: vec![64, 64],
            feat_dim: 16,
            num_classes,
        }
    }

    fn layer_sizes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(self.feat_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One dense layer, weight stored row-major as [in_dim × out_dim].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// MLP feature extractor, relu on every layer except the last.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureExtractorParams {
    pub layers: Vec<DenseLayer>,
}

/// Prototype head: one row per class in `prototypes` ([K × feat_dim]),
/// logits = ⟨w_k, f/‖f‖⟩ / T.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CosineClassifierParams {
    pub feat_dim: usize,
    pub num_classes: usize,
    pub temperature: f64,
    /// Row-major [K × feat_dim]; row k is the prototype of class k.
    pub prototypes: Vec<f64>,
    /// Also ℓ2-normalize the prototype rows. Off by default; the written
    /// formula normalizes only the feature.
    #[serde(default)]
    pub normalize_weights: bool,
}

/// Standard linear head for the ablation: logits = f·Wᵀ + b on raw features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearClassifierParams {
    pub feat_dim: usize,
    pub num_classes: usize,
    /// Row-major [K × feat_dim].
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierParams {
    Cosine(CosineClassifierParams),
    Linear(LinearClassifierParams),
}

impl ClassifierParams {
    pub fn kind(&self) -> HeadKind {
        match self {
            ClassifierParams::Cosine(_) => HeadKind::Cosine,
            ClassifierParams::Linear(_) => HeadKind::Linear,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ClassifierParams::Cosine(c) => c.num_classes,
            ClassifierParams::Linear(l) => l.num_classes,
        }
    }
}

/// Full model: extractor θ_F plus classifier θ_C.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub extractor: FeatureExtractorParams,
    pub head: ClassifierParams,
    pub seed: u64,
}

fn glorot_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out)
        .map(|_| rng.uniform_in(-a, a))
        .collect()
}

// Prototype rows start near zero. Under the 1/T logit scaling a
// Glorot-sized prototype already produces near-one-hot outputs, which
// pins the entropy of an untrained model near zero; a small bound keeps
// the initial cosine logits within a few units so early predictions are
// genuinely uncertain and entropy starts near its ceiling.
const PROTOTYPE_INIT_BOUND: f64 = 0.1;

fn prototype_init(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| rng.uniform_in(-PROTOTYPE_INIT_BOUND, PROTOTYPE_INIT_BOUND))
        .collect()
}

/// Initialize a model with Glorot-uniform weights and zero biases.
/// Deterministic given the seed.
pub fn init_model(
    seed: u64,
    dims: &ModelDims,
    head_kind: HeadKind,
    temperature: f64,
) -> ModelParams {
    let mut rng = Rng::stream(seed, 0x6d6f64656c);
    let layers = dims
        .layer_sizes()
        .into_iter()
        .map(|(fan_in, fan_out)| DenseLayer {
            in_dim: fan_in,
            out_dim: fan_out,
            weight: glorot_uniform(&mut rng, fan_in, fan_out),
            bias: vec![0.0; fan_out],
        })
        .collect();
    let head = match head_kind {
        HeadKind::Cosine => ClassifierParams::Cosine(CosineClassifierParams {
            feat_dim: dims.feat_dim,
            num_classes: dims.num_classes,
            temperature,
            prototypes: prototype_init(&mut rng, dims.feat_dim * dims.num_classes),
            normalize_weights: false,
        }),
        HeadKind::Linear => ClassifierParams::Linear(LinearClassifierParams {
            feat_dim: dims.feat_dim,
            num_classes: dims.num_classes,
            weight: glorot_uniform(&mut rng, dims.feat_dim, dims.num_classes),
            bias: vec![0.0; dims.num_classes],
        }),
    };
    ModelParams {
        dims: dims.clone(),
        extractor: FeatureExtractorParams { layers },
        head,
        seed,
    }
}

impl ModelParams {
    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    /// Mutable views of every parameter buffer in canonical order:
    /// extractor layers (weight then bias, in layer order), then the head.
    /// The order matches [`BoundModel::param_ids`].
    pub fn param_buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.extractor.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        match &mut self.head {
            ClassifierParams::Cosine(c) => out.push(&mut c.prototypes),
            ClassifierParams::Linear(l) => {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out
    }

    /// Index ranges of extractor (θ_F) and head (θ_C) buffers within the
    /// canonical parameter order.
    pub fn extractor_buffer_count(&self) -> usize {
        self.extractor.layers.len() * 2
    }

    /// Register every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundModel, ModelError> {
        let mut layer_ids = Vec::with_capacity(self.extractor.layers.len());
        let mut param_ids = Vec::new();
        for layer in &self.extractor.layers {
            let w = tape.leaf(layer.weight.clone(), vec![layer.in_dim, layer.out_dim])?;
            let b = tape.leaf(layer.bias.clone(), vec![layer.out_dim])?;
            layer_ids.push((w, b));
            param_ids.push(w);
            param_ids.push(b);
        }
        let head = match &self.head {
            ClassifierParams::Cosine(c) => {
                let w = tape.leaf(c.prototypes.clone(), vec![c.num_classes, c.feat_dim])?;
                param_ids.push(w);
                BoundHead::Cosine {
                    prototypes: w,
                    inv_temperature: 1.0 / c.temperature,
                    normalize_weights: c.normalize_weights,
                }
            }
            ClassifierParams::Linear(l) => {
                let w = tape.leaf(l.weight.clone(), vec![l.num_classes, l.feat_dim])?;
                let b = tape.leaf(l.bias.clone(), vec![l.num_classes])?;
                param_ids.push(w);
                param_ids.push(b);
                BoundHead::Linear { weight: w, bias: b }
            }
        };
        Ok(BoundModel {
            layer_ids,
            head,
            param_ids,
        })
    }

    /// Class probabilities for a batch, computed on a throwaway tape.
    pub fn predict_proba(&self, x: &[f64], batch: usize) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let input = tape.leaf(x.to_vec(), vec![batch, self.dims.input_dim])?;
        let feats = bound.features(&mut tape, input)?;
        let logits = bound.logits(&mut tape, feats)?;
        let probs = tape.softmax(logits)?;
        Ok(tape.data(probs).to_vec())
    }

    /// Raw (un-normalized) features for a batch.
    pub fn extract_features(&self, x: &[f64], batch: usize) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let input = tape.leaf(x.to_vec(), vec![batch, self.dims.input_dim])?;
        let feats = bound.features(&mut tape, input)?;
        Ok(tape.data(feats).to_vec())
    }

    /// Argmax class per row, ties broken toward the lowest index.
    pub fn predict_classes(&self, x: &[f64], batch: usize) -> Result<Vec<usize>, ModelError> {
        let probs = self.predict_proba(x, batch)?;
        let k = self.num_classes();
        Ok((0..batch)
            .map(|i| argmax(&probs[i * k..(i + 1) * k]))
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Lowest-index argmax.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

enum BoundHead {
    Cosine {
        prototypes: TensorId,
        inv_temperature: f64,
        normalize_weights: bool,
    },
    Linear {
        weight: TensorId,
        bias: TensorId,
    },
}

/// Model parameters registered on a specific tape.
pub struct BoundModel {
    layer_ids: Vec<(TensorId, TensorId)>,
    head: BoundHead,
    /// Leaf ids in the canonical parameter order.
    pub param_ids: Vec<TensorId>,
}

impl BoundModel {
    /// Forward through the MLP: x [batch × input_dim] → features
    /// [batch × feat_dim], relu on all but the last layer.
    pub fn features(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId, ModelError> {
        let mut h = x;
        let last = self.layer_ids.len() - 1;
        for (i, &(w, b)) in self.layer_ids.iter().enumerate() {
            let lin = tape.matmul(h, w)?;
            h = tape.add_bias(lin, b)?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Head logits from raw features.
    pub fn logits(&self, tape: &mut Tape, feats: TensorId) -> Result<TensorId, ModelError> {
        match self.head {
            BoundHead::Cosine {
                prototypes,
                inv_temperature,
                normalize_weights,
            } => {
                let normed = tape.l2_normalize(feats)?;
                let protos = if normalize_weights {
                    tape.l2_normalize(prototypes)?
                } else {
                    prototypes
                };
                let sims = tape.matmul_transpose_b(normed, protos)?;
                Ok(tape.scalar_mul(sims, inv_temperature)?)
            }
            BoundHead::Linear { weight, bias } => {
                let proj = tape.matmul_transpose_b(feats, weight)?;
                Ok(tape.add_bias(proj, bias)?)
            }
        }
    }

    /// softmax(logits(features(x))).
    pub fn probs(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId, ModelError> {
        let feats = self.features(tape, x)?;
        let logits = self.logits(tape, feats)?;
        Ok(tape.softmax(logits)?)
    }
}
