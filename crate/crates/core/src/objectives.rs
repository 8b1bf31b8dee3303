//! Loss surface: labeled cross-entropy, conditional entropy on unlabeled
//! target data, and the adversarial couplings that tie them together.
//!
//! The minimax objective trains the classifier to maximize unlabeled-target
//! entropy while the feature extractor minimizes it. Both updates happen in
//! one backward pass: the unlabeled features pass through a gradient
//! reversal before reaching the classifier, and the entropy term enters the
//! total loss as `-λ·H`. After backward on (classification + adversarial):
//!
//! * classifier gradients equal ∇(ℒ − λH) — it ascends the entropy;
//! * extractor gradients equal ∇(ℒ + λH) — it descends the entropy.
//!
//! `ent` keeps the same entropy term with no reversal (everything descends),
//! and `dann` replaces it with a reversed binary domain classifier on
//! source-vs-unlabeled-target features.

use crate::autodiff::{Tape, TapeError, TensorId};
use crate::model::{BoundModel, ModelError};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveError {
    InvalidLabel {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    NegativeLambda(f64),
    EmptyBatch(&'static str),
    Tape(TapeError),
    Model(ModelError),
}

impl fmt::Display for ObjectiveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveError::InvalidLabel {
                index,
                label,
                num_classes,
            } => write!(f, "label {label} at row {index} outside [0, {num_classes})"),
            ObjectiveError::NegativeLambda(l) => write!(f, "lambda must be nonnegative, got {l}"),
            ObjectiveError::EmptyBatch(which) => write!(f, "empty {which} batch"),
            ObjectiveError::Tape(e) => write!(f, "{e}"),
            ObjectiveError::Model(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for ObjectiveError {}

impl From<TapeError> for ObjectiveError {
    fn from(e: TapeError) -> Self {
        ObjectiveError::Tape(e)
    }
}

impl From<ModelError> for ObjectiveError {
    fn from(e: ModelError) -> Self {
        ObjectiveError::Model(e)
    }
}

/// Trade-off between the classification loss and the adversarial entropy
/// term. `lambda = 0` degenerates exactly to training on labeled data only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimaxLossSpec {
    pub lambda: f64,
}

impl MinimaxLossSpec {
    pub fn new(lambda: f64) -> Result<Self, ObjectiveError> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(ObjectiveError::NegativeLambda(lambda));
        }
        Ok(MinimaxLossSpec { lambda })
    }
}

/// A labeled minibatch, row-major. The first `n_source` rows come from the
/// source domain, the rest from the labeled target set.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    pub n: usize,
    pub n_source: usize,
}

/// An unlabeled target minibatch, row-major.
#[derive(Debug, Clone)]
pub struct UnlabeledBatch {
    pub x: Vec<f64>,
    pub n: usize,
}

/// Mean over the batch of −log p[i, y_i], with the log clamped.
pub fn cross_entropy_loss(
    tape: &mut Tape,
    probs: TensorId,
    labels: &[usize],
) -> Result<TensorId, ObjectiveError> {
    let shape = tape.shape(probs).to_vec();
    let (batch, k) = match shape.as_slice() {
        [b, k] => (*b, *k),
        _ => {
            return Err(ObjectiveError::Tape(TapeError::ShapeMismatch {
                op: "cross_entropy_loss",
                detail: format!("expected [batch × K] probabilities, got {shape:?}"),
            }))
        }
    };
    if batch == 0 {
        return Err(ObjectiveError::EmptyBatch("labeled"));
    }
    if labels.len() != batch {
        return Err(ObjectiveError::Tape(TapeError::ShapeMismatch {
            op: "cross_entropy_loss",
            detail: format!("{} labels for {batch} rows", labels.len()),
        }));
    }
    let mut mask = vec![0.0; batch * k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(ObjectiveError::InvalidLabel {
                index: i,
                label: y,
                num_classes: k,
            });
        }
        mask[i * k + y] = 1.0;
    }
    let mask = tape.leaf(mask, vec![batch, k])?;
    let log_p = tape.log(probs)?;
    let picked = tape.mul(mask, log_p)?;
    let total = tape.reduce_sum(picked)?;
    Ok(tape.scalar_mul(total, -1.0 / batch as f64)?)
}

/// Mean over the batch of −Σ_k p log p; bounded by [0, ln K].
pub fn conditional_entropy(tape: &mut Tape, probs: TensorId) -> Result<TensorId, ObjectiveError> {
    let shape = tape.shape(probs).to_vec();
    let batch = match shape.as_slice() {
        [b, _] => *b,
        _ => {
            return Err(ObjectiveError::Tape(TapeError::ShapeMismatch {
                op: "conditional_entropy",
                detail: format!("expected [batch × K] probabilities, got {shape:?}"),
            }))
        }
    };
    if batch == 0 {
        return Err(ObjectiveError::EmptyBatch("unlabeled"));
    }
    let log_p = tape.log(probs)?;
    let plogp = tape.mul(probs, log_p)?;
    let total = tape.reduce_sum(plogp)?;
    Ok(tape.scalar_mul(total, -1.0 / batch as f64)?)
}

/// Per-example Shannon entropies of a probability matrix (plain data, no
/// tape). Shared by the metrics path and the divergence estimator.
pub fn row_entropies(probs: &[f64], k: usize) -> Vec<f64> {
    probs
        .chunks(k)
        .map(|row| {
            -row.iter()
                .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
                .sum::<f64>()
        })
        .collect()
}

fn labeled_ce(
    tape: &mut Tape,
    model: &BoundModel,
    labeled: &LabeledBatch,
    input_dim: usize,
) -> Result<TensorId, ObjectiveError> {
    if labeled.n == 0 {
        return Err(ObjectiveError::EmptyBatch("labeled"));
    }
    let x = tape.leaf(labeled.x.clone(), vec![labeled.n, input_dim])?;
    let probs = model.probs(tape, x)?;
    cross_entropy_loss(tape, probs, &labeled.y)
}

/// Classification loss and adversarial entropy term for a minimax step.
///
/// Returns `(classification, adversarial)` where `adversarial` evaluates to
/// `-λ·H` on the unlabeled batch. Backward on their sum yields
/// ∇(ℒ − λH) on the classifier and ∇(ℒ + λH) on the extractor. With
/// `λ = 0` the unlabeled branch is skipped entirely, so gradients coincide
/// with the labeled-only objective bit for bit.
pub fn mme_step_losses(
    tape: &mut Tape,
    model: &BoundModel,
    labeled: &LabeledBatch,
    unlabeled: &UnlabeledBatch,
    spec: MinimaxLossSpec,
    input_dim: usize,
) -> Result<(TensorId, TensorId), ObjectiveError> {
    if !spec.lambda.is_finite() || spec.lambda < 0.0 {
        return Err(ObjectiveError::NegativeLambda(spec.lambda));
    }
    let classification = labeled_ce(tape, model, labeled, input_dim)?;
    if spec.lambda == 0.0 {
        let zero = tape.scalar(0.0)?;
        return Ok((classification, zero));
    }
    if unlabeled.n == 0 {
        return Err(ObjectiveError::EmptyBatch("unlabeled"));
    }
    let xu = tape.leaf(unlabeled.x.clone(), vec![unlabeled.n, input_dim])?;
    let feats = model.features(tape, xu)?;
    let reversed = tape.grad_reverse(feats, 1.0)?;
    let logits = model.logits(tape, reversed)?;
    let probs = tape.softmax(logits)?;
    let entropy = conditional_entropy(tape, probs)?;
    let adversarial = tape.scalar_mul(entropy, -spec.lambda)?;
    Ok((classification, adversarial))
}

/// Plain entropy minimization: ℒ + λH with no reversal, as one scalar.
/// Classifier and extractor both descend the entropy.
pub fn ent_step_losses(
    tape: &mut Tape,
    model: &BoundModel,
    labeled: &LabeledBatch,
    unlabeled: &UnlabeledBatch,
    lambda: f64,
    input_dim: usize,
) -> Result<TensorId, ObjectiveError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(ObjectiveError::NegativeLambda(lambda));
    }
    let classification = labeled_ce(tape, model, labeled, input_dim)?;
    if lambda == 0.0 {
        return Ok(classification);
    }
    if unlabeled.n == 0 {
        return Err(ObjectiveError::EmptyBatch("unlabeled"));
    }
    let xu = tape.leaf(unlabeled.x.clone(), vec![unlabeled.n, input_dim])?;
    let probs = model.probs(tape, xu)?;
    let entropy = conditional_entropy(tape, probs)?;
    let weighted = tape.scalar_mul(entropy, lambda)?;
    Ok(tape.add(classification, weighted)?)
}

/// Binary domain discriminator on features: three dense layers with relu,
/// sigmoid on the final scalar output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainHeadParams {
    pub feat_dim: usize,
    pub hidden_dim: usize,
    pub weights: [Vec<f64>; 3],
    pub biases: [Vec<f64>; 3],
}

impl DomainHeadParams {
    pub fn init(seed: u64, feat_dim: usize, hidden_dim: usize) -> Self {
        let mut rng = Rng::stream(seed, 0x646f6d61696e);
        let mut glorot = |fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out)
                .map(|_| rng.uniform_in(-a, a))
                .collect::<Vec<f64>>()
        };
        DomainHeadParams {
            feat_dim,
            hidden_dim,
            weights: [
                glorot(feat_dim, hidden_dim),
                glorot(hidden_dim, hidden_dim),
                glorot(hidden_dim, 1),
            ],
            biases: [vec![0.0; hidden_dim], vec![0.0; hidden_dim], vec![0.0; 1]],
        }
    }

    /// Mutable buffers in the same order as [`BoundDomainHead::param_ids`].
    pub fn param_buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundDomainHead, ObjectiveError> {
        let dims = [
            (self.feat_dim, self.hidden_dim),
            (self.hidden_dim, self.hidden_dim),
            (self.hidden_dim, 1),
        ];
        let mut ids = Vec::with_capacity(6);
        let mut layers = Vec::with_capacity(3);
        for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = tape.leaf(self.weights[i].clone(), vec![fan_in, fan_out])?;
            let b = tape.leaf(self.biases[i].clone(), vec![fan_out])?;
            layers.push((w, b));
            ids.push(w);
            ids.push(b);
        }
        Ok(BoundDomainHead {
            layers,
            param_ids: ids,
        })
    }
}

pub struct BoundDomainHead {
    layers: Vec<(TensorId, TensorId)>,
    pub param_ids: Vec<TensorId>,
}

impl BoundDomainHead {
    /// Per-row probability of the "target" domain, shape [n × 1].
    pub fn domain_proba(
        &self,
        tape: &mut Tape,
        feats: TensorId,
    ) -> Result<TensorId, ObjectiveError> {
        let mut h = feats;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let lin = tape.matmul(h, w)?;
            h = tape.add_bias(lin, b)?;
            if i < self.layers.len() - 1 {
                h = tape.relu(h)?;
            }
        }
        Ok(tape.sigmoid(h)?)
    }
}

/// Sum over rows of the binary cross-entropy terms against a constant
/// domain label (0 = source, 1 = target).
fn bce_sum(tape: &mut Tape, proba: TensorId, label: f64) -> Result<TensorId, ObjectiveError> {
    let term = if label == 1.0 {
        tape.log(proba)?
    } else {
        let neg = tape.scalar_mul(proba, -1.0)?;
        let one_minus = tape.add_const(neg, 1.0)?;
        tape.log(one_minus)?
    };
    let total = tape.reduce_sum(term)?;
    Ok(tape.scalar_mul(total, -1.0)?)
}

/// Classification loss plus a reversed domain-classification loss.
///
/// The domain head is trained to separate source features (label 0) from
/// unlabeled-target features (label 1); labeled target examples stay out of
/// the domain loss. A gradient reversal of strength `lambda` sits between
/// the extractor and the head, so after backward on the sum:
/// extractor gradients equal ∇ℒ − λ∇ℒ_dom, head gradients equal ∇ℒ_dom.
pub fn dann_step_losses(
    tape: &mut Tape,
    model: &BoundModel,
    domain_head: &BoundDomainHead,
    labeled: &LabeledBatch,
    unlabeled: &UnlabeledBatch,
    lambda: f64,
    input_dim: usize,
) -> Result<(TensorId, TensorId), ObjectiveError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(ObjectiveError::NegativeLambda(lambda));
    }
    if labeled.n_source == 0 {
        return Err(ObjectiveError::EmptyBatch("source"));
    }
    if unlabeled.n == 0 {
        return Err(ObjectiveError::EmptyBatch("unlabeled"));
    }
    let classification = labeled_ce(tape, model, labeled, input_dim)?;

    let source_x: Vec<f64> = labeled.x[..labeled.n_source * input_dim].to_vec();
    let xs = tape.leaf(source_x, vec![labeled.n_source, input_dim])?;
    let feats_s = model.features(tape, xs)?;
    let rev_s = tape.grad_reverse(feats_s, lambda)?;
    let proba_s = domain_head.domain_proba(tape, rev_s)?;
    let bce_s = bce_sum(tape, proba_s, 0.0)?;

    let xu = tape.leaf(unlabeled.x.clone(), vec![unlabeled.n, input_dim])?;
    let feats_u = model.features(tape, xu)?;
    let rev_u = tape.grad_reverse(feats_u, lambda)?;
    let proba_u = domain_head.domain_proba(tape, rev_u)?;
    let bce_u = bce_sum(tape, proba_u, 1.0)?;

    let total = tape.add(bce_s, bce_u)?;
    let domain_loss = tape.scalar_mul(total, 1.0 / (labeled.n_source + unlabeled.n) as f64)?;
    Ok((classification, domain_loss))
}
