//! The optimization loop: annealed SGD with momentum over paper-faithful
//! minibatches, validation-based early stopping, and method dispatch.
//!
//! Each iteration samples s/2 source + s/2 labeled-target examples plus 2s
//! unlabeled-target examples, builds a fresh tape, backpropagates the
//! selected objective, and applies one momentum step to every parameter.
//! Every `eval_every` iterations the run is scored on the target validation
//! split; the best-scoring checkpoint is kept and training stops after
//! `patience` checks without improvement.

use crate::autodiff::Tape;
use crate::data::SsdaDataset;
use crate::model::{init_model, HeadKind, ModelDims, ModelParams};
use crate::objectives::{
    dann_step_losses, ent_step_losses, mme_step_losses, row_entropies, DomainHeadParams,
    LabeledBatch, MinimaxLossSpec, ObjectiveError, UnlabeledBatch,
};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "s+t")]
    SourcePlusTarget,
    #[serde(rename = "ent")]
    Ent,
    #[serde(rename = "dann")]
    Dann,
    #[serde(rename = "mme")]
    Mme,
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "s+t" => Some(Method::SourcePlusTarget),
            "ent" => Some(Method::Ent),
            "dann" => Some(Method::Dann),
            "mme" => Some(Method::Mme),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::SourcePlusTarget => write!(f, "s+t"),
            Method::Ent => write!(f, "ent"),
            Method::Dann => write!(f, "dann"),
            Method::Mme => write!(f, "mme"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub head: HeadKind,
    pub lambda: f64,
    pub temperature: f64,
    /// Labeled batch size s; each step also draws 2s unlabeled examples.
    pub batch_size: usize,
    pub lr0: f64,
    /// Learning-rate multiplier for the classifier head (and the DANN
    /// domain head): freshly initialized layers train faster than the
    /// feature extractor, mirroring the 0.01-vs-0.001 split used with
    /// pretrained backbones.
    pub head_lr_scale: f64,
    pub momentum: f64,
    pub anneal_alpha: f64,
    pub anneal_beta: f64,
    pub max_iters: usize,
    pub eval_every: usize,
    /// Early-stop window, counted in validation checks.
    pub patience: usize,
    pub hidden_dims: Vec<usize>,
    pub feat_dim: usize,
    pub domain_hidden_dim: usize,
    pub normalize_weights: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        TrainConfig {
            method,
            head: HeadKind::Cosine,
            lambda: 0.3,
            temperature: 0.05,
            batch_size: 8,
            lr0: 0.01,
            head_lr_scale: 1.0,
            momentum: 0.9,
            anneal_alpha: 10.0,
            anneal_beta: 0.75,
            max_iters: 10_000,
            eval_every: 50,
            patience: 60,
            hidden_dims: vec![64, 64],
            feat_dim: 16,
            domain_hidden_dim: 64,
            normalize_weights: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.batch_size % 2 != 0 {
            return Err(TrainError::Config(format!(
                "batch size must be even and positive, got {}",
                self.batch_size
            )));
        }
        if !self.lr0.is_finite() || self.lr0 <= 0.0 {
            return Err(TrainError::Config(format!(
                "lr0 must be a positive finite value, got {}",
                self.lr0
            )));
        }
        if !self.head_lr_scale.is_finite() || self.head_lr_scale <= 0.0 {
            return Err(TrainError::Config(format!(
                "head_lr_scale must be a positive finite value, got {}",
                self.head_lr_scale
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(TrainError::Config(format!(
                "lambda must be a nonnegative finite value, got {}",
                self.lambda
            )));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(TrainError::Config(format!(
                "temperature must be a positive finite value, got {}",
                self.temperature
            )));
        }
        if !self.anneal_alpha.is_finite() || !self.anneal_beta.is_finite() {
            return Err(TrainError::Config(
                "annealing constants must be finite".into(),
            ));
        }
        if self.max_iters == 0 || self.eval_every == 0 {
            return Err(TrainError::Config(
                "max_iters and eval_every must be positive".into(),
            ));
        }
        if self.feat_dim < 2 {
            return Err(TrainError::Config(format!(
                "feat_dim must be at least 2, got {}",
                self.feat_dim
            )));
        }
        Ok(())
    }
}

/// One evaluation snapshot along a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: usize,
    pub train_loss: f64,
    pub unlabeled_entropy_mean: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain_loss: Option<f64>,
}

#[derive(Debug)]
pub enum TrainError {
    Config(String),
    Objective(ObjectiveError),
    EmptyEvalSet,
    /// Training produced a non-finite loss; carries the failing iteration
    /// and everything recorded up to that point.
    NonFinite {
        iter: usize,
        records: Vec<MetricsRecord>,
    },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Config(m) => write!(f, "config error: {m}"),
            TrainError::Objective(e) => write!(f, "{e}"),
            TrainError::EmptyEvalSet => write!(f, "evaluation on an empty example set"),
            TrainError::NonFinite { iter, .. } => {
                write!(f, "non-finite loss at iteration {iter}")
            }
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ObjectiveError> for TrainError {
    fn from(e: ObjectiveError) -> Self {
        TrainError::Objective(e)
    }
}

impl From<crate::model::ModelError> for TrainError {
    fn from(e: crate::model::ModelError) -> Self {
        TrainError::Objective(ObjectiveError::Model(e))
    }
}

/// Result of a completed run: the best checkpoint by validation accuracy
/// and the full metrics trajectory.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub records: Vec<MetricsRecord>,
    pub best_val: f64,
    pub test_at_best: f64,
    pub iters_run: usize,
}

/// Annealed learning rate: lr0 · (1 + α·p)^(−β) at progress p ∈ [0, 1].
pub fn lr_at(progress: f64, config: &TrainConfig) -> f64 {
    debug_assert!((0.0..=1.0).contains(&progress));
    config.lr0 * (1.0 + config.anneal_alpha * progress).powf(-config.anneal_beta)
}

/// One SGD-with-momentum update: v ← momentum·v + g; θ ← θ − lr·v.
pub fn sgd_momentum_step(
    params: &mut [&mut Vec<f64>],
    grads: &[Vec<f64>],
    velocity: &mut [Vec<f64>],
    lr: f64,
    momentum: f64,
) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), velocity.len());
    for ((buf, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for i in 0..buf.len() {
            v[i] = momentum * v[i] + g[i];
            buf[i] -= lr * v[i];
        }
    }
}

/// Sample a training step's minibatches: s/2 source + s/2 labeled target
/// (with replacement only when a pool is smaller than its half), plus 2s
/// unlabeled target examples.
pub fn compose_batch(
    dataset: &SsdaDataset,
    s: usize,
    rng: &mut Rng,
) -> Result<(LabeledBatch, UnlabeledBatch), TrainError> {
    if s == 0 || s % 2 != 0 {
        return Err(TrainError::Config(format!(
            "batch size must be even, got {s}"
        )));
    }
    if dataset.source_labeled.is_empty()
        || dataset.target_labeled.is_empty()
        || dataset.target_unlabeled.is_empty()
    {
        return Err(TrainError::Config("dataset has an empty partition".into()));
    }
    let half = s / 2;
    let d = dataset.dim;
    let mut x = Vec::with_capacity(s * d);
    let mut y = Vec::with_capacity(s);
    for idx in rng.sample_indices(dataset.source_labeled.len(), half) {
        let e = &dataset.source_labeled[idx];
        x.extend_from_slice(&e.x);
        y.push(e.y);
    }
    for idx in rng.sample_indices(dataset.target_labeled.len(), half) {
        let e = &dataset.target_labeled[idx];
        x.extend_from_slice(&e.x);
        y.push(e.y);
    }
    let labeled = LabeledBatch {
        x,
        y,
        n: s,
        n_source: half,
    };

    let mut xu = Vec::with_capacity(2 * s * d);
    for idx in rng.sample_indices(dataset.target_unlabeled.len(), 2 * s) {
        xu.extend_from_slice(&dataset.target_unlabeled[idx]);
    }
    let unlabeled = UnlabeledBatch { x: xu, n: 2 * s };
    Ok((labeled, unlabeled))
}

/// Fraction of argmax-correct predictions; ties break to the lowest index.
pub fn evaluate(model: &ModelParams, examples: &[(Vec<f64>, usize)]) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyEvalSet);
    }
    let flat: Vec<f64> = examples
        .iter()
        .flat_map(|(x, _)| x.iter().copied())
        .collect();
    let predicted = model.predict_classes(&flat, examples.len())?;
    let correct = predicted
        .iter()
        .zip(examples)
        .filter(|(p, (_, y))| **p == *y)
        .count();
    Ok(correct as f64 / examples.len() as f64)
}

fn mean_unlabeled_entropy(model: &ModelParams, dataset: &SsdaDataset) -> Result<f64, TrainError> {
    let n = dataset.target_unlabeled.len();
    let flat: Vec<f64> = dataset.target_unlabeled.iter().flatten().copied().collect();
    let probs = model.predict_proba(&flat, n)?;
    let ents = row_entropies(&probs, dataset.num_classes);
    Ok(ents.iter().sum::<f64>() / n as f64)
}

fn is_non_finite(e: &ObjectiveError) -> bool {
    use crate::autodiff::TapeError;
    use crate::model::ModelError;
    matches!(
        e,
        ObjectiveError::Tape(TapeError::NonFinite { .. })
            | ObjectiveError::Model(ModelError::Tape(TapeError::NonFinite { .. }))
    )
}

type StepParts = (
    crate::model::BoundModel,
    Option<crate::objectives::BoundDomainHead>,
    crate::autodiff::TensorId,
    f64,
    Option<f64>,
);

#[allow(clippy::too_many_arguments)]
fn build_step(
    tape: &mut Tape,
    model: &ModelParams,
    domain_head: Option<&DomainHeadParams>,
    config: &TrainConfig,
    input_dim: usize,
    labeled: &LabeledBatch,
    unlabeled: &UnlabeledBatch,
    spec: MinimaxLossSpec,
) -> Result<StepParts, ObjectiveError> {
    let bound = model.bind(tape)?;
    let bound_head = match domain_head {
        Some(h) => Some(h.bind(tape)?),
        None => None,
    };
    let (loss_id, loss_value, domain_loss_value) = match config.method {
        Method::SourcePlusTarget => {
            let x = tape
                .leaf(labeled.x.clone(), vec![labeled.n, input_dim])
                .map_err(ObjectiveError::Tape)?;
            let probs = bound.probs(tape, x)?;
            let ce = crate::objectives::cross_entropy_loss(tape, probs, &labeled.y)?;
            (ce, tape.value(ce), None)
        }
        Method::Mme => {
            let (c, adv) = mme_step_losses(tape, &bound, labeled, unlabeled, spec, input_dim)?;
            let total = tape.add(c, adv).map_err(ObjectiveError::Tape)?;
            (total, tape.value(total), None)
        }
        Method::Ent => {
            let total =
                ent_step_losses(tape, &bound, labeled, unlabeled, config.lambda, input_dim)?;
            (total, tape.value(total), None)
        }
        Method::Dann => {
            let head = bound_head.as_ref().expect("dann binds a domain head");
            let (c, dl) = dann_step_losses(
                tape,
                &bound,
                head,
                labeled,
                unlabeled,
                config.lambda,
                input_dim,
            )?;
            let total = tape.add(c, dl).map_err(ObjectiveError::Tape)?;
            (total, tape.value(total), Some(tape.value(dl)))
        }
    };
    Ok((bound, bound_head, loss_id, loss_value, domain_loss_value))
}

/// Run the full training loop. Deterministic given (dataset, config).
pub fn train(dataset: &SsdaDataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    dataset
        .validate()
        .map_err(|e| TrainError::Config(e.to_string()))?;

    let dims = ModelDims {
        input_dim: dataset.dim,
        hidden: config.hidden_dims.clone(),
        feat_dim: config.feat_dim,
        num_classes: dataset.num_classes,
    };
    let mut model = init_model(config.seed, &dims, config.head, config.temperature);
    if let crate::model::ClassifierParams::Cosine(c) = &mut model.head {
        c.normalize_weights = config.normalize_weights;
    }
    let mut domain_head = (config.method == Method::Dann)
        .then(|| DomainHeadParams::init(config.seed, config.feat_dim, config.domain_hidden_dim));

    let mut batch_rng = Rng::stream(config.seed, 0x6261746368);
    let spec = MinimaxLossSpec::new(config.lambda).map_err(TrainError::Objective)?;

    let val_examples: Vec<(Vec<f64>, usize)> = dataset
        .target_val
        .iter()
        .map(|e| (e.x.clone(), e.y))
        .collect();
    let test_examples: Vec<(Vec<f64>, usize)> = dataset
        .target_test()
        .map(|(x, y)| (x.to_vec(), y))
        .collect();

    let mut velocity: Vec<Vec<f64>> = {
        let mut m = model.clone();
        let mut v: Vec<Vec<f64>> = m
            .param_buffers_mut()
            .iter()
            .map(|b| vec![0.0; b.len()])
            .collect();
        if let Some(h) = &mut domain_head {
            v.extend(h.param_buffers_mut().iter().map(|b| vec![0.0; b.len()]));
        }
        v
    };

    let mut records: Vec<MetricsRecord> = Vec::new();
    let mut best: Option<(ModelParams, f64, f64)> = None;
    let mut checks_without_improvement = 0usize;
    let mut iters_run = 0usize;

    for iter in 0..config.max_iters {
        let lr = lr_at(iter as f64 / config.max_iters as f64, config);
        let (labeled, unlabeled) = compose_batch(dataset, config.batch_size, &mut batch_rng)?;

        // Any ∞/NaN surfacing during the forward pass (including exploded
        // parameters failing to bind) is a numerical abort, not a config
        // error: hand back the trajectory recorded so far.
        let mut tape = Tape::new();
        let step = build_step(
            &mut tape,
            &model,
            domain_head.as_ref(),
            config,
            dataset.dim,
            &labeled,
            &unlabeled,
            spec,
        );
        let (bound, bound_head, loss_id, loss_value, domain_loss_value) = match step {
            Ok(parts) => parts,
            Err(e) if is_non_finite(&e) => {
                return Err(TrainError::NonFinite { iter, records });
            }
            Err(e) => return Err(e.into()),
        };

        if !loss_value.is_finite() {
            return Err(TrainError::NonFinite { iter, records });
        }

        if iter % config.eval_every == 0 {
            let scores = (|| -> Result<(f64, f64, f64), TrainError> {
                Ok((
                    evaluate(&model, &val_examples)?,
                    evaluate(&model, &test_examples)?,
                    mean_unlabeled_entropy(&model, dataset)?,
                ))
            })();
            let (val_accuracy, test_accuracy, entropy) = match scores {
                Ok(v) => v,
                Err(TrainError::Objective(e)) if is_non_finite(&e) => {
                    return Err(TrainError::NonFinite { iter, records });
                }
                Err(e) => return Err(e),
            };
            records.push(MetricsRecord {
                iter,
                train_loss: loss_value,
                unlabeled_entropy_mean: entropy,
                val_accuracy,
                test_accuracy,
                lr,
                domain_loss: domain_loss_value,
            });
            // Ties go to the later checkpoint: the adversarial methods keep
            // improving on test while the coarse validation set plateaus.
            // Only a strict improvement resets the early-stop window.
            let strictly_better = best.as_ref().is_none_or(|(_, bv, _)| val_accuracy > *bv);
            let ties_best = best.as_ref().is_none_or(|(_, bv, _)| val_accuracy >= *bv);
            if ties_best {
                best = Some((model.clone(), val_accuracy, test_accuracy));
            }
            if strictly_better {
                checks_without_improvement = 0;
            } else {
                checks_without_improvement += 1;
                if checks_without_improvement >= config.patience {
                    iters_run = iter + 1;
                    break;
                }
            }
        }

        tape.backward(loss_id).map_err(ObjectiveError::Tape)?;
        let mut grads: Vec<Vec<f64>> = bound
            .param_ids
            .iter()
            .map(|&id| {
                tape.grad(id)
                    .expect("loss reaches every model parameter")
                    .to_vec()
            })
            .collect();
        if let Some(head) = &bound_head {
            grads.extend(head.param_ids.iter().map(|&id| {
                tape.grad(id)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; tape.data(id).len()])
            }));
        }
        let split = model.extractor_buffer_count();
        let mut buffers = model.param_buffers_mut();
        if let Some(h) = &mut domain_head {
            buffers.extend(h.param_buffers_mut());
        }
        let (extractor_buffers, head_buffers) = buffers.split_at_mut(split);
        let (vel_extractor, vel_head) = velocity.split_at_mut(split);
        sgd_momentum_step(
            extractor_buffers,
            &grads[..split],
            vel_extractor,
            lr,
            config.momentum,
        );
        sgd_momentum_step(
            head_buffers,
            &grads[split..],
            vel_head,
            lr * config.head_lr_scale,
            config.momentum,
        );
        iters_run = iter + 1;
    }

    let (best_model, best_val, test_at_best) = best.expect("at least one validation check ran");
    Ok(TrainOutcome {
        model: best_model,
        records,
        best_val,
        test_at_best,
        iters_run,
    })
}
