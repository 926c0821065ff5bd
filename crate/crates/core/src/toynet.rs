//! Desk-scale multi-label classifier.
//!
//! One ReLU hidden layer followed by per-label sigmoids. The hidden
//! activations double as item embeddings. Gradients are derived by hand for
//! the full scaled loss, including the soft F1 and IOU factors, so the
//! training path can be checked against finite differences.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::EmbeddingVector;
use crate::lossmetrics::{self, LossBreakdown, MetricError, PredictionPair, SoftCounts, WeightVector, EPSILON};

#[derive(Debug, Error, PartialEq)]
pub enum ToyNetError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),
    #[error("non-finite parameter in {0}")]
    NonFiniteParameter(&'static str),
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("model json: {0}")]
    Json(String),
}

/// Two affine maps with ReLU then sigmoid. Weight matrices are row-major:
/// `w1[k * hidden_dim + j]` maps input `k` to hidden `j`, `w2[j * n_labels + i]`
/// maps hidden `j` to label `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_labels: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub pre_hidden: Vec<f64>,
    pub hidden: Vec<f64>,
    /// Unclipped sigmoid values.
    pub sigmoid: Vec<f64>,
    /// Sigmoid values clipped into `[EPSILON, 1 - EPSILON]`.
    pub outputs: Vec<f64>,
}

pub const PARAM_NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ToyModel {
    pub fn zeros(input_dim: usize, hidden_dim: usize, n_labels: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            n_labels,
            w1: vec![0.0; input_dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim * n_labels],
            b2: vec![0.0; n_labels],
        }
    }

    /// Uniform in `[-0.5, 0.5] / sqrt(fan_in)` for every parameter.
    pub fn random(input_dim: usize, hidden_dim: usize, n_labels: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(input_dim, hidden_dim, n_labels);
        let s1 = 1.0 / (input_dim.max(1) as f64).sqrt();
        let s2 = 1.0 / (hidden_dim.max(1) as f64).sqrt();
        for v in m.w1.iter_mut().chain(m.b1.iter_mut()) {
            *v = rng.gen_range(-0.5..=0.5) * s1;
        }
        for v in m.w2.iter_mut().chain(m.b2.iter_mut()) {
            *v = rng.gen_range(-0.5..=0.5) * s2;
        }
        m
    }

    pub fn seeded(input_dim: usize, hidden_dim: usize, n_labels: usize, seed: u64) -> Self {
        Self::random(input_dim, hidden_dim, n_labels, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 4] {
        [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 4] {
        [("w1", &mut self.w1), ("b1", &mut self.b1), ("w2", &mut self.w2), ("b2", &mut self.b2)]
    }

    pub fn validate(&self) -> Result<(), ToyNetError> {
        let expect = [
            self.input_dim * self.hidden_dim,
            self.hidden_dim,
            self.hidden_dim * self.n_labels,
            self.n_labels,
        ];
        for ((name, t), want) in self.tensors().into_iter().zip(expect) {
            if t.len() != want {
                return Err(ToyNetError::Json(format!("{name} has {} values, expected {want}", t.len())));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(ToyNetError::NonFiniteParameter(name));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward, ToyNetError> {
        if x.len() != self.input_dim {
            return Err(ToyNetError::Dimension { expected: self.input_dim, found: x.len() });
        }
        let h = self.hidden_dim;
        let mut pre_hidden = self.b1.clone();
        for (k, &xk) in x.iter().enumerate() {
            let row = &self.w1[k * h..(k + 1) * h];
            for (a, &w) in pre_hidden.iter_mut().zip(row) {
                *a += xk * w;
            }
        }
        let hidden: Vec<f64> = pre_hidden.iter().map(|&a| a.max(0.0)).collect();
        let l = self.n_labels;
        let mut logits = self.b2.clone();
        for (j, &hj) in hidden.iter().enumerate() {
            let row = &self.w2[j * l..(j + 1) * l];
            for (z, &w) in logits.iter_mut().zip(row) {
                *z += hj * w;
            }
        }
        let sig: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        let outputs = sig.iter().map(|&s| lossmetrics::clip(s)).collect();
        Ok(Forward { pre_hidden, hidden, sigmoid: sig, outputs })
    }

    /// Hidden-layer activations as the item embedding.
    pub fn embed(&self, x: &[f64]) -> Result<EmbeddingVector, ToyNetError> {
        let f = self.forward(x)?;
        let values = f.hidden.iter().map(|&v| v as f32).collect();
        EmbeddingVector::new(values).ok_or(ToyNetError::NonFiniteParameter("hidden"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ToyNetError> {
        let m: Self = serde_json::from_str(text).map_err(|e| ToyNetError::Json(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

/// Inputs with binary multi-label targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self, ToyNetError> {
        if inputs.len() != targets.len() {
            return Err(ToyNetError::Dimension { expected: inputs.len(), found: targets.len() });
        }
        if inputs.is_empty() {
            return Err(ToyNetError::EmptyBatch);
        }
        let (di, dt) = (inputs[0].len(), targets[0].len());
        for (x, t) in inputs.iter().zip(&targets) {
            if x.len() != di {
                return Err(ToyNetError::Dimension { expected: di, found: x.len() });
            }
            if t.len() != dt {
                return Err(ToyNetError::Dimension { expected: dt, found: t.len() });
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn n_labels(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }

    /// Label frequencies (fraction of samples carrying each label).
    pub fn label_frequencies(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.n_labels()];
        for t in &self.targets {
            for (acc, &v) in f.iter_mut().zip(t) {
                *acc += v;
            }
        }
        let n = self.len() as f64;
        f.iter_mut().for_each(|v| *v /= n);
        f
    }
}

/// Two linearly separable labels over a 4-dim input: label `i` is set
/// exactly when input coordinate `i` is positive, with a margin of 0.25.
/// The remaining two coordinates are noise.
pub fn synthetic_separable(samples: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(samples);
    let mut targets = Vec::with_capacity(samples);
    for _ in 0..samples {
        let labels = [rng.gen_bool(0.5), rng.gen_bool(0.5)];
        let mut x = Vec::with_capacity(4);
        for &l in &labels {
            let mag = rng.gen_range(0.25..1.0);
            x.push(if l { mag } else { -mag });
        }
        x.push(rng.gen_range(-1.0..1.0));
        x.push(rng.gen_range(-1.0..1.0));
        inputs.push(x);
        targets.push(labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect());
    }
    Dataset { inputs, targets }
}

/// Gradient record shaped like [`ToyModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    pub fn tensors(&self) -> [(&'static str, &[f64]); 4] {
        [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, t)| t.iter()).map(|g| g * g).sum::<f64>().sqrt()
    }
}

fn check_batch(model: &ToyModel, batch: &Dataset, weights: &WeightVector) -> Result<(), ToyNetError> {
    if batch.is_empty() {
        return Err(ToyNetError::EmptyBatch);
    }
    if batch.n_labels() != model.n_labels {
        return Err(ToyNetError::Dimension { expected: model.n_labels, found: batch.n_labels() });
    }
    if weights.len() != model.n_labels {
        return Err(ToyNetError::Dimension { expected: model.n_labels, found: weights.len() });
    }
    Ok(())
}

/// Batch loss evaluated through the plain metric functions.
pub fn loss(model: &ToyModel, batch: &Dataset, weights: &WeightVector) -> Result<LossBreakdown, ToyNetError> {
    check_batch(model, batch, weights)?;
    let pairs = batch
        .inputs
        .iter()
        .zip(&batch.targets)
        .map(|(x, t)| Ok(PredictionPair::new(model.forward(x)?.outputs, t.clone())?))
        .collect::<Result<Vec<_>, ToyNetError>>()?;
    Ok(lossmetrics::batch_loss(&pairs, weights)?)
}

/// Analytic gradient of the batch loss with respect to every parameter.
///
/// With `use_scaling` the objective is `B * (1 - F1) * (1 - IOU)` where `B`
/// is the mean weighted cross-entropy and F1/IOU are soft scores over the
/// whole batch; all three factors are differentiated. Without it the
/// objective is `B` alone.
pub fn gradients(
    model: &ToyModel,
    batch: &Dataset,
    weights: &WeightVector,
    use_scaling: bool,
) -> Result<(LossBreakdown, Gradients), ToyNetError> {
    check_batch(model, batch, weights)?;
    let forwards = batch.inputs.iter().map(|x| model.forward(x)).collect::<Result<Vec<_>, _>>()?;

    let n_samples = batch.len() as f64;
    let n_labels = model.n_labels as f64;
    let w = weights.values();

    let mut counts = SoftCounts::default();
    let mut bce = 0.0;
    for (f, t) in forwards.iter().zip(&batch.targets) {
        let mut s = 0.0;
        for ((&o, &ti), &wi) in f.outputs.iter().zip(t).zip(w) {
            s += wi * (ti * o.ln() + (1.0 - ti) * (1.0 - o).ln());
            counts.tp += o * ti;
            counts.fp += o * (1.0 - ti);
            counts.fn_ += (1.0 - o) * ti;
        }
        bce += -s / n_labels;
    }
    bce /= n_samples;
    let (f1, iou) = (counts.f1(), counts.iou());
    let (a, c) = (1.0 - f1, 1.0 - iou);
    let breakdown = LossBreakdown { bce, soft_f1: f1, soft_iou: iou, scaled: bce * a * c };

    // F1 = 2TP / E with E = sum(o) + sum(t); IOU = TP / D with D = TP + FP + FN.
    let e = 2.0 * counts.tp + counts.fp + counts.fn_;
    let d = counts.tp + counts.fp + counts.fn_;

    let mut grads = Gradients {
        w1: vec![0.0; model.w1.len()],
        b1: vec![0.0; model.b1.len()],
        w2: vec![0.0; model.w2.len()],
        b2: vec![0.0; model.b2.len()],
    };
    let (h, l) = (model.hidden_dim, model.n_labels);
    let mut delta = vec![0.0; l];
    let mut dhidden = vec![0.0; h];

    for ((f, t), x) in forwards.iter().zip(&batch.targets).zip(&batch.inputs) {
        for i in 0..l {
            let (o, ti) = (f.outputs[i], t[i]);
            let dbce = -w[i] * (ti / o - (1.0 - ti) / (1.0 - o)) / (n_samples * n_labels);
            let dloss_do = if use_scaling {
                let df1 = if e == 0.0 { 0.0 } else { (2.0 * ti * e - 2.0 * counts.tp) / (e * e) };
                let diou = if d == 0.0 { 0.0 } else { (ti * d - counts.tp * (1.0 - ti)) / (d * d) };
                dbce * a * c - bce * c * df1 - bce * a * diou
            } else {
                dbce
            };
            let s = f.sigmoid[i];
            let clipped = !(EPSILON..=1.0 - EPSILON).contains(&s);
            delta[i] = if clipped { 0.0 } else { dloss_do * s * (1.0 - s) };
        }
        for j in 0..h {
            let hj = f.hidden[j];
            let row = &mut grads.w2[j * l..(j + 1) * l];
            for (g, &di) in row.iter_mut().zip(&delta) {
                *g += hj * di;
            }
            let back: f64 = model.w2[j * l..(j + 1) * l].iter().zip(&delta).map(|(w, d)| w * d).sum();
            dhidden[j] = if f.pre_hidden[j] > 0.0 { back } else { 0.0 };
        }
        for (g, &di) in grads.b2.iter_mut().zip(&delta) {
            *g += di;
        }
        for (k, &xk) in x.iter().enumerate() {
            let row = &mut grads.w1[k * h..(k + 1) * h];
            for (g, &dj) in row.iter_mut().zip(&dhidden) {
                *g += xk * dj;
            }
        }
        for (g, &dj) in grads.b1.iter_mut().zip(&dhidden) {
            *g += dj;
        }
    }

    for (name, t) in grads.tensors() {
        if t.iter().any(|g| !g.is_finite()) {
            return Err(ToyNetError::NonFiniteGradient(name));
        }
    }
    Ok((breakdown, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub use_scaling: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { hidden_dim: 8, learning_rate: 5.0, epochs: 50, batch_size: 20, seed: 7, use_scaling: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training objective on the full dataset after the epoch's updates.
    pub loss: f64,
    pub soft_f1: f64,
    pub soft_iou: f64,
}

impl EpochRecord {
    /// `(1 - F1) * (1 - IOU)`.
    pub fn scale_factor(&self) -> f64 {
        (1.0 - self.soft_f1) * (1.0 - self.soft_iou)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ToyModel,
    pub history: Vec<EpochRecord>,
}

/// Minibatch gradient descent. Initialization and per-epoch shuffling draw
/// from one generator seeded by `config.seed`.
pub fn train(dataset: &Dataset, config: &TrainConfig, weights: &WeightVector) -> Result<TrainOutcome, ToyNetError> {
    if config.epochs == 0 || config.batch_size == 0 || config.hidden_dim == 0 {
        return Err(ToyNetError::Config("epochs, batch_size and hidden_dim must be positive".into()));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(ToyNetError::Config(format!("learning rate {}", config.learning_rate)));
    }
    if dataset.is_empty() {
        return Err(ToyNetError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ToyModel::random(dataset.input_dim(), config.hidden_dim, dataset.n_labels(), &mut rng);
    check_batch(&model, dataset, weights)?;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch = dataset.subset(chunk);
            let (_, g) = gradients(&model, &batch, weights, config.use_scaling).map_err(|e| match e {
                ToyNetError::NonFiniteGradient(_) => ToyNetError::Diverged(epoch),
                other => other,
            })?;
            for ((_, p), (_, gt)) in model.tensors_mut().into_iter().zip(g.tensors()) {
                for (pv, gv) in p.iter_mut().zip(gt) {
                    *pv -= config.learning_rate * gv;
                }
            }
        }
        let eval = loss(&model, dataset, weights)?;
        let objective = if config.use_scaling { eval.scaled } else { eval.bce };
        if !objective.is_finite() {
            return Err(ToyNetError::Diverged(epoch));
        }
        history.push(EpochRecord { epoch, loss: objective, soft_f1: eval.soft_f1, soft_iou: eval.soft_iou });
    }
    Ok(TrainOutcome { model, history })
}

/// `epoch,loss,soft_f1,soft_iou` with full-precision values.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,soft_f1,soft_iou\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.loss, r.soft_f1, r.soft_iou);
    }
    out
}
