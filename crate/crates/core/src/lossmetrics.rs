//! Training losses and evaluation metrics for multi-label prediction.
//!
//! Loss path: per-label weights from label frequencies, a weighted binary
//! cross-entropy averaged over labels, and a multiplicative scaling by
//! `(1 - F1) * (1 - IOU)` where F1 and IOU are computed from probabilities
//! rather than thresholded predictions.
//!
//! Metric path: IOU, precision and recall over label sets, and Recall@K over
//! ranked result lists.

use std::collections::{BTreeSet, HashSet};
use std::hash::Hash;

use thiserror::Error;

/// Outputs are clipped into `[EPSILON, 1 - EPSILON]` before any logarithm.
pub const EPSILON: f64 = 1e-7;

/// Additive margin on the largest frequency when deriving label weights.
pub const WEIGHT_MARGIN: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("output {value} at position {index} outside [0, 1]")]
    OutputRange { index: usize, value: f64 },
    #[error("target {value} at position {index} is not 0 or 1")]
    NonBinaryTarget { index: usize, value: f64 },
    #[error("frequency {value} at position {index} outside (0, 1]")]
    Frequency { index: usize, value: f64 },
    #[error("k must be positive")]
    ZeroK,
    #[error("relevant set is empty")]
    NoRelevant,
    #[error("ranked list contains duplicate entries")]
    DuplicateRanked,
}

pub fn clip(o: f64) -> f64 {
    o.clamp(EPSILON, 1.0 - EPSILON)
}

/// Per-label probabilities and binary targets for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPair {
    outputs: Vec<f64>,
    targets: Vec<f64>,
}

impl PredictionPair {
    pub fn new(outputs: Vec<f64>, targets: Vec<f64>) -> Result<Self, MetricError> {
        if outputs.len() != targets.len() {
            return Err(MetricError::LengthMismatch(outputs.len(), targets.len()));
        }
        if outputs.is_empty() {
            return Err(MetricError::Empty);
        }
        for (index, (&o, &t)) in outputs.iter().zip(&targets).enumerate() {
            if !o.is_finite() || !t.is_finite() {
                return Err(MetricError::NonFinite(index));
            }
            if !(0.0..=1.0).contains(&o) {
                return Err(MetricError::OutputRange { index, value: o });
            }
            if t != 0.0 && t != 1.0 {
                return Err(MetricError::NonBinaryTarget { index, value: t });
            }
        }
        Ok(Self { outputs, targets })
    }

    /// Builds a pair from boolean targets.
    pub fn from_bools(outputs: Vec<f64>, targets: &[bool]) -> Result<Self, MetricError> {
        Self::new(outputs, targets.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect())
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

/// Positive per-label loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Wraps explicit weights; all must be finite and positive.
    pub fn new(weights: Vec<f64>) -> Result<Self, MetricError> {
        if weights.is_empty() {
            return Err(MetricError::Empty);
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w <= 0.0) {
            return Err(MetricError::NonFinite(i));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `w_i = (max_j f_j + 0.01) - f_i`. Rare labels get the largest weights.
pub fn label_weights(frequencies: &[f64]) -> Result<WeightVector, MetricError> {
    if frequencies.is_empty() {
        return Err(MetricError::Empty);
    }
    for (index, &value) in frequencies.iter().enumerate() {
        if !(value > 0.0 && value <= 1.0) {
            return Err(MetricError::Frequency { index, value });
        }
    }
    let max = frequencies.iter().copied().fold(f64::MIN, f64::max);
    Ok(WeightVector(frequencies.iter().map(|&f| (max + WEIGHT_MARGIN) - f).collect()))
}

/// Weighted binary cross-entropy, mean over labels, natural log.
pub fn weighted_bce(pair: &PredictionPair, weights: &WeightVector) -> Result<f64, MetricError> {
    if pair.len() != weights.len() {
        return Err(MetricError::LengthMismatch(pair.len(), weights.len()));
    }
    let n = pair.len() as f64;
    let sum: f64 = pair
        .outputs
        .iter()
        .zip(&pair.targets)
        .zip(&weights.0)
        .map(|((&o, &t), &w)| {
            let o = clip(o);
            w * (t * o.ln() + (1.0 - t) * (1.0 - o).ln())
        })
        .sum();
    Ok(-sum / n)
}

/// Probability-weighted true positives, false positives and false negatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SoftCounts {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
}

impl SoftCounts {
    pub fn accumulate(&mut self, pair: &PredictionPair) {
        for (&o, &t) in pair.outputs.iter().zip(&pair.targets) {
            self.tp += o * t;
            self.fp += o * (1.0 - t);
            self.fn_ += (1.0 - o) * t;
        }
    }

    /// `tp / (tp + fp + fn)`, or 1 when all counts are zero.
    pub fn iou(&self) -> f64 {
        let d = self.tp + self.fp + self.fn_;
        if d == 0.0 {
            1.0
        } else {
            self.tp / d
        }
    }

    /// `2 tp / (2 tp + fp + fn)`, or 1 when all counts are zero.
    pub fn f1(&self) -> f64 {
        let d = 2.0 * self.tp + self.fp + self.fn_;
        if d == 0.0 {
            1.0
        } else {
            2.0 * self.tp / d
        }
    }
}

pub fn soft_counts(pair: &PredictionPair) -> SoftCounts {
    let mut c = SoftCounts::default();
    c.accumulate(pair);
    c
}

pub fn soft_f1(pair: &PredictionPair) -> f64 {
    soft_counts(pair).f1()
}

pub fn soft_iou(pair: &PredictionPair) -> f64 {
    soft_counts(pair).iou()
}

/// `weighted_bce * (1 - soft_f1) * (1 - soft_iou)` for one sample.
pub fn scaled_loss(pair: &PredictionPair, weights: &WeightVector) -> Result<f64, MetricError> {
    let base = weighted_bce(pair, weights)?;
    let counts = soft_counts(pair);
    Ok(base * (1.0 - counts.f1()) * (1.0 - counts.iou()))
}

/// Components of a batch loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Mean of per-sample weighted cross-entropies.
    pub bce: f64,
    pub soft_f1: f64,
    pub soft_iou: f64,
    /// `bce * (1 - soft_f1) * (1 - soft_iou)`.
    pub scaled: f64,
}

/// Batch loss: per-sample cross-entropies are averaged; soft F1/IOU are
/// computed once over the whole batch's concatenated outputs.
pub fn batch_loss(samples: &[PredictionPair], weights: &WeightVector) -> Result<LossBreakdown, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut counts = SoftCounts::default();
    let mut bce = 0.0;
    for s in samples {
        bce += weighted_bce(s, weights)?;
        counts.accumulate(s);
    }
    bce /= samples.len() as f64;
    let (f1, iou) = (counts.f1(), counts.iou());
    Ok(LossBreakdown { bce, soft_f1: f1, soft_iou: iou, scaled: bce * (1.0 - f1) * (1.0 - iou) })
}

/// Hard counts over label sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SetCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn set_counts<T: Ord>(predicted: &BTreeSet<T>, actual: &BTreeSet<T>) -> SetCounts {
    let tp = predicted.intersection(actual).count();
    SetCounts { tp, fp: predicted.len() - tp, fn_: actual.len() - tp }
}

fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Intersection over union of two label sets; 1 when both are empty.
pub fn hard_iou<T: Ord>(predicted: &BTreeSet<T>, actual: &BTreeSet<T>) -> f64 {
    let c = set_counts(predicted, actual);
    ratio_or_one(c.tp, c.tp + c.fp + c.fn_)
}

/// F-score of two label sets; 1 when both are empty.
pub fn hard_f1<T: Ord>(predicted: &BTreeSet<T>, actual: &BTreeSet<T>) -> f64 {
    let c = set_counts(predicted, actual);
    ratio_or_one(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

/// `(precision, recall)`; each is 1 when its denominator is 0.
pub fn precision_recall<T: Ord>(predicted: &BTreeSet<T>, actual: &BTreeSet<T>) -> (f64, f64) {
    let c = set_counts(predicted, actual);
    (ratio_or_one(c.tp, c.tp + c.fp), ratio_or_one(c.tp, c.tp + c.fn_))
}

/// Label indices whose output reaches `threshold`.
pub fn predicted_labels(outputs: &[f64], threshold: f64) -> BTreeSet<usize> {
    outputs.iter().enumerate().filter(|(_, &o)| o >= threshold).map(|(i, _)| i).collect()
}

/// Fraction of `relevant` found in the first `k` entries of `ranked`.
pub fn recall_at_k<T: Eq + Hash>(ranked: &[T], relevant: &HashSet<T>, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    if relevant.is_empty() {
        return Err(MetricError::NoRelevant);
    }
    let mut seen = HashSet::with_capacity(ranked.len());
    if !ranked.iter().all(|r| seen.insert(r)) {
        return Err(MetricError::DuplicateRanked);
    }
    let hits = ranked.iter().take(k).filter(|r| relevant.contains(r)).count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// Recall@K for every `k` in `1..=max_k`, averaged over queries.
pub fn mean_recall_curve<T: Eq + Hash>(
    queries: &[(Vec<T>, HashSet<T>)],
    max_k: usize,
) -> Result<Vec<f64>, MetricError> {
    if queries.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut curve = vec![0.0; max_k];
    for (ranked, relevant) in queries {
        for (k, slot) in curve.iter_mut().enumerate() {
            *slot += recall_at_k(ranked, relevant, k + 1)?;
        }
    }
    let n = queries.len() as f64;
    curve.iter_mut().for_each(|v| *v /= n);
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(items: &[&'static str]) -> BTreeSet<&'static str> {
        items.iter().copied().collect()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn label_weights_examples() {
        let w = label_weights(&[1.0 / 3.0; 3]).unwrap();
        assert!(w.values().iter().all(|&x| close(x, 0.01, 1e-12)));
        let w = label_weights(&[0.5, 0.3, 0.2]).unwrap();
        for (got, want) in w.values().iter().zip([0.01, 0.21, 0.31]) {
            assert!(close(*got, want, 1e-12), "{got} vs {want}");
        }
        assert!(close(label_weights(&[1.0]).unwrap().values()[0], 0.01, 1e-15));
        assert_eq!(label_weights(&[]), Err(MetricError::Empty));
        assert!(label_weights(&[0.0, 0.5]).is_err());
        assert!(label_weights(&[1.5]).is_err());
    }

    #[test]
    fn weighted_bce_examples() {
        let perfect = PredictionPair::new(vec![1.0 - EPSILON, EPSILON], vec![1.0, 0.0]).unwrap();
        assert!(weighted_bce(&perfect, &WeightVector::uniform(2)).unwrap() <= 1e-6);

        let half = PredictionPair::new(vec![0.5], vec![1.0]).unwrap();
        let w = WeightVector::new(vec![2.0]).unwrap();
        assert!(close(weighted_bce(&half, &w).unwrap(), 2.0 * 2f64.ln(), 1e-12));
        assert!(close(2.0 * 2f64.ln(), 1.386294, 1e-6));

        assert_eq!(weighted_bce(&half, &WeightVector::uniform(2)), Err(MetricError::LengthMismatch(1, 2)));
    }

    #[test]
    fn clipping_keeps_loss_finite() {
        let p = PredictionPair::new(vec![0.0, 1.0], vec![1.0, 0.0]).unwrap();
        let l = weighted_bce(&p, &WeightVector::uniform(2)).unwrap();
        assert!(l.is_finite());
        assert!(close(l, -(EPSILON.ln()), 1e-9));
    }

    #[test]
    fn pair_validation() {
        assert!(matches!(PredictionPair::new(vec![0.5], vec![1.0, 0.0]), Err(MetricError::LengthMismatch(1, 2))));
        assert!(matches!(PredictionPair::new(vec![f64::NAN], vec![1.0]), Err(MetricError::NonFinite(0))));
        assert!(matches!(PredictionPair::new(vec![1.2], vec![1.0]), Err(MetricError::OutputRange { .. })));
        assert!(matches!(PredictionPair::new(vec![0.2], vec![0.5]), Err(MetricError::NonBinaryTarget { .. })));
    }

    #[test]
    fn soft_count_examples() {
        let p = PredictionPair::new(vec![0.8, 0.4], vec![1.0, 0.0]).unwrap();
        let c = soft_counts(&p);
        assert!(close(c.tp, 0.8, 1e-15) && close(c.fp, 0.4, 1e-15) && close(c.fn_, 0.2, 1e-15));
        assert!(close(soft_iou(&p), 0.8 / 1.4, 1e-12));
        assert!(close(soft_iou(&p), 0.571429, 1e-6));
        assert!(close(soft_f1(&p), 1.6 / 2.2, 1e-12));
        assert!(close(soft_f1(&p), 0.727273, 1e-6));

        let exact = PredictionPair::new(vec![1.0, 0.0, 1.0], vec![1.0, 0.0, 1.0]).unwrap();
        let c = soft_counts(&exact);
        assert_eq!((c.fp, c.fn_), (0.0, 0.0));
        assert_eq!((soft_f1(&exact), soft_iou(&exact)), (1.0, 1.0));

        let zero_t = PredictionPair::new(vec![0.3, 0.9], vec![0.0, 0.0]).unwrap();
        let c = soft_counts(&zero_t);
        assert_eq!((c.tp, c.fn_), (0.0, 0.0));

        let rejected = PredictionPair::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert_eq!((soft_f1(&rejected), soft_iou(&rejected)), (1.0, 1.0));
    }

    #[test]
    fn scaled_loss_examples() {
        let w = WeightVector::uniform(2);
        let perfect = PredictionPair::new(vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(scaled_loss(&perfect, &w).unwrap(), 0.0);

        let wrong = PredictionPair::new(vec![EPSILON, 1.0 - EPSILON], vec![1.0, 0.0]).unwrap();
        let base = weighted_bce(&wrong, &w).unwrap();
        assert!(close(scaled_loss(&wrong, &w).unwrap(), base, base * 1e-6));

        let p = PredictionPair::new(vec![0.8, 0.4], vec![1.0, 0.0]).unwrap();
        let base = -(0.8f64.ln() + 0.6f64.ln()) / 2.0;
        let want = base * (1.0 - 1.6 / 2.2) * (1.0 - 0.8 / 1.4);
        assert!(close(scaled_loss(&p, &w).unwrap(), want, 1e-12));
    }

    #[test]
    fn batch_loss_uses_batch_counts() {
        let w = WeightVector::uniform(2);
        let a = PredictionPair::new(vec![0.8, 0.4], vec![1.0, 0.0]).unwrap();
        let b = PredictionPair::new(vec![0.1, 0.7], vec![0.0, 1.0]).unwrap();
        let l = batch_loss(&[a.clone(), b.clone()], &w).unwrap();
        let bce = (weighted_bce(&a, &w).unwrap() + weighted_bce(&b, &w).unwrap()) / 2.0;
        let tp = 0.8 + 0.7;
        let fp = 0.4 + 0.1;
        let fn_ = 0.2 + 0.3;
        assert!(close(l.bce, bce, 1e-15));
        assert!(close(l.soft_iou, tp / (tp + fp + fn_), 1e-15));
        assert!(close(l.soft_f1, 2.0 * tp / (2.0 * tp + fp + fn_), 1e-15));
        assert!(close(l.scaled, bce * (1.0 - l.soft_f1) * (1.0 - l.soft_iou), 1e-15));
        assert_eq!(batch_loss(&[], &w), Err(MetricError::Empty));
    }

    #[test]
    fn set_metric_examples() {
        assert_eq!(hard_iou(&set(&["A", "B"]), &set(&["B", "C"])), 1.0 / 3.0);
        assert_eq!(hard_iou(&set(&["A", "B"]), &set(&["A", "B"])), 1.0);
        assert_eq!(hard_iou(&set(&["A"]), &set(&["B"])), 0.0);
        assert_eq!(hard_iou(&set(&[]), &set(&[])), 1.0);

        assert_eq!(precision_recall(&set(&["A", "B"]), &set(&["B", "C"])), (0.5, 0.5));
        assert_eq!(precision_recall(&set(&[]), &set(&["A"])), (1.0, 0.0));
        assert_eq!(precision_recall(&set(&["A"]), &set(&[])), (0.0, 1.0));
    }

    #[test]
    fn recall_at_k_examples() {
        let ranked = ["x", "y", "r", "z"];
        let rel: HashSet<_> = ["r"].into_iter().collect();
        assert_eq!(recall_at_k(&ranked, &rel, 2).unwrap(), 0.0);
        assert_eq!(recall_at_k(&ranked, &rel, 3).unwrap(), 1.0);
        let rel: HashSet<_> = ["x", "y"].into_iter().collect();
        assert_eq!(recall_at_k(&ranked, &rel, 2).unwrap(), 1.0);
        assert_eq!(recall_at_k(&ranked, &rel, 100).unwrap(), 1.0);
        assert_eq!(recall_at_k(&ranked, &HashSet::new(), 1), Err(MetricError::NoRelevant));
        assert_eq!(recall_at_k(&ranked, &rel, 0), Err(MetricError::ZeroK));
        assert_eq!(recall_at_k(&["a", "a"], &rel, 1), Err(MetricError::DuplicateRanked));
    }

    #[test]
    fn recall_curve_averages() {
        let q = vec![
            (vec![1, 2, 3], [3].into_iter().collect::<HashSet<_>>()),
            (vec![4, 5, 6], [4, 6].into_iter().collect()),
        ];
        let curve = mean_recall_curve(&q, 3).unwrap();
        assert_eq!(curve, vec![0.25, 0.25, 1.0]);
    }

    fn pair_strategy() -> impl Strategy<Value = (PredictionPair, WeightVector)> {
        (1usize..12).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.0f64..=1.0, n),
                proptest::collection::vec(any::<bool>(), n),
                proptest::collection::vec(0.01f64..5.0, n),
            )
                .prop_map(|(o, t, w)| {
                    (PredictionPair::from_bools(o, &t).unwrap(), WeightVector::new(w).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn scaled_never_exceeds_base((pair, w) in pair_strategy()) {
            let base = weighted_bce(&pair, &w).unwrap();
            let scaled = scaled_loss(&pair, &w).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!(scaled >= 0.0 && scaled <= base);
        }

        #[test]
        fn iou_never_exceeds_f1((pair, _w) in pair_strategy()) {
            let c = soft_counts(&pair);
            prop_assert!(c.iou() <= c.f1() + 1e-12);
            prop_assert!((0.0..=1.0).contains(&c.iou()) && (0.0..=1.0).contains(&c.f1()));
        }

        #[test]
        fn hard_iou_symmetric(a in proptest::collection::btree_set(0u8..10, 0..8),
                              b in proptest::collection::btree_set(0u8..10, 0..8)) {
            prop_assert_eq!(hard_iou(&a, &b), hard_iou(&b, &a));
            prop_assert_eq!(hard_iou(&a, &b) == 1.0, a == b);
        }

        #[test]
        fn recall_monotone(perm in Just((0..15u32).collect::<Vec<_>>()).prop_shuffle(),
                           rel in proptest::collection::hash_set(0u32..15, 1..6)) {
            let mut prev = 0.0;
            for k in 1..=perm.len() {
                let r = recall_at_k(&perm, &rel, k).unwrap();
                prop_assert!(r >= prev);
                prev = r;
            }
            prop_assert_eq!(prev, 1.0);
        }
    }
}
