//! Self-implemented binary classification metrics.
//!
//! Everything here is computed from first principles: confusion matrix,
//! per-class precision/recall/F1, support-weighted F1, ROC curves with
//! trapezoidal AUC, a pairwise-concordance AUC oracle, and screening
//! threshold selection.
//!
//! Rates that hit a zero denominator (e.g. precision of a never-predicted
//! class) are reported as an explicit `None`, never silently coerced to 0.
//!
//! Threshold selection works over a sweep of all distinct scores:
//!
//! ```
//! use retscreen::metrics::{select_threshold, threshold_sweep, ThresholdPolicy};
//!
//! let y = [0, 0, 0, 0, 1, 1, 1, 1];
//! let s = [0.1, 0.2, 0.4, 0.7, 0.3, 0.6, 0.8, 0.9];
//! let sweep = threshold_sweep(&y, &s).unwrap();
//! // a recall floor picks the highest cut that still catches 90% of class 1
//! let t = select_threshold(&sweep, ThresholdPolicy::MinRecall(0.9)).unwrap();
//! assert_eq!(t, 0.3);
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("label and score/prediction lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("non-binary label {value} at index {index}")]
    NonBinaryLabel { index: usize, value: i64 },
    #[error("all labels belong to a single class; ROC/AUC undefined")]
    SingleClass,
    #[error("no sweep row satisfies recall >= {0}")]
    InfeasibleRecall(f64),
    #[error("empty threshold sweep")]
    EmptySweep,
}

/// 2x2 confusion matrix. Entry `(i, j)` counts samples with true class `i`
/// predicted as class `j` (rows = truth, columns = prediction).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 2]; 2]) -> Self {
        Self { counts }
    }

    /// Tally a confusion matrix from hard predictions.
    pub fn from_predictions(y_true: &[u8], y_pred: &[u8]) -> Result<Self, MetricsError> {
        if y_true.len() != y_pred.len() {
            return Err(MetricsError::LengthMismatch(y_true.len(), y_pred.len()));
        }
        if y_true.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut counts = [[0u64; 2]; 2];
        for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
            if t > 1 {
                return Err(MetricsError::NonBinaryLabel { index: i, value: t as i64 });
            }
            if p > 1 {
                return Err(MetricsError::NonBinaryLabel { index: i, value: p as i64 });
            }
            counts[t as usize][p as usize] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Number of samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c][0] + self.counts[c][1]
    }

    /// Number of samples predicted as class `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        self.counts[0][c] + self.counts[1][c]
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> f64 {
    let correct = cm.counts[0][0] + cm.counts[1][1];
    correct as f64 / cm.total() as f64
}

/// Precision for class `c`; `None` when the class was never predicted.
pub fn precision(cm: &ConfusionMatrix, c: usize) -> Option<f64> {
    let denom = cm.predicted(c);
    (denom > 0).then(|| cm.counts[c][c] as f64 / denom as f64)
}

/// Recall for class `c`; `None` when the class has no true samples.
pub fn recall(cm: &ConfusionMatrix, c: usize) -> Option<f64> {
    let denom = cm.support(c);
    (denom > 0).then(|| cm.counts[c][c] as f64 / denom as f64)
}

/// F1 for class `c`: harmonic mean of precision and recall.
pub fn f1(cm: &ConfusionMatrix, c: usize) -> Option<f64> {
    let p = precision(cm, c)?;
    let r = recall(cm, c)?;
    if p + r == 0.0 {
        return None;
    }
    Some(2.0 * p * r / (p + r))
}

/// Support-weighted F1 over both classes. `None` if any per-class F1 is
/// undefined for a class with nonzero support.
pub fn weighted_f1(cm: &ConfusionMatrix) -> Option<f64> {
    let n = cm.total() as f64;
    let mut acc = 0.0;
    for c in 0..2 {
        let support = cm.support(c);
        if support == 0 {
            continue;
        }
        acc += (support as f64 / n) * f1(cm, c)?;
    }
    Some(acc)
}

/// One point on a ROC curve. Thresholds use `>=` semantics: a sample is
/// predicted positive when its score is at least `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// Which class is treated as positive for ROC purposes.
///
/// `scores` passed to [`roc_curve`] are always the class-1 score; for
/// `positive_class = 0` the complement `1 - s` is swept instead, matching
/// the class-0 component of a softmax pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositiveClass {
    Zero,
    One,
}

/// Sweep thresholds over the distinct score values (plus sentinels) and
/// record (FPR, TPR) at each. Ties are grouped so the trapezoidal area
/// equals the pairwise-concordance oracle exactly.
pub fn roc_curve(
    y_true: &[u8],
    scores: &[f64],
    positive_class: PositiveClass,
) -> Result<RocCurve, MetricsError> {
    if y_true.len() != scores.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), scores.len()));
    }
    if y_true.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut pairs: Vec<(f64, bool)> = y_true
        .iter()
        .zip(scores)
        .map(|(&t, &s)| match positive_class {
            PositiveClass::One => (s, t == 1),
            PositiveClass::Zero => (1.0 - s, t == 0),
        })
        .collect();
    let pos_total = pairs.iter().filter(|(_, p)| *p).count();
    let neg_total = pairs.len() - pos_total;
    if pos_total == 0 || neg_total == 0 {
        return Err(MetricsError::SingleClass);
    }
    // Descending by score; group equal scores into one curve step.
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("scores must not be NaN"));

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < pairs.len() {
        let score = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == score {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: score,
            fpr: fp as f64 / neg_total as f64,
            tpr: tp as f64 / pos_total as f64,
        });
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the (FPR, TPR) polyline.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Independent AUC oracle: the mean over all (positive, negative) pairs of
/// 1 if the positive outscores the negative, 0.5 on a tie, 0 otherwise.
/// Quadratic; test-scale inputs only.
pub fn auc_pairwise_oracle(y_true: &[u8], scores: &[f64]) -> Result<f64, MetricsError> {
    if y_true.len() != scores.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), scores.len()));
    }
    let pos: Vec<f64> = scores
        .iter()
        .zip(y_true)
        .filter(|(_, &t)| t == 1)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(y_true)
        .filter(|(_, &t)| t == 0)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricsError::SingleClass);
    }
    let mut concordant = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            concordant += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(concordant / (pos.len() as f64 * neg.len() as f64))
}

/// One row of a screening threshold sweep. Rates for class 1 (Diseased).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub precision1: Option<f64>,
    pub recall1: f64,
    pub f1_1: Option<f64>,
    pub accuracy: f64,
    pub youden_j: f64,
}

/// Evaluate hard metrics at every candidate threshold (the distinct class-1
/// scores plus sentinels above and below the observed range).
pub fn threshold_sweep(y_true: &[u8], scores: &[f64]) -> Result<Vec<SweepRow>, MetricsError> {
    if y_true.len() != scores.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), scores.len()));
    }
    if y_true.is_empty() {
        return Err(MetricsError::Empty);
    }
    let pos_total = y_true.iter().filter(|&&t| t == 1).count();
    if pos_total == 0 || pos_total == y_true.len() {
        return Err(MetricsError::SingleClass);
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(0.0);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    thresholds.push(max + 1.0);
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("scores must not be NaN"));
    thresholds.dedup();

    let rows = thresholds
        .into_iter()
        .map(|t| {
            let y_pred: Vec<u8> = scores.iter().map(|&s| (s >= t) as u8).collect();
            let cm = ConfusionMatrix::from_predictions(y_true, &y_pred)
                .expect("labels validated above");
            let tpr = recall(&cm, 1).unwrap_or(0.0);
            let fpr = 1.0 - recall(&cm, 0).unwrap_or(1.0);
            SweepRow {
                threshold: t,
                precision1: precision(&cm, 1),
                recall1: tpr,
                f1_1: f1(&cm, 1),
                accuracy: accuracy(&cm),
                youden_j: tpr - fpr,
            }
        })
        .collect();
    Ok(rows)
}

/// Threshold selection policy for screening.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    /// Maximize Youden's J = TPR - FPR; ties break toward the higher threshold.
    Youden,
    /// Highest threshold whose diseased-class recall is at least `r`.
    MinRecall(f64),
}

pub fn select_threshold(sweep: &[SweepRow], policy: ThresholdPolicy) -> Result<f64, MetricsError> {
    if sweep.is_empty() {
        return Err(MetricsError::EmptySweep);
    }
    match policy {
        ThresholdPolicy::Youden => {
            let best = sweep
                .iter()
                .max_by(|a, b| {
                    (a.youden_j, a.threshold)
                        .partial_cmp(&(b.youden_j, b.threshold))
                        .expect("sweep rows must not contain NaN")
                })
                .expect("non-empty sweep");
            Ok(best.threshold)
        }
        ThresholdPolicy::MinRecall(r) => sweep
            .iter()
            .filter(|row| row.recall1 >= r)
            .map(|row| row.threshold)
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
            .ok_or(MetricsError::InfeasibleRecall(r)),
    }
}

/// Per-class slice of a [`MetricsReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub support: u64,
    pub auc: Option<f64>,
}

/// Full evaluation report; the `metrics.json` schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_f1: Option<f64>,
    pub threshold: f64,
    pub confusion_matrix: [[u64; 2]; 2],
}

impl MetricsReport {
    /// Assemble a report from hard predictions plus optional class-1 scores
    /// (scores enable the per-class AUC columns).
    pub fn build(
        y_true: &[u8],
        y_pred: &[u8],
        scores: Option<&[f64]>,
        threshold: f64,
    ) -> Result<Self, MetricsError> {
        let cm = ConfusionMatrix::from_predictions(y_true, y_pred)?;
        let aucs: [Option<f64>; 2] = match scores {
            Some(s) => {
                let a0 = roc_curve(y_true, s, PositiveClass::Zero).map(|c| auc(&c)).ok();
                let a1 = roc_curve(y_true, s, PositiveClass::One).map(|c| auc(&c)).ok();
                [a0, a1]
            }
            None => [None, None],
        };
        Ok(Self {
            accuracy: accuracy(&cm),
            per_class: (0..2u8)
                .map(|c| ClassMetrics {
                    class: c,
                    precision: precision(&cm, c as usize),
                    recall: recall(&cm, c as usize),
                    f1: f1(&cm, c as usize),
                    support: cm.support(c as usize),
                    auc: aucs[c as usize],
                })
                .collect(),
            weighted_f1: weighted_f1(&cm),
            threshold,
            confusion_matrix: cm.counts,
        })
    }

    /// Same report from a precomputed confusion matrix (no scores, no AUC).
    pub fn from_matrix(cm: &ConfusionMatrix, threshold: f64) -> Self {
        Self {
            accuracy: accuracy(cm),
            per_class: (0..2u8)
                .map(|c| ClassMetrics {
                    class: c,
                    precision: precision(cm, c as usize),
                    recall: recall(cm, c as usize),
                    f1: f1(cm, c as usize),
                    support: cm.support(c as usize),
                    auc: None,
                })
                .collect(),
            weighted_f1: weighted_f1(cm),
            threshold,
            confusion_matrix: cm.counts,
        }
    }

    /// Human-readable rendering, rates rounded to 2 decimals.
    pub fn render_text(&self) -> String {
        fn fmt(v: Option<f64>) -> String {
            v.map_or_else(|| "undef".to_string(), |x| format!("{x:.2}"))
        }
        let mut out = String::new();
        out.push_str(&format!("accuracy      {:.2}\n", self.accuracy));
        out.push_str(&format!("weighted F1   {}\n", fmt(self.weighted_f1)));
        out.push_str(&format!("threshold     {}\n", self.threshold));
        out.push_str("class  precision  recall  f1     support  auc\n");
        for c in &self.per_class {
            out.push_str(&format!(
                "{}      {:<9}  {:<6}  {:<5}  {:<7}  {}\n",
                c.class,
                fmt(c.precision),
                fmt(c.recall),
                fmt(c.f1),
                c.support,
                fmt(c.auc),
            ));
        }
        out.push_str(&format!(
            "confusion matrix  [[{}, {}], [{}, {}]]\n",
            self.confusion_matrix[0][0],
            self.confusion_matrix[0][1],
            self.confusion_matrix[1][0],
            self.confusion_matrix[1][1],
        ));
        out
    }
}
