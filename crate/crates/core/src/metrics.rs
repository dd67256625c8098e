//! Confusion matrices, the eight evaluation criteria and ROC analysis.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn correct(&self) -> u64 {
        self.tp + self.tn
    }

    pub fn scaled(&self, k: u64) -> Self {
        Self::new(self.tp * k, self.fp * k, self.fn_ * k, self.tn * k)
    }
}

fn check_binary(values: &[u8], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|&v| v > 1) {
        bail!(Data, "{what}[{i}] = {} is not a binary class", values[i]);
    }
    Ok(())
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        bail!(
            Usage,
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        );
    }
    if labels.is_empty() {
        bail!(Usage, "cannot build a confusion matrix from zero samples");
    }
    check_binary(predictions, "prediction")?;
    check_binary(labels, "label")?;
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (1, _) => cm.fp += 1,
            (_, 1) => cm.fn_ += 1,
            _ => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// All criteria as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f_measure: f64,
    pub g_mean: f64,
    /// Only known when scores were available.
    pub auc: Option<f64>,
}

pub const CSV_HEADER: [&str; 9] = [
    "Model",
    "Accuracy",
    "BA",
    "Precision",
    "Recall",
    "Specificity",
    "F-measure",
    "G_mean",
    "AUC",
];

/// Rounds half away from zero to `decimals` places.
pub fn round_half_away(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale).round() / scale
}

impl MetricsReport {
    /// The eight values in column order; AUC is `None` when absent.
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.accuracy),
            Some(self.balanced_accuracy),
            Some(self.precision),
            Some(self.recall),
            Some(self.specificity),
            Some(self.f_measure),
            Some(self.g_mean),
            self.auc,
        ]
    }

    /// Percentages rounded to three decimals, in column order.
    pub fn percentages(&self) -> [Option<f64>; 8] {
        self.values().map(|v| v.map(|x| round_half_away(100.0 * x, 3)))
    }

    /// One CSV record: model name, then the percentages with three decimals.
    pub fn csv_record(&self, model: &str) -> Vec<String> {
        let mut row = vec![model.to_string()];
        row.extend(
            self.percentages()
                .iter()
                .map(|v| v.map(|x| format!("{x:.3}")).unwrap_or_default()),
        );
        row
    }

    pub fn with_auc(mut self, auc: f64) -> Self {
        self.auc = Some(auc);
        self
    }
}

/// Accuracy, precision, recall, specificity, F-measure, BA and G-mean.
///
/// Precision with no predicted positives is 0, and so is F when
/// `p + r = 0`. A class with no samples makes recall or specificity
/// undefined and is an error.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let pos = cm.positives();
    let neg = cm.negatives();
    if pos == 0 {
        bail!(Evaluation, "no positive samples: recall is undefined");
    }
    if neg == 0 {
        bail!(Evaluation, "no negative samples: specificity is undefined");
    }
    let ratio = |a: u64, b: u64| a as f64 / b as f64;
    let accuracy = ratio(cm.correct(), cm.total());
    let precision = if cm.tp + cm.fp == 0 {
        0.0
    } else {
        ratio(cm.tp, cm.tp + cm.fp)
    };
    let recall = ratio(cm.tp, pos);
    let specificity = ratio(cm.tn, neg);
    let f_measure = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricsReport {
        accuracy,
        balanced_accuracy: (recall + specificity) / 2.0,
        precision,
        recall,
        specificity,
        f_measure,
        g_mean: (recall * specificity).sqrt(),
        auc: None,
    })
}

/// Threshold sweep from the highest score down. Points are kept as integer
/// `(false positives, true positives)` counts so the area stays exact in the
/// degenerate cases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RocCurve {
    pub positives: u64,
    pub negatives: u64,
    /// Cumulative `(fp, tp)` from `(0, 0)` to `(negatives, positives)`.
    pub counts: Vec<(u64, u64)>,
}

impl RocCurve {
    /// `(fpr, tpr)` pairs.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.counts
            .iter()
            .map(|&(fp, tp)| (fp as f64 / self.negatives as f64, tp as f64 / self.positives as f64))
            .collect()
    }
}

pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        bail!(Usage, "{} scores for {} labels", scores.len(), labels.len());
    }
    check_binary(labels, "label")?;
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        bail!(Evaluation, "score {i} is NaN");
    }
    let positives = labels.iter().filter(|&&y| y == 1).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        bail!(Evaluation, "ROC needs both classes; got {positives} positive and {negatives} negative");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut counts = vec![(0, 0)];
    let (mut fp, mut tp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        // Every sample tied at `s` crosses the threshold together.
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        counts.push((fp, tp));
    }
    Ok(RocCurve {
        positives,
        negatives,
        counts,
    })
}

/// Trapezoidal area under the curve.
///
/// Summed per vertex as `½ Σ tpr_j · (fp_{j+1} − fp_{j−1}) / N`, which is the
/// trapezoid rule regrouped. For a two-block curve from hard decisions the
/// middle weight is exactly 1, so the result equals `(recall + specificity)/2`
/// bit for bit.
pub fn auc(curve: &RocCurve) -> f64 {
    let c = &curve.counts;
    let n = curve.negatives as f64;
    let p = curve.positives as f64;
    let mut total = 0.0;
    for j in 0..c.len() {
        let left = if j == 0 { c[0].0 } else { c[j - 1].0 };
        let right = if j + 1 == c.len() { c[j].0 } else { c[j + 1].0 };
        let width = right - left;
        if width == 0 || c[j].1 == 0 {
            continue;
        }
        total += (c[j].1 as f64 / p) * (width as f64 / n);
    }
    total / 2.0
}
