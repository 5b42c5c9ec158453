//! Confusion matrices and the classification metrics derived from them.
//!
//! Rows are ground truth, columns are predictions. Ratios that would divide
//! by zero are reported as [`Rate::undefined`] rather than `0` or `NaN`.

use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::EmptyInput);
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::LengthMismatch {
                left: bad.len(),
                right: k,
            });
        }
        Ok(ConfusionMatrix { k, counts: rows })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        for label in [truth, pred] {
            if label >= self.k {
                return Err(Error::LabelOutOfRange { label, k: self.k });
            }
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k)
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// Elementwise sum; used to merge shards counted independently.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::LengthMismatch {
                left: self.k,
                right: other.k,
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn transpose(&self) -> ConfusionMatrix {
        let mut t = ConfusionMatrix::zeros(self.k);
        for i in 0..self.k {
            for j in 0..self.k {
                t.counts[j][i] = self.counts[i][j];
            }
        }
        t
    }

    /// Collapses to a 2×2 healthy-vs-diseased matrix: class 0 stays negative,
    /// every other class becomes positive.
    pub fn collapse_binary(&self) -> ConfusionMatrix {
        let mut b = ConfusionMatrix::zeros(2);
        for i in 0..self.k {
            for j in 0..self.k {
                b.counts[(i > 0) as usize][(j > 0) as usize] += self.counts[i][j];
            }
        }
        b
    }
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in truth.iter().zip(pred) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

/// A ratio that may be undefined because its denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rate(Option<f64>);

impl Rate {
    pub fn undefined() -> Self {
        Rate(None)
    }

    pub fn ratio(num: f64, den: f64) -> Self {
        if den == 0.0 {
            Rate(None)
        } else {
            Rate(Some(num / den))
        }
    }

    pub fn value(self) -> Option<f64> {
        self.0
    }

    fn rounded(self) -> Self {
        Rate(self.0.map(round_sig6))
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.4}"),
            None => f.write_str("undefined"),
        }
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Rate(Some(v))),
            Raw::Str(s) if s == "undefined" => Ok(Rate(None)),
            Raw::Str(s) => Err(de::Error::custom(format!("unexpected rate {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryRates {
    pub sensitivity: Rate,
    pub specificity: Rate,
    pub precision: Rate,
    pub f_score: Rate,
    pub accuracy: f64,
}

/// Sensitivity, specificity, precision, F-score and accuracy of a 2×2
/// matrix with class 1 as the positive class.
pub fn binary_rates(cm: &ConfusionMatrix) -> Result<BinaryRates> {
    if cm.k() != 2 {
        return Err(Error::shape(format!(
            "binary_rates needs a 2x2 matrix, got {0}x{0}",
            cm.k()
        )));
    }
    if cm.total() == 0 {
        return Err(Error::EmptyInput);
    }
    let tp = cm.get(1, 1) as f64;
    let tn = cm.get(0, 0) as f64;
    let fp = cm.get(0, 1) as f64;
    let fn_ = cm.get(1, 0) as f64;
    let sensitivity = Rate::ratio(tp, tp + fn_);
    let precision = Rate::ratio(tp, tp + fp);
    let f_score = match (precision.value(), sensitivity.value()) {
        (Some(p), Some(r)) => Rate::ratio(2.0 * p * r, p + r),
        _ => Rate::undefined(),
    };
    Ok(BinaryRates {
        sensitivity,
        specificity: Rate::ratio(tn, tn + fp),
        precision,
        f_score,
        accuracy: (tp + tn) / (tp + tn + fp + fn_),
    })
}

/// Fraction of samples on the diagonal.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Unweighted Cohen's kappa: observed agreement corrected by the agreement
/// expected from the row and column marginals.
pub fn kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    let n = total as f64;
    let observed = cm.trace() as f64 / n;
    let expected: f64 = cm
        .row_sums()
        .iter()
        .zip(cm.col_sums())
        .map(|(&r, c)| r as f64 * c as f64)
        .sum::<f64>()
        / (n * n);
    if expected == 1.0 {
        return Err(Error::DegenerateMarginals);
    }
    Ok((observed - expected) / (1.0 - expected))
}

/// Recall of each class (diagonal over row mass).
pub fn per_class_recall(cm: &ConfusionMatrix) -> Vec<Rate> {
    cm.row_sums()
        .iter()
        .enumerate()
        .map(|(i, &r)| Rate::ratio(cm.get(i, i) as f64, r as f64))
        .collect()
}

pub const LOGLOSS_CLAMP: f64 = 1e-15;

/// `-Σ_i Σ_j y_ij log p_ij` over probability rows, with probabilities clamped
/// to `[1e-15, 1 - 1e-15]`. A plain sum over samples unless `mean` is set.
pub fn logloss(probs: &[Vec<f32>], truth: &[usize], mean: bool) -> Result<f64> {
    if probs.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: truth.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0f64;
    for (row, &t) in probs.iter().zip(truth) {
        let p = *row.get(t).ok_or(Error::LabelOutOfRange {
            label: t,
            k: row.len(),
        })? as f64;
        total -= p.clamp(LOGLOSS_CLAMP, 1.0 - LOGLOSS_CLAMP).ln();
    }
    Ok(if mean {
        total / probs.len() as f64
    } else {
        total
    })
}

/// Rounds to six significant digits, the precision used in every report.
pub fn round_sig6(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().unwrap_or(v)
}

/// Evaluation summary written as `report.json` / `report.txt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scheme: String,
    pub samples: u64,
    pub confusion_matrix: ConfusionMatrix,
    pub per_class_recall: Vec<Rate>,
    pub accuracy: f64,
    pub kappa: Rate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary: Option<BinaryRates>,
}

impl MetricsReport {
    /// Builds the report; `binary_collapse` adds healthy-vs-diseased rates for
    /// multi-class matrices (and the plain rates for 2×2 ones).
    pub fn new(scheme: &str, cm: ConfusionMatrix, binary_collapse: bool) -> Result<Self> {
        let acc = accuracy(&cm)?;
        let kap = match kappa(&cm) {
            Ok(v) => Rate(Some(round_sig6(v))),
            Err(Error::DegenerateMarginals) => Rate::undefined(),
            Err(e) => return Err(e),
        };
        let binary = if binary_collapse || cm.k() == 2 {
            let b = binary_rates(&cm.collapse_binary())?;
            Some(BinaryRates {
                sensitivity: b.sensitivity.rounded(),
                specificity: b.specificity.rounded(),
                precision: b.precision.rounded(),
                f_score: b.f_score.rounded(),
                accuracy: round_sig6(b.accuracy),
            })
        } else {
            None
        };
        Ok(MetricsReport {
            scheme: scheme.to_string(),
            samples: cm.total(),
            per_class_recall: per_class_recall(&cm).into_iter().map(Rate::rounded).collect(),
            accuracy: round_sig6(acc),
            kappa: kap,
            binary,
            confusion_matrix: cm,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let cm = &self.confusion_matrix;
        let width = cm
            .rows()
            .iter()
            .flatten()
            .map(|v| v.to_string().len())
            .max()
            .unwrap_or(1)
            .max(6);
        let mut out = String::new();
        out.push_str(&format!("scheme: {}\nsamples: {}\n\n", self.scheme, self.samples));
        out.push_str(&format!("{:>8}", "truth"));
        for j in 0..cm.k() {
            out.push_str(&format!(" {:>width$}", format!("pred {j}")));
        }
        out.push_str(&format!(" {:>8}\n", "recall"));
        for (i, row) in cm.rows().iter().enumerate() {
            out.push_str(&format!("{i:>8}"));
            for v in row {
                out.push_str(&format!(" {v:>width$}"));
            }
            out.push_str(&format!(" {:>8}\n", self.per_class_recall[i].to_string()));
        }
        out.push_str(&format!("\naccuracy: {:.4}\nkappa: {}\n", self.accuracy, self.kappa));
        if let Some(b) = &self.binary {
            out.push_str(&format!(
                "sensitivity: {}\nspecificity: {}\nprecision: {}\nf_score: {}\nbinary accuracy: {:.4}\n",
                b.sensitivity, b.specificity, b.precision, b.f_score, b.accuracy
            ));
        }
        out
    }
}
