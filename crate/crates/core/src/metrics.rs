//! Ground-truth evaluation with worst-class-aware metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cmm::mean_of_smallest;
use crate::dataset::check_labels;
use crate::error::{Error, Result};

/// The worst@k columns of the text report.
pub const REPORT_KS: [usize; 6] = [1, 5, 10, 20, 50, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    /// `None` for classes with no labelled samples.
    pub accuracy: Vec<Option<f64>>,
    pub support: Vec<usize>,
}

impl ClassAccuracy {
    /// Accuracies of the classes that have support, in class order.
    pub fn present(&self) -> Vec<f64> {
        self.accuracy.iter().flatten().copied().collect()
    }

    pub fn absent(&self) -> Vec<usize> {
        self.accuracy
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn class_accuracy(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<ClassAccuracy> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "predictions vs labels",
            left: predictions.len(),
            right: labels.len(),
        });
    }
    check_labels(labels, num_classes)?;
    check_labels(predictions, num_classes)?;
    let mut correct = vec![0usize; num_classes];
    let mut support = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        support[y] += 1;
        if p == y {
            correct[y] += 1;
        }
    }
    let accuracy = correct
        .iter()
        .zip(&support)
        .map(|(&c, &s)| (s > 0).then(|| c as f64 / s as f64))
        .collect();
    Ok(ClassAccuracy { accuracy, support })
}

/// Mean of the `k` smallest accuracies.
pub fn worst_at_k(accuracies: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > accuracies.len() {
        return Err(Error::KOutOfRange {
            k,
            max: accuracies.len(),
        });
    }
    Ok(mean_of_smallest(accuracies, k))
}

/// `N / Σ 1/acc`; zero as soon as one accuracy is zero.
pub fn harmonic_mean(accuracies: &[f64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::Empty("accuracies"));
    }
    if accuracies.contains(&0.0) {
        return Ok(0.0);
    }
    let inv: f64 = accuracies.iter().map(|a| 1.0 / a).sum();
    Ok(accuracies.len() as f64 / inv)
}

/// `exp(mean(ln acc))`; zero as soon as one accuracy is zero.
pub fn geometric_mean(accuracies: &[f64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::Empty("accuracies"));
    }
    if accuracies.contains(&0.0) {
        return Ok(0.0);
    }
    let log_mean = accuracies.iter().map(|a| a.ln()).sum::<f64>() / accuracies.len() as f64;
    Ok(log_mean.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstAt {
    pub k: usize,
    /// `k` capped at the number of present classes.
    pub effective_k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub num_classes: usize,
    pub samples: usize,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub class_support: Vec<usize>,
    pub absent_classes: Vec<usize>,
    pub worst_at: Vec<WorstAt>,
    pub hm: f64,
    pub gm: f64,
    pub overall: f64,
}

impl EvaluationReport {
    pub fn new(
        predictions: &[usize],
        labels: &[usize],
        num_classes: usize,
        ks: &[usize],
    ) -> Result<Self> {
        let acc = class_accuracy(predictions, labels, num_classes)?;
        let present = acc.present();
        if present.is_empty() {
            return Err(Error::Empty("labelled samples"));
        }
        let worst_at = ks
            .iter()
            .map(|&k| {
                let effective_k = k.min(present.len());
                worst_at_k(&present, effective_k).map(|value| WorstAt {
                    k,
                    effective_k,
                    value,
                })
            })
            .collect::<Result<_>>()?;
        let correct = predictions
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        Ok(Self {
            num_classes,
            samples: labels.len(),
            hm: harmonic_mean(&present)?,
            gm: geometric_mean(&present)?,
            overall: correct as f64 / labels.len() as f64,
            absent_classes: acc.absent(),
            per_class_accuracy: acc.accuracy,
            class_support: acc.support,
            worst_at,
        })
    }

    /// Aligned plain-text table in percent, two decimals.
    pub fn to_table(&self) -> String {
        let mut header: Vec<String> = self.worst_at.iter().map(|w| format!("@{}", w.k)).collect();
        header.extend(["HM", "GM", "Overall"].map(String::from));
        let mut values: Vec<String> = self.worst_at.iter().map(|w| percent(w.value)).collect();
        values.extend([self.hm, self.gm, self.overall].map(percent));
        let width = header
            .iter()
            .chain(&values)
            .map(String::len)
            .max()
            .unwrap_or(0)
            + 2;
        let mut out = String::new();
        for row in [&header, &values] {
            for cell in row {
                let _ = write!(out, "{cell:>width$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Accuracy as a percentage rounded half-to-even at two decimals.
pub fn percent(accuracy: f64) -> String {
    format!("{:.2}", (accuracy * 10_000.0).round_ties_even() / 100.0)
}
