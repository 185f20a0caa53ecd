//! Class-wise matching margins computed from pseudo-labels.
//!
//! For one template, each image is labelled by its own argmax, the H matrix is
//! estimated from those labels, and each class's margin is its diagonal entry
//! minus the largest off-diagonal entry of its row. Ground truth is never
//! consulted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::{empirical_h, predict, HMatrix, SimilarityMatrix, SimilarityTensor};

/// Margin assigned to classes no image was assigned to.
pub const EMPTY_CLASS_MARGIN: f64 = f64::NEG_INFINITY;

pub const DEFAULT_K_FRACTION: f64 = 0.1;

/// `max(1, round(fraction * classes))`, rounding half away from zero and
/// capped at `classes`.
pub fn default_k(classes: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "k fraction {fraction} must lie in (0, 1]"
        )));
    }
    let k = (fraction * classes as f64).round() as usize;
    Ok(k.clamp(1, classes.max(1)))
}

/// Argmax label of every row.
pub fn pseudo_labels(scores: &SimilarityMatrix) -> Result<Vec<usize>> {
    scores.iter_rows().map(predict).collect()
}

/// Per-class margin `H[i][i] - max_{j != i} H[i][j]`; empty rows get
/// [`EMPTY_CLASS_MARGIN`].
pub fn cmm(h: &HMatrix) -> Result<Vec<f64>> {
    let n = h.classes();
    if n < 2 {
        return Err(Error::TooFewClasses(n));
    }
    Ok((0..n)
        .map(|i| {
            if h.is_empty_row(i) {
                return EMPTY_CLASS_MARGIN;
            }
            let row = h.row(i);
            let rival = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            row[i] - rival
        })
        .collect())
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, max: n });
    }
    Ok(())
}

/// Mean of the `k` smallest values, summed in ascending order.
///
/// Rounded addition is monotone in each operand, so summing the sorted
/// prefix gives the minimum over every size-`k` subset summed the same way.
pub(crate) fn mean_of_smallest(values: &[f64], k: usize) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[..k].iter().sum::<f64>() / k as f64
}

/// Mean of the `k` smallest margins. Empty-class sentinels sort first, so
/// the result is `-inf` whenever one is included.
pub fn worst_k_cmm(margins: &[f64], k: usize) -> Result<f64> {
    check_k(k, margins.len())?;
    Ok(mean_of_smallest(margins, k))
}

/// Worst-k margin with its finite fallback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstK {
    /// Mean of the `k` smallest margins, `-inf` when an empty class is among them.
    pub value: f64,
    /// Mean of the smallest `min(k, finite count)` finite margins.
    pub fallback: f64,
    pub degenerate: bool,
}

impl WorstK {
    pub fn compute(margins: &[f64], k: usize) -> Result<Self> {
        let value = worst_k_cmm(margins, k)?;
        let finite: Vec<f64> = margins.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return Err(Error::Empty("finite class margins"));
        }
        let fallback = mean_of_smallest(&finite, k.min(finite.len()));
        Ok(Self {
            value,
            fallback,
            degenerate: !value.is_finite(),
        })
    }

    /// The value template weighting uses: always finite.
    pub fn weighting_value(&self) -> f64 {
        self.fallback
    }
}

/// The `k` classes with the smallest margins, returned in ascending index
/// order. Ties go to the lower class index.
pub fn identify_worst(margins: &[f64], k: usize) -> Result<Vec<usize>> {
    check_k(k, margins.len())?;
    let mut order: Vec<usize> = (0..margins.len()).collect();
    order.sort_by(|&a, &b| margins[a].total_cmp(&margins[b]).then(a.cmp(&b)));
    let mut worst = order[..k].to_vec();
    worst.sort_unstable();
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmmReport {
    pub template: usize,
    pub k: usize,
    pub cmm: Vec<f64>,
    pub worst_k: WorstK,
    pub worst_set: Vec<usize>,
    pub pseudo_labels: Vec<usize>,
    /// Images per pseudo-class.
    pub counts: Vec<usize>,
}

/// Serialized form of a [`CmmReport`]. Empty-class margins become `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmmSummary {
    pub template: usize,
    pub k: usize,
    pub worst_k_value: Option<f64>,
    pub degenerate: bool,
    pub worst_k_fallback: f64,
    pub worst_set: Vec<usize>,
    pub cmm: Vec<Option<f64>>,
    pub pseudo_label_histogram: Vec<usize>,
}

impl CmmReport {
    pub fn summary(&self) -> CmmSummary {
        let finite = |v: f64| v.is_finite().then_some(v);
        CmmSummary {
            template: self.template,
            k: self.k,
            worst_k_value: finite(self.worst_k.value),
            degenerate: self.worst_k.degenerate,
            worst_k_fallback: self.worst_k.fallback,
            worst_set: self.worst_set.clone(),
            cmm: self.cmm.iter().copied().map(finite).collect(),
            pseudo_label_histogram: self.counts.clone(),
        }
    }
}

/// Pseudo-labels, H matrix, margins and worst-k summary of one template.
pub fn cmm_report(scores: &SimilarityMatrix, template: usize, k: usize) -> Result<CmmReport> {
    let labels = pseudo_labels(scores)?;
    let h = empirical_h(scores, &labels)?;
    let margins = cmm(&h)?;
    let worst_k = WorstK::compute(&margins, k)?;
    let worst_set = identify_worst(&margins, k)?;
    Ok(CmmReport {
        template,
        k,
        cmm: margins,
        worst_k,
        worst_set,
        pseudo_labels: labels,
        counts: h.counts().to_vec(),
    })
}

/// [`cmm_report`] for every template, in template order.
pub fn cmm_reports(tensor: &SimilarityTensor, k: usize) -> Result<Vec<CmmReport>> {
    (0..tensor.num_templates())
        .into_par_iter()
        .map(|t| cmm_report(tensor.template(t), t, k))
        .collect()
}
