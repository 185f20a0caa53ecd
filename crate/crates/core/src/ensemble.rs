//! Margin-weighted prompt ensembling.
//!
//! Each template is scored by its worst-k pseudo-label margin, the scores are
//! turned into weights with a softmax, templates below the median weight are
//! dropped, and the surviving templates' similarity matrices are summed with
//! their weights before the argmax.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::TextBank;
use crate::cmm::{cmm_report, default_k, CmmReport, WorstK, DEFAULT_K_FRACTION};
use crate::container::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::matcher::{
    active_rows, bare_similarity_matrix, predict, similarity_matrix, SimilarityMatrix,
    SimilarityTensor, VariantMode,
};

/// Softmax of `values / temperature`, computed with max subtraction.
pub fn template_weights(values: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Empty("template scores"));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "temperature {temperature} must be positive and finite"
        )));
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteScore { index });
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values
        .iter()
        .map(|v| ((v - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Median; the mean of the two middle order statistics for even lengths.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub threshold: f64,
    pub mask: Vec<bool>,
}

/// Keeps every template whose weight reaches the median weight (inclusive).
pub fn select_templates(weights: &[f64]) -> Result<Selection> {
    let threshold = median(weights)?;
    let mask = weights.iter().map(|&w| w >= threshold).collect();
    Ok(Selection { threshold, mask })
}

/// Combined image-by-class scores and their argmax predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub images: usize,
    pub classes: usize,
    pub scores: Vec<f64>,
    pub predictions: Vec<usize>,
}

impl Combined {
    fn from_scores(images: usize, classes: usize, scores: Vec<f64>) -> Result<Self> {
        let predictions = scores
            .chunks_exact(classes)
            .map(predict)
            .collect::<Result<_>>()?;
        Ok(Self {
            images,
            classes,
            scores,
            predictions,
        })
    }

    pub fn row(&self, image: usize) -> &[f64] {
        &self.scores[image * self.classes..(image + 1) * self.classes]
    }
}

/// `scores[x][j] = Σ_t mask[t] · weights[t] · S_t[x][j]`, accumulated in
/// template order. Weights are not renormalized after masking.
pub fn ensemble_scores(
    tensor: &SimilarityTensor,
    weights: &[f64],
    mask: &[bool],
) -> Result<Combined> {
    let m = tensor.num_templates();
    if weights.len() != m || mask.len() != m {
        return Err(Error::LengthMismatch {
            what: "weights/mask vs templates",
            left: weights.len().max(mask.len()),
            right: m,
        });
    }
    if !mask.iter().any(|&b| b) {
        return Err(Error::EmptySelection);
    }
    let (n, classes) = (tensor.images(), tensor.classes());
    let mut scores = vec![0.0f64; n * classes];
    for (t, s) in tensor.iter().enumerate() {
        if !mask[t] {
            continue;
        }
        let w = weights[t];
        scores
            .par_iter_mut()
            .zip(s.values().par_iter())
            .for_each(|(acc, &v)| *acc += w * f64::from(v));
    }
    Combined::from_scores(n, classes, scores)
}

/// Plain prompt ensemble: the unweighted mean of every template's scores.
pub fn prompt_ensemble(tensor: &SimilarityTensor) -> Result<Combined> {
    let (n, classes) = (tensor.images(), tensor.classes());
    let m = tensor.num_templates() as f64;
    let mut scores = vec![0.0f64; n * classes];
    for s in tensor.iter() {
        for (acc, &v) in scores.iter_mut().zip(s.values()) {
            *acc += f64::from(v);
        }
    }
    for v in &mut scores {
        *v /= m;
    }
    Combined::from_scores(n, classes, scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpeOptions {
    /// Worst-k size; derived from `k_fraction` when `None`.
    pub k: Option<usize>,
    pub k_fraction: f64,
    pub temperature: f64,
    /// Average the bare prompt together with the description prompts.
    pub include_bare_variant: bool,
    pub disable_augmentation: bool,
    pub disable_selection: bool,
    pub uniform_weights: bool,
}

impl Default for CpeOptions {
    fn default() -> Self {
        Self {
            k: None,
            k_fraction: DEFAULT_K_FRACTION,
            temperature: 1.0,
            include_bare_variant: false,
            disable_augmentation: false,
            disable_selection: false,
            uniform_weights: false,
        }
    }
}

impl CpeOptions {
    /// Options that reduce the pipeline to the plain prompt ensemble.
    pub fn baseline() -> Self {
        Self {
            disable_augmentation: true,
            disable_selection: true,
            uniform_weights: true,
            ..Self::default()
        }
    }

    pub fn resolve_k(&self, classes: usize) -> Result<usize> {
        match self.k {
            Some(k) if k == 0 || k > classes => Err(Error::KOutOfRange { k, max: classes }),
            Some(k) => Ok(k),
            None => default_k(classes, self.k_fraction),
        }
    }
}

/// Per-template record of one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateOutcome {
    pub template: usize,
    /// Margins on bare prompts.
    pub before: CmmReport,
    /// Margins after the worst classes switched to description prompts.
    /// Equal to `before` when augmentation is off.
    pub after: CmmReport,
    /// Classes switched to description prompts (the worst set of `before`).
    pub augmented: Vec<usize>,
    /// Augmented classes that had no description embeddings and kept the
    /// bare prompt.
    pub missing_descriptions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub weights: Vec<f64>,
    /// `None` when selection is disabled.
    pub threshold: Option<f64>,
    pub mask: Vec<bool>,
    pub combined: Combined,
}

impl EnsembleModel {
    pub fn predictions(&self) -> &[usize] {
        &self.combined.predictions
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpeRun {
    pub k: usize,
    pub model: EnsembleModel,
    pub templates: Vec<TemplateOutcome>,
    /// Final per-template similarity matrices, augmentation applied.
    pub tensor: SimilarityTensor,
}

fn run_template(
    images: &EmbeddingMatrix,
    bank: &TextBank,
    template: usize,
    k: usize,
    options: &CpeOptions,
) -> Result<(TemplateOutcome, SimilarityMatrix)> {
    let bare = bare_similarity_matrix(images, bank, template)?;
    let before = cmm_report(&bare, template, k)?;
    if options.disable_augmentation {
        let outcome = TemplateOutcome {
            template,
            after: before.clone(),
            before,
            augmented: Vec::new(),
            missing_descriptions: Vec::new(),
        };
        return Ok((outcome, bare));
    }

    let described = VariantMode::Described {
        include_bare: options.include_bare_variant,
    };
    let n = bank.catalog().num_classes();
    let mut modes = vec![VariantMode::Bare; n];
    let mut missing = Vec::new();
    for &c in &before.worst_set {
        let (_, fell_back) = active_rows(bank, template, c, described)?;
        if fell_back {
            missing.push(c);
        } else {
            modes[c] = described;
        }
    }
    let (after, scores) = if missing.len() == before.worst_set.len() {
        (before.clone(), bare)
    } else {
        let scores = similarity_matrix(images, bank, template, &modes)?;
        (cmm_report(&scores, template, k)?, scores)
    };
    let outcome = TemplateOutcome {
        template,
        augmented: before.worst_set.clone(),
        before,
        after,
        missing_descriptions: missing,
    };
    Ok((outcome, scores))
}

/// Runs the full pipeline: per template, pseudo-label margins, description
/// augmentation of the worst classes, and re-scored margins; then softmax
/// weights, median selection and the weighted ensemble.
///
/// Takes bare image embeddings; ground-truth labels are not an input.
pub fn run_cpe(images: &EmbeddingMatrix, bank: &TextBank, options: &CpeOptions) -> Result<CpeRun> {
    let catalog = bank.catalog();
    let k = options.resolve_k(catalog.num_classes())?;
    let m = catalog.num_templates();

    let per_template: Vec<(TemplateOutcome, SimilarityMatrix)> = (0..m)
        .into_par_iter()
        .map(|t| run_template(images, bank, t, k, options))
        .collect::<Result<_>>()?;
    let (templates, matrices): (Vec<_>, Vec<_>) = per_template.into_iter().unzip();

    let mut missing: Vec<usize> = templates
        .iter()
        .flat_map(|o| o.missing_descriptions.iter().copied())
        .collect();
    missing.sort_unstable();
    missing.dedup();
    for c in missing {
        log::warn!(
            "class {c} ({}) has no description embeddings; using its bare prompt",
            catalog.class_names()[c]
        );
    }

    let tensor = SimilarityTensor::new(matrices)?;
    let weights = if options.uniform_weights {
        vec![1.0 / m as f64; m]
    } else {
        let scores: Vec<f64> = templates
            .iter()
            .map(|o| o.after.worst_k.weighting_value())
            .collect();
        template_weights(&scores, options.temperature)?
    };
    let (threshold, mask) = if options.disable_selection {
        (None, vec![true; m])
    } else {
        let s = select_templates(&weights)?;
        (Some(s.threshold), s.mask)
    };
    let combined = ensemble_scores(&tensor, &weights, &mask)?;

    Ok(CpeRun {
        k,
        model: EnsembleModel {
            weights,
            threshold,
            mask,
            combined,
        },
        templates,
        tensor,
    })
}

/// Serialized per-template entry of a [`RunReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub template: usize,
    pub text: String,
    pub worst_k_before: WorstKEntry,
    pub worst_k_after: WorstKEntry,
    pub weight: f64,
    pub selected: bool,
    pub augmented_classes: Vec<usize>,
    pub missing_descriptions: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstKEntry {
    /// `null` when an empty pseudo-class falls in the worst set.
    pub value: Option<f64>,
    pub degenerate: bool,
    pub fallback: f64,
}

impl From<WorstK> for WorstKEntry {
    fn from(w: WorstK) -> Self {
        Self {
            value: w.value.is_finite().then_some(w.value),
            degenerate: w.degenerate,
            fallback: w.fallback,
        }
    }
}

/// JSON run report of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub k: usize,
    pub options: CpeOptions,
    pub threshold: Option<f64>,
    pub weights: Vec<f64>,
    pub mask: Vec<bool>,
    pub templates: Vec<TemplateEntry>,
}

impl RunReport {
    pub fn new(run: &CpeRun, bank: &TextBank, options: &CpeOptions) -> Self {
        let texts = bank.catalog().templates();
        let templates = run
            .templates
            .iter()
            .map(|o| TemplateEntry {
                template: o.template,
                text: texts[o.template].clone(),
                worst_k_before: o.before.worst_k.into(),
                worst_k_after: o.after.worst_k.into(),
                weight: run.model.weights[o.template],
                selected: run.model.mask[o.template],
                augmented_classes: o.augmented.clone(),
                missing_descriptions: o.missing_descriptions.clone(),
            })
            .collect();
        Self {
            k: run.k,
            options: options.clone(),
            threshold: run.model.threshold,
            weights: run.model.weights.clone(),
            mask: run.model.mask.clone(),
            templates,
        }
    }
}
