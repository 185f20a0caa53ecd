//! Image/prompt matching: cosine scores, description-averaged class
//! similarities, per-template similarity matrices, argmax prediction and the
//! empirical class-by-prompt similarity matrix.
//!
//! Every dot product accumulates in `f64` in ascending dimension order and is
//! rounded to `f32` once, so results do not depend on how work is split
//! across threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::TextBank;
use crate::container::EmbeddingMatrix;
use crate::error::{Error, Result};

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0f64, |acc, (&x, &y)| acc + f64::from(x) * f64::from(y))
}

/// Cosine similarity of two unit vectors, i.e. their dot product.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(dot(a, b) as f32)
}

/// Which prompt variants stand in for a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantMode {
    /// Only the bare `template · class` prompt.
    Bare,
    /// The description prompts, plus the bare prompt when `include_bare`.
    /// Falls back to the bare prompt for classes without description
    /// embeddings.
    Described { include_bare: bool },
}

/// Text rows averaged for `(template, class)` under `mode`.
///
/// The flag is true when `Described` was requested but the class has no
/// description embeddings, so the bare prompt was used instead.
pub fn active_rows(
    bank: &TextBank,
    template: usize,
    class: usize,
    mode: VariantMode,
) -> Result<(Vec<usize>, bool)> {
    let catalog = bank.catalog();
    if template >= catalog.num_templates() || class >= catalog.num_classes() {
        return Err(Error::MissingVariant {
            template,
            class,
            variant: 0,
        });
    }
    let bare = catalog.bare_row(template, class);
    match mode {
        VariantMode::Bare => Ok((vec![bare], false)),
        VariantMode::Described { include_bare } => {
            let described = catalog.description_rows(template, class);
            if described.is_empty() {
                return Ok((vec![bare], true));
            }
            let mut rows = Vec::with_capacity(described.len() + 1);
            if include_bare {
                rows.push(bare);
            }
            rows.extend_from_slice(described);
            Ok((rows, false))
        }
    }
}

fn mean_similarity(image: &[f32], texts: &EmbeddingMatrix, rows: &[usize]) -> f32 {
    let sum: f64 = rows.iter().map(|&r| dot(image, texts.row(r))).sum();
    (sum / rows.len() as f64) as f32
}

/// Mean cosine similarity between `image` and the active variants of
/// `(template, class)`. With a single variant this is exactly
/// [`cosine_similarity`].
pub fn class_similarity(
    image: &[f32],
    template: usize,
    class: usize,
    bank: &TextBank,
    mode: VariantMode,
) -> Result<f32> {
    if image.len() != bank.dim() {
        return Err(Error::DimensionMismatch {
            left: image.len(),
            right: bank.dim(),
        });
    }
    let (rows, _) = active_rows(bank, template, class, mode)?;
    Ok(mean_similarity(image, bank.embeddings(), &rows))
}

/// Image-by-class score matrix for one template, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    images: usize,
    classes: usize,
    values: Vec<f32>,
}

impl SimilarityMatrix {
    pub fn new(images: usize, classes: usize, values: Vec<f32>) -> Result<Self> {
        if images == 0 || classes == 0 {
            return Err(Error::Empty("similarity matrix"));
        }
        if images.checked_mul(classes) != Some(values.len()) {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {images}x{classes} similarity matrix",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: i / classes,
                col: i % classes,
            });
        }
        Ok(Self {
            images,
            classes,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::ShapeMismatch("ragged similarity rows".into()));
        }
        Self::new(rows.len(), classes, rows.concat())
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, image: usize) -> &[f32] {
        &self.values[image * self.classes..(image + 1) * self.classes]
    }

    pub fn get(&self, image: usize, class: usize) -> f32 {
        self.values[image * self.classes + class]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.classes)
    }
}

/// Scores of every image against every class under one template. `modes`
/// gives the variant mode of each class.
pub fn similarity_matrix(
    images: &EmbeddingMatrix,
    bank: &TextBank,
    template: usize,
    modes: &[VariantMode],
) -> Result<SimilarityMatrix> {
    let n_classes = bank.catalog().num_classes();
    if modes.len() != n_classes {
        return Err(Error::LengthMismatch {
            what: "variant modes vs classes",
            left: modes.len(),
            right: n_classes,
        });
    }
    if images.dim() != bank.dim() {
        return Err(Error::DimensionMismatch {
            left: images.dim(),
            right: bank.dim(),
        });
    }
    let rows: Vec<Vec<usize>> = modes
        .iter()
        .enumerate()
        .map(|(c, &mode)| active_rows(bank, template, c, mode).map(|(r, _)| r))
        .collect::<Result<_>>()?;

    let texts = bank.embeddings();
    let mut values = vec![0.0f32; images.rows() * n_classes];
    values
        .par_chunks_mut(n_classes)
        .enumerate()
        .for_each(|(x, out)| {
            let image = images.row(x);
            for (slot, class_rows) in out.iter_mut().zip(&rows) {
                *slot = mean_similarity(image, texts, class_rows);
            }
        });
    SimilarityMatrix::new(images.rows(), n_classes, values)
}

pub fn bare_similarity_matrix(
    images: &EmbeddingMatrix,
    bank: &TextBank,
    template: usize,
) -> Result<SimilarityMatrix> {
    let modes = vec![VariantMode::Bare; bank.catalog().num_classes()];
    similarity_matrix(images, bank, template, &modes)
}

/// One similarity matrix per template, all of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTensor {
    templates: Vec<SimilarityMatrix>,
}

impl SimilarityTensor {
    pub fn new(templates: Vec<SimilarityMatrix>) -> Result<Self> {
        let first = templates.first().ok_or(Error::Empty("similarity tensor"))?;
        let shape = (first.images(), first.classes());
        if let Some(t) = templates
            .iter()
            .position(|s| (s.images(), s.classes()) != shape)
        {
            return Err(Error::ShapeMismatch(format!(
                "template {t} has shape {}x{}, expected {}x{}",
                templates[t].images(),
                templates[t].classes(),
                shape.0,
                shape.1
            )));
        }
        Ok(Self { templates })
    }

    pub fn num_templates(&self) -> usize {
        self.templates.len()
    }

    pub fn images(&self) -> usize {
        self.templates[0].images()
    }

    pub fn classes(&self) -> usize {
        self.templates[0].classes()
    }

    pub fn template(&self, t: usize) -> &SimilarityMatrix {
        &self.templates[t]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SimilarityMatrix> {
        self.templates.iter()
    }
}

/// Builds the full tensor; `modes[t][c]` is the variant mode of class `c`
/// under template `t`.
pub fn similarity_tensor(
    images: &EmbeddingMatrix,
    bank: &TextBank,
    modes: &[Vec<VariantMode>],
) -> Result<SimilarityTensor> {
    let m = bank.catalog().num_templates();
    if modes.len() != m {
        return Err(Error::LengthMismatch {
            what: "variant modes vs templates",
            left: modes.len(),
            right: m,
        });
    }
    let templates = modes
        .iter()
        .enumerate()
        .map(|(t, per_class)| similarity_matrix(images, bank, t, per_class))
        .collect::<Result<_>>()?;
    SimilarityTensor::new(templates)
}

pub fn bare_similarity_tensor(
    images: &EmbeddingMatrix,
    bank: &TextBank,
) -> Result<SimilarityTensor> {
    let catalog = bank.catalog();
    let modes = vec![vec![VariantMode::Bare; catalog.num_classes()]; catalog.num_templates()];
    similarity_tensor(images, bank, &modes)
}

/// Index of the largest score; ties go to the lowest index.
pub fn predict<T: Copy + PartialOrd>(scores: &[T]) -> Result<usize> {
    let (first, rest) = scores.split_first().ok_or(Error::Empty("score row"))?;
    let mut best = 0;
    let mut best_score = *first;
    for (i, &s) in rest.iter().enumerate() {
        if s > best_score {
            best = i + 1;
            best_score = s;
        }
    }
    Ok(best)
}

/// Per-class mean similarity matrix: entry `(i, j)` is the average score
/// against class `j` of the images assigned to class `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct HMatrix {
    classes: usize,
    values: Vec<f64>,
    counts: Vec<usize>,
}

impl HMatrix {
    /// Builds an H matrix directly. Rows with a zero count are empty and
    /// their values are ignored.
    pub fn new(rows: Vec<Vec<f64>>, counts: Vec<usize>) -> Result<Self> {
        let classes = rows.len();
        if classes == 0 {
            return Err(Error::Empty("h matrix"));
        }
        if rows.iter().any(|r| r.len() != classes) || counts.len() != classes {
            return Err(Error::ShapeMismatch(
                "h matrix must be square with one count per row".into(),
            ));
        }
        Ok(Self {
            classes,
            values: rows.concat(),
            counts,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.classes + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn is_empty_row(&self, i: usize) -> bool {
        self.counts[i] == 0
    }
}

/// Estimates the H matrix of one template from a class assignment per image.
pub fn empirical_h(scores: &SimilarityMatrix, labels: &[usize]) -> Result<HMatrix> {
    let n = scores.classes();
    if labels.len() != scores.images() {
        return Err(Error::LengthMismatch {
            what: "labels vs image rows",
            left: labels.len(),
            right: scores.images(),
        });
    }
    crate::dataset::check_labels(labels, n)?;
    let mut sums = vec![0.0f64; n * n];
    let mut counts = vec![0usize; n];
    for (row, &label) in scores.iter_rows().zip(labels) {
        counts[label] += 1;
        for (acc, &s) in sums[label * n..(label + 1) * n].iter_mut().zip(row) {
            *acc += f64::from(s);
        }
    }
    for (i, &count) in counts.iter().enumerate() {
        if count > 0 {
            for v in &mut sums[i * n..(i + 1) * n] {
                *v /= count as f64;
            }
        }
    }
    Ok(HMatrix {
        classes: n,
        values: sums,
        counts,
    })
}
