//! Image sets and the line-oriented label/prediction files.

use std::fs;
use std::path::Path;

use crate::container::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Image embeddings with optional ground-truth labels.
///
/// Labels exist for evaluation only. Nothing in `matcher`, `cmm` or
/// `ensemble` takes this type: those operate on the bare embeddings.
#[derive(Debug, Clone)]
pub struct LabeledImageSet {
    embeddings: EmbeddingMatrix,
    labels: Option<Vec<usize>>,
}

impl LabeledImageSet {
    pub fn new(
        embeddings: EmbeddingMatrix,
        labels: Option<Vec<usize>>,
        num_classes: usize,
    ) -> Result<Self> {
        if let Some(labels) = &labels {
            if labels.len() != embeddings.rows() {
                return Err(Error::LengthMismatch {
                    what: "labels vs image rows",
                    left: labels.len(),
                    right: embeddings.rows(),
                });
            }
            check_labels(labels, num_classes)?;
        }
        Ok(Self { embeddings, labels })
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    match labels.iter().position(|&l| l >= num_classes) {
        Some(index) => Err(Error::LabelOutOfRange {
            index,
            label: labels[index],
            classes: num_classes,
        }),
        None => Ok(()),
    }
}

/// Parses one decimal class index per line. Blank lines are only allowed at
/// the end of the file.
pub fn parse_indices(text: &str) -> Result<Vec<usize>> {
    let lines: Vec<&str> = text.lines().collect();
    let used = lines
        .iter()
        .rposition(|l| !l.trim().is_empty())
        .map_or(0, |p| p + 1);
    lines[..used]
        .iter()
        .enumerate()
        .map(|(i, line)| {
            line.trim().parse::<usize>().map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("{line:?}: {e}"),
            })
        })
        .collect()
}

pub fn format_indices(indices: &[usize]) -> String {
    let mut out = String::with_capacity(indices.len() * 4);
    for i in indices {
        out.push_str(&i.to_string());
        out.push('\n');
    }
    out
}

pub fn read_indices(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_indices(&text)
}

pub fn write_indices(indices: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_indices(indices)).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}
