//! Prompt catalog, its JSON manifest, and the text bank pairing it with the
//! text embedding matrix.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::EmbeddingMatrix;
use crate::error::{Error, Result};

/// The fill slot every template carries exactly once.
pub const SLOT: &str = "{}";

/// One row of the manifest's `variant_index` array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantEntry {
    pub template: usize,
    pub class: usize,
    pub variant: usize,
    pub row: usize,
}

/// Wire form of the manifest, field for field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub templates: Vec<String>,
    #[serde(default)]
    pub descriptions: BTreeMap<String, Vec<String>>,
    pub variant_index: Vec<VariantEntry>,
}

/// Class names, templates, per-class descriptions and the
/// `(template, class, variant) -> text row` map.
///
/// Variant 0 of every `(template, class)` pair is the bare prompt; variants
/// `1..` are description prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptCatalog {
    class_names: Vec<String>,
    templates: Vec<String>,
    descriptions: Vec<Vec<String>>,
    // rows[template][class][variant]
    rows: Vec<Vec<Vec<usize>>>,
}

impl PromptCatalog {
    pub fn new(
        class_names: Vec<String>,
        templates: Vec<String>,
        descriptions: Vec<Vec<String>>,
        variant_index: &[VariantEntry],
    ) -> Result<Self> {
        let n = class_names.len();
        let m = templates.len();
        if n < 2 {
            return Err(Error::TooFewClasses(n));
        }
        if m == 0 {
            return Err(Error::InvalidManifest("no templates".into()));
        }
        for (i, t) in templates.iter().enumerate() {
            let slots = t.matches(SLOT).count();
            if slots != 1 {
                return Err(Error::InvalidManifest(format!(
                    "template {i} {t:?} has {slots} fill slots, expected 1"
                )));
            }
        }
        if descriptions.len() != n {
            return Err(Error::InvalidManifest(format!(
                "descriptions cover {} classes, expected {n}",
                descriptions.len()
            )));
        }

        let mut slots: Vec<Vec<Vec<Option<usize>>>> = vec![vec![Vec::new(); n]; m];
        let mut seen_rows = HashSet::with_capacity(variant_index.len());
        for e in variant_index {
            if e.template >= m || e.class >= n {
                return Err(Error::InvalidManifest(format!(
                    "variant entry {e:?} references a missing template or class"
                )));
            }
            if !seen_rows.insert(e.row) {
                return Err(Error::InvalidManifest(format!(
                    "row {} is mapped more than once",
                    e.row
                )));
            }
            let cell = &mut slots[e.template][e.class];
            if cell.len() <= e.variant {
                cell.resize(e.variant + 1, None);
            }
            if cell[e.variant].replace(e.row).is_some() {
                return Err(Error::InvalidManifest(format!(
                    "duplicate entry for template {}, class {}, variant {}",
                    e.template, e.class, e.variant
                )));
            }
        }

        let mut rows = Vec::with_capacity(m);
        for (t, per_class) in slots.into_iter().enumerate() {
            let mut out = Vec::with_capacity(n);
            for (c, cell) in per_class.into_iter().enumerate() {
                if cell.is_empty() {
                    return Err(Error::MissingVariant {
                        template: t,
                        class: c,
                        variant: 0,
                    });
                }
                let filled: Vec<usize> = cell
                    .iter()
                    .enumerate()
                    .map(|(v, r)| {
                        r.ok_or(Error::MissingVariant {
                            template: t,
                            class: c,
                            variant: v,
                        })
                    })
                    .collect::<Result<_>>()?;
                let extra = filled.len() - 1;
                if extra != 0 && extra != descriptions[c].len() {
                    return Err(Error::InvalidManifest(format!(
                        "template {t}, class {c}: {extra} description variants for {} descriptions",
                        descriptions[c].len()
                    )));
                }
                out.push(filled);
            }
            rows.push(out);
        }

        Ok(Self {
            class_names,
            templates,
            descriptions,
            rows,
        })
    }

    pub fn from_manifest(manifest: Manifest) -> Result<Self> {
        let n = manifest.class_names.len();
        let mut descriptions = vec![Vec::new(); n];
        for (key, list) in manifest.descriptions {
            let class: usize = key.parse().map_err(|_| {
                Error::InvalidManifest(format!("description key {key:?} is not a class index"))
            })?;
            if class >= n {
                return Err(Error::InvalidManifest(format!(
                    "description key {class} out of range for {n} classes"
                )));
            }
            descriptions[class] = list;
        }
        Self::new(
            manifest.class_names,
            manifest.templates,
            descriptions,
            &manifest.variant_index,
        )
    }

    pub fn to_manifest(&self) -> Manifest {
        let descriptions = self
            .descriptions
            .iter()
            .enumerate()
            .filter(|(_, d)| !d.is_empty())
            .map(|(c, d)| (c.to_string(), d.clone()))
            .collect();
        let mut variant_index = Vec::new();
        for (t, per_class) in self.rows.iter().enumerate() {
            for (c, variants) in per_class.iter().enumerate() {
                for (v, &row) in variants.iter().enumerate() {
                    variant_index.push(VariantEntry {
                        template: t,
                        class: c,
                        variant: v,
                        row,
                    });
                }
            }
        }
        Manifest {
            class_names: self.class_names.clone(),
            templates: self.templates.clone(),
            descriptions,
            variant_index,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_templates(&self) -> usize {
        self.templates.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn templates(&self) -> &[String] {
        &self.templates
    }

    pub fn descriptions(&self, class: usize) -> &[String] {
        &self.descriptions[class]
    }

    /// Text rows of every variant of `(template, class)`, variant 0 first.
    pub fn variant_rows(&self, template: usize, class: usize) -> &[usize] {
        &self.rows[template][class]
    }

    pub fn bare_row(&self, template: usize, class: usize) -> usize {
        self.rows[template][class][0]
    }

    /// Rows of the description prompts only (variants `1..`); empty when the
    /// class has no description embeddings under this template.
    pub fn description_rows(&self, template: usize, class: usize) -> &[usize] {
        &self.rows[template][class][1..]
    }

    pub fn total_variants(&self) -> usize {
        self.rows.iter().flatten().map(Vec::len).sum()
    }

    fn max_row(&self) -> Option<usize> {
        self.rows.iter().flatten().flatten().copied().max()
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<PromptCatalog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    PromptCatalog::from_manifest(manifest)
}

pub fn write_manifest(catalog: &PromptCatalog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(&catalog.to_manifest())?;
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses a template pool: one template per line, each with exactly one fill
/// slot, no duplicates. Blank lines are skipped.
pub fn parse_template_pool(text: &str) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    let mut pool = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let slots = line.matches(SLOT).count();
        if slots != 1 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("{slots} fill slots, expected 1"),
            });
        }
        if !seen.insert(line) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("duplicate template {line:?}"),
            });
        }
        pool.push(line.to_string());
    }
    if pool.is_empty() {
        return Err(Error::Empty("template pool"));
    }
    Ok(pool)
}

pub fn read_template_pool(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    parse_template_pool(&text)
}

/// Resolves a descriptions document (class name → description strings) to
/// per-class lists in `class_names` order. Classes missing from the document
/// get no descriptions; names not in `class_names` are an error.
pub fn resolve_descriptions(
    document: &BTreeMap<String, Vec<String>>,
    class_names: &[String],
) -> Result<Vec<Vec<String>>> {
    if let Some(unknown) = document.keys().find(|k| !class_names.contains(k)) {
        return Err(Error::InvalidManifest(format!(
            "descriptions name unknown class {unknown:?}"
        )));
    }
    Ok(class_names
        .iter()
        .map(|c| document.get(c).cloned().unwrap_or_default())
        .collect())
}

/// The descriptions document of a catalog, omitting classes without any.
pub fn descriptions_document(catalog: &PromptCatalog) -> BTreeMap<String, Vec<String>> {
    catalog
        .class_names()
        .iter()
        .enumerate()
        .filter(|(c, _)| !catalog.descriptions(*c).is_empty())
        .map(|(c, name)| (name.clone(), catalog.descriptions(c).to_vec()))
        .collect()
}

pub fn read_descriptions(
    path: impl AsRef<Path>,
    class_names: &[String],
) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    let document: BTreeMap<String, Vec<String>> = serde_json::from_str(&text)?;
    resolve_descriptions(&document, class_names)
}

pub fn write_descriptions(catalog: &PromptCatalog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(&descriptions_document(catalog))?;
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Text embeddings together with the catalog that indexes them.
#[derive(Debug, Clone)]
pub struct TextBank {
    embeddings: EmbeddingMatrix,
    catalog: PromptCatalog,
}

impl TextBank {
    pub fn new(embeddings: EmbeddingMatrix, catalog: PromptCatalog) -> Result<Self> {
        if let Some(max) = catalog.max_row() {
            if max >= embeddings.rows() {
                return Err(Error::InvalidManifest(format!(
                    "manifest references row {max} but the text container has {} rows",
                    embeddings.rows()
                )));
            }
        }
        Ok(Self {
            embeddings,
            catalog,
        })
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn catalog(&self) -> &PromptCatalog {
        &self.catalog
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }
}
