//! Seeded synthetic embedding sets: Gaussian image clusters around class
//! prototypes, and per-template prompt embeddings whose quality is controlled
//! by a noise level. Used by the test suites and for trying the CLI without
//! real embeddings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::catalog::{PromptCatalog, TextBank, VariantEntry};
use crate::container::EmbeddingMatrix;
use crate::error::Result;

/// A template whose prompts share one dominant direction unrelated to the
/// classes, like a "satellite photo" template applied to everyday photos.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasedTemplate {
    /// Weight of the shared direction relative to the unit class prototype.
    pub strength: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Spread of images around their prototype.
    pub image_noise: f64,
    /// When set, every odd class prototype sits this far from the preceding
    /// even one, producing confusable pairs.
    pub pair_offset: Option<f64>,
    /// Prompt noise of each ordinary template.
    pub template_noise: Vec<f64>,
    /// Appended after the ordinary templates.
    pub biased_template: Option<BiasedTemplate>,
    pub descriptions_per_class: usize,
    pub description_noise: f64,
    /// Classes that get no description prompts.
    pub undescribed: Vec<usize>,
    pub seed: u64,
}

impl ClusterSpec {
    /// 20 classes, 200 images each, 25 templates with prompt noise graded
    /// from 0.05 to 0.8.
    pub fn graded_templates(seed: u64) -> Self {
        let m = 25;
        Self {
            classes: 20,
            per_class: 200,
            dim: 64,
            image_noise: 0.4,
            pair_offset: Some(0.35),
            template_noise: (0..m)
                .map(|i| 0.05 + 0.75 * i as f64 / (m - 1) as f64)
                .collect(),
            biased_template: None,
            descriptions_per_class: 0,
            description_noise: 0.0,
            undescribed: Vec::new(),
            seed,
        }
    }

    /// Four informative templates plus one domain-biased template (last).
    pub fn planted_bias(seed: u64) -> Self {
        Self {
            classes: 10,
            per_class: 100,
            dim: 32,
            image_noise: 0.4,
            pair_offset: Some(0.35),
            template_noise: vec![0.2, 0.25, 0.3, 0.35],
            biased_template: Some(BiasedTemplate {
                strength: 3.0,
                noise: 1.0,
            }),
            descriptions_per_class: 3,
            description_noise: 0.15,
            undescribed: Vec::new(),
            seed,
        }
    }

    /// Small set used for the committed golden files.
    pub fn golden() -> Self {
        Self {
            classes: 6,
            per_class: 6,
            dim: 16,
            image_noise: 0.5,
            pair_offset: Some(0.4),
            template_noise: vec![0.2, 0.4, 0.6, 0.3],
            biased_template: None,
            descriptions_per_class: 2,
            description_noise: 0.2,
            undescribed: vec![5],
            seed: 7,
        }
    }

    pub fn num_templates(&self) -> usize {
        self.template_noise.len() + usize::from(self.biased_template.is_some())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub images: EmbeddingMatrix,
    pub labels: Vec<usize>,
    pub bank: TextBank,
    /// Index of the biased template, if any.
    pub biased: Option<usize>,
}

struct Sampler {
    rng: ChaCha8Rng,
    dim: usize,
}

impl Sampler {
    fn gaussian(&mut self, scale: f64) -> Vec<f64> {
        (0..self.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                scale * z
            })
            .collect()
    }

    fn unit(&mut self) -> Vec<f64> {
        unit(self.gaussian(1.0))
    }

    /// `center + noise · g / sqrt(dim)`, normalized.
    fn around(&mut self, center: &[f64], noise: f64) -> Vec<f64> {
        let scale = noise / (self.dim as f64).sqrt();
        let g = self.gaussian(scale);
        unit(center.iter().zip(g).map(|(c, g)| c + g).collect())
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn generate(spec: &ClusterSpec) -> Result<SyntheticSet> {
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        dim: spec.dim,
    };

    let mut prototypes: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    for c in 0..spec.classes {
        let p = match spec.pair_offset {
            Some(offset) if c % 2 == 1 => {
                let dir = s.unit();
                unit(
                    prototypes[c - 1]
                        .iter()
                        .zip(dir)
                        .map(|(a, d)| a + offset * d)
                        .collect(),
                )
            }
            _ => s.unit(),
        };
        prototypes.push(p);
    }

    let mut image_rows = Vec::with_capacity(spec.classes * spec.per_class);
    let mut labels = Vec::with_capacity(spec.classes * spec.per_class);
    for (c, p) in prototypes.iter().enumerate() {
        for _ in 0..spec.per_class {
            image_rows.push(to_f32(&s.around(p, spec.image_noise)));
            labels.push(c);
        }
    }

    // (noise, optional shared direction) per template
    let mut templates: Vec<(f64, Option<Vec<f64>>)> =
        spec.template_noise.iter().map(|&n| (n, None)).collect();
    if let Some(b) = spec.biased_template {
        let dir: Vec<f64> = s.unit().into_iter().map(|x| b.strength * x).collect();
        templates.push((b.noise, Some(dir)));
    }

    let descriptions: Vec<Vec<String>> = (0..spec.classes)
        .map(|c| {
            if spec.undescribed.contains(&c) {
                Vec::new()
            } else {
                (0..spec.descriptions_per_class)
                    .map(|v| format!("class_{c:02} with distinctive trait {v}"))
                    .collect()
            }
        })
        .collect();

    let mut text_rows = Vec::new();
    let mut index = Vec::new();
    for (t, (noise, shared)) in templates.iter().enumerate() {
        for (c, p) in prototypes.iter().enumerate() {
            let center: Vec<f64> = match shared {
                Some(dir) => p.iter().zip(dir).map(|(a, b)| a + b).collect(),
                None => p.clone(),
            };
            index.push(VariantEntry {
                template: t,
                class: c,
                variant: 0,
                row: text_rows.len(),
            });
            text_rows.push(to_f32(&s.around(&center, *noise)));
            for v in 0..descriptions[c].len() {
                index.push(VariantEntry {
                    template: t,
                    class: c,
                    variant: v + 1,
                    row: text_rows.len(),
                });
                text_rows.push(to_f32(&s.around(&center, spec.description_noise)));
            }
        }
    }

    let class_names = (0..spec.classes).map(|c| format!("class_{c:02}")).collect();
    let template_texts = (0..templates.len())
        .map(|t| format!("synthetic template {t} of a {{}}."))
        .collect();
    let catalog = PromptCatalog::new(class_names, template_texts, descriptions, &index)?;
    let texts = EmbeddingMatrix::from_rows(&text_rows, false)?.normalize_rows()?;
    let images = EmbeddingMatrix::from_rows(&image_rows, false)?.normalize_rows()?;
    Ok(SyntheticSet {
        images,
        labels,
        bank: TextBank::new(texts, catalog)?,
        biased: spec.biased_template.map(|_| spec.template_noise.len()),
    })
}
