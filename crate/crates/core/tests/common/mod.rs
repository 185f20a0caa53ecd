//! Test-only oracles. Everything here is written as plain loops over nested
//! vectors and shares no code path with the library beyond the input types.

#![allow(dead_code, clippy::needless_range_loop)]

use cpe::catalog::{PromptCatalog, TextBank, VariantEntry};
use cpe::EmbeddingMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<Vec<f32>> {
    (0..rows)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| (x / n) as f32).collect()
        })
        .collect()
}

/// Random bank: `m` templates, `n` classes, and `0..=max_desc` description
/// variants per class.
pub fn random_bank(
    rng: &mut ChaCha8Rng,
    m: usize,
    n: usize,
    dim: usize,
    max_desc: usize,
) -> TextBank {
    let desc_counts: Vec<usize> = (0..n).map(|_| rng.random_range(0..=max_desc)).collect();
    let mut index = Vec::new();
    let mut rows = 0;
    for t in 0..m {
        for (c, &d) in desc_counts.iter().enumerate() {
            for v in 0..=d {
                index.push(VariantEntry {
                    template: t,
                    class: c,
                    variant: v,
                    row: rows,
                });
                rows += 1;
            }
        }
    }
    let texts = random_unit_rows(rng, rows, dim);
    let descriptions = desc_counts
        .iter()
        .map(|&d| (0..d).map(|i| format!("d{i}")).collect())
        .collect();
    let catalog = PromptCatalog::new(
        (0..n).map(|c| format!("c{c}")).collect(),
        (0..m).map(|t| format!("t{t} {{}}")).collect(),
        descriptions,
        &index,
    )
    .unwrap();
    TextBank::new(EmbeddingMatrix::from_rows(&texts, true).unwrap(), catalog).unwrap()
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

/// Rows averaged for `(t, c)`: descriptions when `described` and present
/// (plus the bare row if `include_bare`), otherwise the bare row.
pub fn reference_rows(
    bank: &TextBank,
    t: usize,
    c: usize,
    described: bool,
    include_bare: bool,
) -> Vec<usize> {
    let all = bank.catalog().variant_rows(t, c);
    if described && all.len() > 1 {
        if include_bare {
            all.to_vec()
        } else {
            all[1..].to_vec()
        }
    } else {
        vec![all[0]]
    }
}

/// Double loop over images and classes.
pub fn reference_similarity(
    images: &EmbeddingMatrix,
    bank: &TextBank,
    t: usize,
    described: &[bool],
    include_bare: bool,
) -> Vec<Vec<f64>> {
    let n = bank.catalog().num_classes();
    let mut out = vec![vec![0.0; n]; images.rows()];
    for x in 0..images.rows() {
        for c in 0..n {
            let rows = reference_rows(bank, t, c, described[c], include_bare);
            let mut s = 0.0;
            for &r in &rows {
                s += dot(images.row(x), bank.embeddings().row(r));
            }
            out[x][c] = s / rows.len() as f64;
        }
    }
    out
}

pub fn reference_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

/// Per-class means by double loop; `None` for empty classes.
pub fn reference_h(s: &[Vec<f64>], labels: &[usize], n: usize) -> Vec<Option<Vec<f64>>> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let members: Vec<usize> = (0..s.len()).filter(|&x| labels[x] == i).collect();
        if members.is_empty() {
            out.push(None);
            continue;
        }
        let mut row = vec![0.0; n];
        for j in 0..n {
            let mut sum = 0.0;
            for &x in &members {
                sum += s[x][j];
            }
            row[j] = sum / members.len() as f64;
        }
        out.push(Some(row));
    }
    out
}

pub fn reference_cmm(h: &[Option<Vec<f64>>]) -> Vec<f64> {
    let n = h.len();
    (0..n)
        .map(|i| match &h[i] {
            None => f64::NEG_INFINITY,
            Some(row) => {
                let mut rival = f64::NEG_INFINITY;
                for j in 0..n {
                    if j != i && row[j] > rival {
                        rival = row[j];
                    }
                }
                row[i] - rival
            }
        })
        .collect()
}

/// Every size-`k` subset of `0..n`.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == k {
            out.push((0..n).filter(|&i| mask & (1 << i) != 0).collect());
        }
    }
    out
}

/// `min over |K| = k of (1/k) Σ_{i∈K} v_i`, each subset summed in ascending
/// value order (one canonical order per subset, so equal multisets give equal
/// sums).
pub fn brute_force_worst_k(values: &[f64], k: usize) -> f64 {
    let mut best = f64::INFINITY;
    for subset in subsets(values.len(), k) {
        let mut vals: Vec<f64> = subset.iter().map(|&i| values[i]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut sum = 0.0;
        for v in vals {
            sum += v;
        }
        let mean = sum / k as f64;
        if mean < best {
            best = mean;
        }
    }
    best
}

/// The `k` indices of smallest value by full sort, ties to the lower index.
pub fn sort_worst(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut w = idx[..k].to_vec();
    w.sort();
    w
}

/// Straight-line re-implementation of the margin-weighted pipeline used to
/// produce golden predictions.
pub fn reference_cpe(
    images: &EmbeddingMatrix,
    bank: &TextBank,
    k: usize,
    augment: bool,
    include_bare: bool,
) -> Vec<usize> {
    let cat = bank.catalog();
    let (m, n) = (cat.num_templates(), cat.num_classes());
    let mut sims = Vec::with_capacity(m);
    let mut scores = Vec::with_capacity(m);
    for t in 0..m {
        let bare = reference_similarity(images, bank, t, &vec![false; n], include_bare);
        let labels: Vec<usize> = bare.iter().map(|r| reference_argmax(r)).collect();
        let margins = reference_cmm(&reference_h(&bare, &labels, n));
        let mut s = bare;
        if augment {
            let worst = sort_worst(&margins, k);
            let mut described = vec![false; n];
            for c in worst {
                described[c] = true;
            }
            s = reference_similarity(images, bank, t, &described, include_bare);
        }
        let labels: Vec<usize> = s.iter().map(|r| reference_argmax(r)).collect();
        let margins = reference_cmm(&reference_h(&s, &labels, n));
        let mut finite: Vec<f64> = margins.into_iter().filter(|v| v.is_finite()).collect();
        finite.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let kk = k.min(finite.len());
        scores.push(finite[..kk].iter().sum::<f64>() / kk as f64);
        sims.push(s);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let mut sorted = weights.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tau = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0
    };
    (0..images.rows())
        .map(|x| {
            let mut row = vec![0.0; n];
            for t in 0..m {
                if weights[t] >= tau {
                    for j in 0..n {
                        row[j] += weights[t] * sims[t][x][j];
                    }
                }
            }
            reference_argmax(&row)
        })
        .collect()
}

/// Plain mean over templates of bare-prompt scores, then argmax.
pub fn reference_prompt_ensemble(images: &EmbeddingMatrix, bank: &TextBank) -> Vec<usize> {
    let cat = bank.catalog();
    let (m, n) = (cat.num_templates(), cat.num_classes());
    let sims: Vec<_> = (0..m)
        .map(|t| reference_similarity(images, bank, t, &vec![false; n], false))
        .collect();
    (0..images.rows())
        .map(|x| {
            let row: Vec<f64> = (0..n)
                .map(|j| (0..m).map(|t| sims[t][x][j]).sum::<f64>() / m as f64)
                .collect();
            reference_argmax(&row)
        })
        .collect()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            r[p] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..ra.len() {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma).powi(2);
        vb += (rb[i] - mb).powi(2);
    }
    cov / (va * vb).sqrt()
}

/// Worst-k accuracy of one prediction vector, computed directly.
pub fn reference_worst_accuracy(pred: &[usize], labels: &[usize], n: usize, k: usize) -> f64 {
    let mut acc = Vec::new();
    for c in 0..n {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if !idx.is_empty() {
            let correct = idx.iter().filter(|&&i| pred[i] == c).count();
            acc.push(correct as f64 / idx.len() as f64);
        }
    }
    acc.sort_by(|a, b| a.partial_cmp(b).unwrap());
    acc[..k].iter().sum::<f64>() / k as f64
}
