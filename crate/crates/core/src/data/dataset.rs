//! Synthetic identity clusters standing in for a face training set, plus the
//! CSV formats for datasets and embeddings.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use super::DataError;
use crate::numerics::Tensor;
use crate::textnum;

/// `K` identities on a radius-`R` hypersphere, `m` Gaussian samples each.
///
/// Centroids are redrawn until every pair is separated by more than four
/// intra-class standard deviations, so the raw data is identity-separable by
/// construction. Everything is a pure function of the argument tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyIdentityDataset {
    pub identity_count: usize,
    pub per_identity: usize,
    pub data_dim: usize,
    pub intra_std: f64,
    pub radius: f64,
    pub seed: u64,
    pub centroids: Tensor,
    pub samples: Tensor,
    pub labels: Vec<usize>,
}

pub fn make_toy_dataset(
    identity_count: usize,
    per_identity: usize,
    data_dim: usize,
    intra_std: f64,
    radius: f64,
    seed: u64,
) -> Result<ToyIdentityDataset, DataError> {
    if identity_count == 0 || per_identity == 0 || data_dim == 0 {
        return Err(DataError::BadArgs("counts and dims must be >= 1".into()));
    }
    if !intra_std.is_finite() || intra_std <= 0.0 || !radius.is_finite() || radius <= 0.0 {
        return Err(DataError::BadArgs(
            "intra_std and radius must be positive".into(),
        ));
    }
    const MAX_ATTEMPTS: usize = 100;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draw = move || -> f64 { StandardNormal.sample(&mut rng) };

    let mut centroids = None;
    for _ in 0..MAX_ATTEMPTS {
        let mut rows = Vec::with_capacity(identity_count);
        for _ in 0..identity_count {
            loop {
                let g: Vec<f64> = (0..data_dim).map(|_| draw()).collect();
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    rows.push(g.into_iter().map(|v| v * radius / norm).collect::<Vec<f64>>());
                    break;
                }
            }
        }
        if min_pairwise_distance(&rows) > 4.0 * intra_std {
            centroids = Some(rows);
            break;
        }
    }
    let centroids = centroids.ok_or(DataError::SeparationUnachievable {
        attempts: MAX_ATTEMPTS,
    })?;

    let mut samples = Vec::with_capacity(identity_count * per_identity);
    let mut labels = Vec::with_capacity(identity_count * per_identity);
    for (id, centroid) in centroids.iter().enumerate() {
        for _ in 0..per_identity {
            let row: Vec<f64> = centroid
                .iter()
                .map(|&c| c + intra_std * draw())
                .collect();
            samples.push(row);
            labels.push(id);
        }
    }

    Ok(ToyIdentityDataset {
        identity_count,
        per_identity,
        data_dim,
        intra_std,
        radius,
        seed,
        centroids: Tensor::from_rows(&centroids)?,
        samples: Tensor::from_rows(&samples)?,
        labels,
    })
}

fn min_pairwise_distance(rows: &[Vec<f64>]) -> f64 {
    let mut min = f64::INFINITY;
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let d: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min = min.min(d);
        }
    }
    min
}

impl ToyIdentityDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Labeled vector rows as loaded back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVectors {
    pub samples: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledVectors {
    pub fn dim(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn write_labeled_rows<'r>(
    path: &Path,
    dim: usize,
    prefix: &str,
    rows: impl Iterator<Item = (usize, &'r [f64])>,
) -> Result<(), DataError> {
    let mut out = String::from("label");
    for j in 0..dim {
        out.push_str(&format!(",{prefix}{j}"));
    }
    out.push('\n');
    for (label, row) in rows {
        if row.len() != dim {
            return Err(DataError::BadArgs(format!(
                "row width {} vs header width {dim}",
                row.len()
            )));
        }
        out.push_str(&label.to_string());
        for v in row {
            out.push(',');
            out.push_str(&textnum::fmt_f64(*v));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| DataError::io(path, e))
}

/// Write `label,<prefix>0,...,<prefix>{d-1}` rows with 17-significant-digit
/// floats (lossless for `f64`).
pub fn save_vectors_csv(
    path: &Path,
    samples: &Tensor,
    labels: &[usize],
    prefix: &str,
) -> Result<(), DataError> {
    if samples.rank() != 2 || samples.shape()[0] != labels.len() {
        return Err(DataError::BadArgs(format!(
            "{} rows vs {} labels",
            samples.shape().first().copied().unwrap_or(0),
            labels.len()
        )));
    }
    let dim = samples.shape()[1];
    write_labeled_rows(
        path,
        dim,
        prefix,
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| (label, samples.row(i).unwrap())),
    )
}

/// Parse a labeled-vector CSV; errors name the offending line.
pub fn load_vectors_csv(path: &Path) -> Result<LabeledVectors, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let parse_err = |line: usize, reason: String| DataError::Parse {
        path: path.display().to_string(),
        line,
        reason,
    };

    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) if !h.trim().is_empty() => h,
        _ => return Err(parse_err(1, "no header".into())),
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "label" {
        return Err(parse_err(1, format!("bad header {header:?}")));
    }
    let dim = cols.len() - 1;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(parse_err(
                line_no,
                format!("expected {} columns, got {}", dim + 1, fields.len()),
            ));
        }
        labels.push(textnum::parse_usize(fields[0]).map_err(|e| parse_err(line_no, e))?);
        let mut row = Vec::with_capacity(dim);
        for f in &fields[1..] {
            row.push(textnum::parse_f64(f).map_err(|e| parse_err(line_no, e))?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    Ok(LabeledVectors {
        samples: Tensor::from_rows(&rows)?,
        labels,
    })
}

pub fn save_dataset(dataset: &ToyIdentityDataset, path: &Path) -> Result<(), DataError> {
    save_vectors_csv(path, &dataset.samples, &dataset.labels, "x")
}

pub fn load_dataset(path: &Path) -> Result<LabeledVectors, DataError> {
    load_vectors_csv(path)
}

/// Embedding export consumed by the evaluation tooling. Empty input writes
/// a header-only file, which is why this surface takes plain rows.
pub fn export_embeddings(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    dim: usize,
    path: &Path,
) -> Result<(), DataError> {
    if embeddings.len() != labels.len() {
        return Err(DataError::BadArgs(format!(
            "{} embeddings vs {} labels",
            embeddings.len(),
            labels.len()
        )));
    }
    write_labeled_rows(
        path,
        dim,
        "c",
        labels
            .iter()
            .zip(embeddings)
            .map(|(&label, row)| (label, row.as_slice())),
    )
}
