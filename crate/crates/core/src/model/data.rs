//! Datasets: Gaussian blobs, CSV files and IDX (MNIST-style) files.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::rng::seeded;

/// Share of samples assigned to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn new(features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        ensure_len("labels vs feature rows", features.nrows(), labels.len())?;
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows `indices` (repeats allowed) as a new split.
    pub fn select(&self, indices: &[usize]) -> Split {
        let features = Array2::from_shape_fn((indices.len(), self.dim()), |(r, c)| self.features[[indices[r], c]]);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Split { features, labels }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
    pub num_classes: usize,
}

impl Dataset {
    /// Splits `all` in order: the first `TRAIN_FRACTION` rows train, the rest test.
    pub fn from_ordered(all: Split, num_classes: usize) -> Result<Self> {
        if all.len() < 2 {
            return Err(Error::InvalidArgument("dataset needs at least two samples".into()));
        }
        if let Some(&bad) = all.labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} >= class count {num_classes}")));
        }
        let n_train = ((all.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1, all.len() - 1);
        let train_idx: Vec<usize> = (0..n_train).collect();
        let test_idx: Vec<usize> = (n_train..all.len()).collect();
        Ok(Self {
            train: all.select(&train_idx),
            test: all.select(&test_idx),
            num_classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }
}

/// Gaussian-blob classification problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub seed: u64,
    pub samples: usize,
    pub dim: usize,
    pub classes: usize,
    pub spread: f64,
}

/// `classes` isotropic clusters around random unit-norm centers; labels are
/// balanced and the sample order is shuffled before the 80/20 split.
pub fn synth_dataset(spec: &BlobSpec) -> Result<Dataset> {
    if spec.classes < 2 || spec.samples < spec.classes {
        return Err(Error::InvalidArgument(format!(
            "need samples >= classes >= 2, got samples={} classes={}",
            spec.samples, spec.classes
        )));
    }
    if spec.dim == 0 || !(spec.spread >= 0.0) {
        return Err(Error::InvalidArgument("blob dim must be >= 1 and spread >= 0".into()));
    }
    let mut rng = seeded(spec.seed);
    let mut centers = Array2::<f64>::zeros((spec.classes, spec.dim));
    for mut row in centers.rows_mut() {
        loop {
            row.mapv_inplace(|_| StandardNormal.sample(&mut rng));
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row.mapv_inplace(|v| v / norm);
                break;
            }
        }
    }
    let mut labels: Vec<usize> = (0..spec.samples).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Array2::<f64>::zeros((spec.samples, spec.dim));
    for (i, &label) in labels.iter().enumerate() {
        for j in 0..spec.dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            features[[i, j]] = centers[[label, j]] + spec.spread * z;
        }
    }
    Dataset::from_ordered(Split::new(features, labels)?, spec.classes)
}

/// Reads a CSV with a header row, `d` feature columns and a trailing integer
/// label column. Rows are split 80/20 in file order.
pub fn read_csv_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let width = reader.headers()?.len();
    if width < 2 {
        return Err(Error::Format("CSV needs at least one feature column and a label".into()));
    }
    let mut flat = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        ensure_len("CSV row width", width, record.len())?;
        for field in record.iter().take(width - 1) {
            flat.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {}: {e}", line + 2)))?,
            );
        }
        let label = record[width - 1]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Format(format!("row {} label: {e}", line + 2)))?;
        labels.push(label);
    }
    let features = Array2::from_shape_vec((labels.len(), width - 1), flat)
        .map_err(|e| Error::Format(e.to_string()))?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::from_ordered(Split::new(features, labels)?, num_classes)
}

/// Writes train rows followed by test rows in the CSV layout read by
/// [`read_csv_dataset`].
pub fn write_csv_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..data.dim())
        .map(|j| format!("x{j}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for split in [&data.train, &data.test] {
        for (row, label) in split.features.rows().into_iter().zip(&split.labels) {
            let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{},{label}", fields.join(","))?;
        }
    }
    out.flush()?;
    Ok(())
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

/// IDX unsigned-byte image file, scaled to `[0, 1]`, one flattened image per row.
pub fn read_idx_images(path: &Path) -> Result<Array2<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_u32_be(&mut r)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let count = read_u32_be(&mut r)? as usize;
    let rows = read_u32_be(&mut r)? as usize;
    let cols = read_u32_be(&mut r)? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("IDX image dimensions overflow".into()))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != len {
        return Err(Error::Format(format!("IDX image payload {} bytes, expected {len}", bytes.len())));
    }
    let data = bytes.into_iter().map(|b| b as f64 / 255.0).collect();
    Array2::from_shape_vec((count, rows * cols), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_u32_be(&mut r)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let count = read_u32_be(&mut r)? as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count {
        return Err(Error::Format(format!("IDX label payload {} bytes, expected {count}", bytes.len())));
    }
    Ok(bytes.into_iter().map(usize::from).collect())
}

pub fn read_idx_dataset(images: &Path, labels: &Path) -> Result<Dataset> {
    let features = read_idx_images(images)?;
    let labels = read_idx_labels(labels)?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::from_ordered(Split::new(features, labels)?, num_classes)
}
