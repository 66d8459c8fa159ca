//! Datasets, deterministic retain/forget/validation/test splits, synthetic
//! blob generation, and CSV/binary file ingestion.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::rng::{derive_seed, seeded};

/// Feature matrix (N × dim) with integer labels in `[0, num_classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    features: Mat,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Mat, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Config("dataset must contain at least one sample".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Numeric("dataset features contain NaN/Inf".into()));
        }
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Parse { row, msg: format!("label {l} >= class count {num_classes}") });
        }
        Ok(LabeledDataset { features, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (self.features.row(i), self.labels[i])
    }

    /// Gather rows into a batch matrix plus labels.
    pub fn batch(&self, idx: &[usize]) -> (Mat, Vec<usize>) {
        (self.features.gather_rows(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// Standardize each feature dimension to zero mean, unit variance.
    /// Zero-variance dimensions are left centered only.
    pub fn normalize(&mut self) {
        let n = self.len() as f64;
        let dim = self.dim();
        for j in 0..dim {
            let mut mean = 0.0;
            for i in 0..self.features.rows() {
                mean += self.features.get(i, j);
            }
            mean /= n;
            let mut var = 0.0;
            for i in 0..self.features.rows() {
                let d = self.features.get(i, j) - mean;
                var += d * d;
            }
            var /= n;
            let std = var.sqrt();
            let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
            for i in 0..self.features.rows() {
                let v = (self.features.get(i, j) - mean) * scale;
                self.features.set(i, j, v);
            }
        }
    }
}

/// How the forget set is chosen from the train pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgetKind {
    RandomFraction,
    ClassWise,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForgetScheme {
    pub kind: ForgetKind,
    /// Fraction of the train pool to forget (random scheme).
    pub fraction: f64,
    /// Class whose samples are forgotten (class-wise scheme).
    pub class_id: usize,
    pub seed: u64,
}

impl ForgetScheme {
    pub fn random(fraction: f64, seed: u64) -> Self {
        ForgetScheme { kind: ForgetKind::RandomFraction, fraction, class_id: 0, seed }
    }

    pub fn class_wise(class_id: usize, seed: u64) -> Self {
        ForgetScheme { kind: ForgetKind::ClassWise, fraction: 0.10, class_id, seed }
    }
}

impl Default for ForgetScheme {
    fn default() -> Self {
        ForgetScheme::random(0.10, 0)
    }
}

/// Index lists into a (train pool, eval pool) dataset pair.
/// retain ∪ forget partitions the train pool; validation and test partition
/// the eval pool.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitSet {
    pub retain: Vec<usize>,
    pub forget: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Build splits deterministically from the scheme seed.
pub fn make_splits(
    train_pool: &LabeledDataset,
    eval_pool: &LabeledDataset,
    scheme: &ForgetScheme,
) -> Result<SplitSet> {
    if eval_pool.is_empty() {
        return Err(Error::Config("eval pool must be nonempty".into()));
    }
    let n = train_pool.len();
    let (forget, retain) = match scheme.kind {
        ForgetKind::RandomFraction => {
            if !(0.0..1.0).contains(&scheme.fraction) || scheme.fraction <= 0.0 {
                return Err(Error::Config(format!(
                    "forget fraction {} outside (0,1)",
                    scheme.fraction
                )));
            }
            let count = (scheme.fraction * n as f64).round() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut seeded(derive_seed(scheme.seed, "forget", 0)));
            let mut forget: Vec<usize> = order[..count].to_vec();
            let mut retain: Vec<usize> = order[count..].to_vec();
            forget.sort_unstable();
            retain.sort_unstable();
            (forget, retain)
        }
        ForgetKind::ClassWise => {
            if scheme.class_id >= train_pool.num_classes() {
                return Err(Error::Config(format!(
                    "forget class {} >= class count {}",
                    scheme.class_id,
                    train_pool.num_classes()
                )));
            }
            let forget: Vec<usize> = (0..n)
                .filter(|&i| train_pool.labels()[i] == scheme.class_id)
                .collect();
            if forget.is_empty() {
                return Err(Error::EmptyForget(format!(
                    "class {} absent from train pool",
                    scheme.class_id
                )));
            }
            let retain: Vec<usize> =
                (0..n).filter(|&i| train_pool.labels()[i] != scheme.class_id).collect();
            (forget, retain)
        }
    };

    // 50/50 validation/test split of the eval pool. Validation keeps every
    // class (the adversarial pairing needs a comparison population for the
    // forgotten class); under class-wise forgetting the TEST split drops
    // the class, since a retrained gold standard no longer has it at all.
    let mut order: Vec<usize> = (0..eval_pool.len()).collect();
    order.shuffle(&mut seeded(derive_seed(scheme.seed, "eval_split", 0)));
    let half = eval_pool.len() / 2;
    let mut validation: Vec<usize> = order[..half].to_vec();
    let mut test: Vec<usize> = order[half..].to_vec();
    if scheme.kind == ForgetKind::ClassWise {
        test.retain(|&i| eval_pool.labels()[i] != scheme.class_id);
        if test.is_empty() {
            return Err(Error::Config(
                "test split has no samples outside the forgotten class".into(),
            ));
        }
    }
    validation.sort_unstable();
    test.sort_unstable();

    Ok(SplitSet { retain, forget, validation, test })
}

/// Gaussian blobs: class centers are seeded random unit-sphere points
/// scaled by 3.0; samples add isotropic noise with std `spread`. Labels are
/// balanced, grouped by class.
pub fn gen_synthetic(
    num_classes: usize,
    n_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 || dim < 2 {
        return Err(Error::Config("need at least 2 classes and 2 dimensions".into()));
    }
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be positive".into()));
    }
    let mut center_rng = seeded(derive_seed(seed, "centers", 0));
    let unit_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut centers = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut c: Vec<f64> = (0..dim).map(|_| unit_normal.sample(&mut center_rng)).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        c.iter_mut().for_each(|v| *v = *v / norm * 3.0);
        centers.push(c);
    }
    let mut features = Mat::zeros(num_classes * n_per_class, dim);
    let mut labels = Vec::with_capacity(num_classes * n_per_class);
    let mut noise_rng = seeded(derive_seed(seed, "noise", 0));
    for (c, center) in centers.iter().enumerate() {
        for s in 0..n_per_class {
            let row = features.row_mut(c * n_per_class + s);
            for (x, &m) in row.iter_mut().zip(center) {
                *x = m + spread * unit_normal.sample(&mut noise_rng);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, num_classes)
}

/// Train/eval pool pair drawn from the same blobs: identical class centers,
/// disjoint samples. The first `train_per_class` samples of each class form
/// the train pool.
pub fn gen_synthetic_pair(
    num_classes: usize,
    train_per_class: usize,
    eval_per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let combined = gen_synthetic(num_classes, train_per_class + eval_per_class, dim, spread, seed)?;
    let per = train_per_class + eval_per_class;
    let mut train_idx = Vec::with_capacity(num_classes * train_per_class);
    let mut eval_idx = Vec::with_capacity(num_classes * eval_per_class);
    for c in 0..num_classes {
        train_idx.extend(c * per..c * per + train_per_class);
        eval_idx.extend(c * per + train_per_class..(c + 1) * per);
    }
    let (train_x, train_y) = combined.batch(&train_idx);
    let (eval_x, eval_y) = combined.batch(&eval_idx);
    Ok((
        LabeledDataset::new(train_x, train_y, num_classes)?,
        LabeledDataset::new(eval_x, eval_y, num_classes)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Csv,
    Binary,
}

/// Load a dataset from disk. CSV rows are `f1,...,fd,label` with the class
/// count inferred from the max label; binary is a (N, dim, K) u64 LE header
/// followed by f32 features row-major and u32 labels.
///
/// With `normalize` set, features are standardized per dimension after
/// loading (idempotent on already-standardized data).
pub fn load_dataset(path: &Path, format: FileFormat, normalize: bool) -> Result<LabeledDataset> {
    let mut ds = match format {
        FileFormat::Csv => load_csv(path)?,
        FileFormat::Binary => load_binary(path)?,
    };
    if normalize {
        ds.normalize();
    }
    Ok(ds)
}

fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (row_idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::Parse { row: row_idx, msg: "need at least one feature and a label".into() });
        }
        let mut feats = Vec::with_capacity(fields.len() - 1);
        for f in &fields[..fields.len() - 1] {
            let v: f64 = f.trim().parse().map_err(|e| Error::Parse {
                row: row_idx,
                msg: format!("bad feature '{f}': {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row: row_idx, msg: format!("non-finite feature {v}") });
            }
            feats.push(v);
        }
        let label: usize = fields[fields.len() - 1].trim().parse().map_err(|e| Error::Parse {
            row: row_idx,
            msg: format!("bad label '{}': {e}", fields[fields.len() - 1]),
        })?;
        if let Some(first) = rows.first() {
            if feats.len() != first.len() {
                return Err(Error::Parse {
                    row: row_idx,
                    msg: format!("row has {} features, expected {}", feats.len(), first.len()),
                });
            }
        }
        rows.push(feats);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::Parse { row: 0, msg: "empty CSV".into() });
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    LabeledDataset::new(Mat::from_rows(&rows)?, labels, num_classes)
}

fn load_binary(path: &Path) -> Result<LabeledDataset> {
    let mut f = std::fs::File::open(path)?;
    let mut header = [0u8; 24];
    f.read_exact(&mut header).map_err(|_| Error::Parse { row: 0, msg: "truncated header".into() })?;
    let n = u64::from_le_bytes(header[0..8].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let k = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    if n == 0 || dim == 0 || k == 0 {
        return Err(Error::Parse { row: 0, msg: format!("malformed header N={n} dim={dim} K={k}") });
    }
    let mut feat_bytes = vec![0u8; n * dim * 4];
    f.read_exact(&mut feat_bytes)
        .map_err(|_| Error::Parse { row: 0, msg: "truncated feature payload".into() })?;
    let mut features = Mat::zeros(n, dim);
    for (i, chunk) in feat_bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(Error::Parse { row: i / dim, msg: format!("non-finite feature {v}") });
        }
        features.data_mut()[i] = v;
    }
    let mut label_bytes = vec![0u8; n * 4];
    f.read_exact(&mut label_bytes)
        .map_err(|_| Error::Parse { row: 0, msg: "truncated label payload".into() })?;
    let mut labels = Vec::with_capacity(n);
    for (row, chunk) in label_bytes.chunks_exact(4).enumerate() {
        let l = u32::from_le_bytes(chunk.try_into().unwrap()) as usize;
        if l >= k {
            return Err(Error::Parse { row, msg: format!("label {l} >= declared K={k}") });
        }
        labels.push(l);
    }
    LabeledDataset::new(features, labels, k)
}

/// Write the binary format described in `load_dataset`. Features are stored
/// as f32, so values round-trip through f32 precision.
pub fn save_binary(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&(ds.len() as u64).to_le_bytes())?;
    f.write_all(&(ds.dim() as u64).to_le_bytes())?;
    f.write_all(&(ds.num_classes() as u64).to_le_bytes())?;
    for &v in ds.features().data() {
        f.write_all(&(v as f32).to_le_bytes())?;
    }
    for &l in ds.labels() {
        f.write_all(&(l as u32).to_le_bytes())?;
    }
    Ok(())
}

/// One-hot matrix (B × num_classes) for a label batch.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Mat {
    let mut m = Mat::zeros(labels.len(), num_classes);
    for (i, &l) in labels.iter().enumerate() {
        m.set(i, l, 1.0);
    }
    m
}

/// Seeded shuffled copy of `0..n`, used for per-epoch batch ordering.
pub fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    order
}

/// Deterministic subsample without replacement.
pub fn subsample(idx: &[usize], count: usize, seed: u64) -> Vec<usize> {
    let mut order = idx.to_vec();
    order.shuffle(&mut seeded(seed));
    order.truncate(count.min(idx.len()));
    order
}

/// Standard normal draws from a purpose-derived stream.
pub fn normal_draws(n: usize, seed: u64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut rng = seeded(seed);
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

/// Uniform draws in [lo, hi).
pub fn uniform_draws(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}
