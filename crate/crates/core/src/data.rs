//! Datasets: MNIST in IDX format and small synthetic problems.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{EvalSet, LossKind};
use crate::rng::{seeded, stream};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// A train/test pair of labelled splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub train: EvalSet,
    pub test: EvalSet,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.train.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes().max(self.test.num_classes())
    }

    /// The named split, `"train"` or `"test"`.
    pub fn split(&self, name: &str) -> Result<&EvalSet> {
        match name {
            "train" => Ok(&self.train),
            "test" => Ok(&self.test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }

    /// Keeps at most `n_train` / `n_test` examples of each split.
    pub fn truncate(mut self, n_train: usize, n_test: usize) -> Dataset {
        self.train = self.train.take(n_train);
        self.test = self.test.take(n_test);
        self
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Dataset(format!("{what}: file ends inside the header")))
}

/// Parses an IDX image file into `N × (rows·cols)` pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], what: &str) -> Result<Matrix> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Dataset(format!(
            "{what}: bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, what)? as usize;
    let rows = be_u32(bytes, 8, what)? as usize;
    let cols = be_u32(bytes, 12, what)? as usize;
    let dim = rows * cols;
    let payload = &bytes[16..];
    if payload.len() != n * dim {
        return Err(Error::Dataset(format!(
            "{what}: payload has {} bytes, header declares {n} images of {rows}x{cols}",
            payload.len()
        )));
    }
    Ok(Array2::from_shape_fn((n, dim), |(i, j)| payload[i * dim + j] as f64 / 255.0))
}

/// Parses an IDX label file.
pub fn parse_idx_labels(bytes: &[u8], what: &str) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Dataset(format!(
            "{what}: bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, what)? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::Dataset(format!(
            "{what}: payload has {} bytes, header declares {n} labels",
            payload.len()
        )));
    }
    Ok(payload.iter().map(|&b| b as usize).collect())
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    fs::read(&path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}

fn load_split(dir: &Path, prefix: &str) -> Result<EvalSet> {
    let images_name = format!("{prefix}-images-idx3-ubyte");
    let labels_name = format!("{prefix}-labels-idx1-ubyte");
    let images = parse_idx_images(&read(dir, &images_name)?, &images_name)?;
    let labels = parse_idx_labels(&read(dir, &labels_name)?, &labels_name)?;
    if images.nrows() != labels.len() {
        return Err(Error::Dataset(format!(
            "{prefix}: {} images but {} labels",
            images.nrows(),
            labels.len()
        )));
    }
    EvalSet::new(images, labels, LossKind::CrossEntropy)
}

/// Loads the four uncompressed MNIST IDX files from `dir`.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    Ok(Dataset {
        name: "mnist".into(),
        train: load_split(dir, "train")?,
        test: load_split(dir, "t10k")?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Unit-variance Gaussian clusters whose centres are 4 apart.
    Blobs,
    /// Two interleaved half circles, padded with noise dimensions.
    TwoMoons,
}

fn blob_centres(dim: usize, classes: usize) -> Matrix {
    let mut c = Matrix::zeros((classes, dim));
    if dim == 1 {
        for k in 0..classes {
            c[[k, 0]] = 4.0 * k as f64;
        }
    } else if classes <= dim {
        // scaled simplex corners: pairwise distance exactly 4
        for k in 0..classes {
            c[[k, k]] = 2.0 * std::f64::consts::SQRT_2;
        }
    } else {
        // points on a circle with neighbouring chords of length 4
        let r = 2.0 / (std::f64::consts::PI / classes as f64).sin();
        for k in 0..classes {
            let t = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
            c[[k, 0]] = r * t.cos();
            c[[k, 1]] = r * t.sin();
        }
    }
    c
}

fn sample(kind: SyntheticKind, n: usize, dim: usize, classes: usize, rng: &mut impl Rng) -> Result<EvalSet> {
    let mut x = Matrix::zeros((n, dim));
    let mut y = Vec::with_capacity(n);
    match kind {
        SyntheticKind::Blobs => {
            let centres = blob_centres(dim, classes);
            for i in 0..n {
                let c = i % classes;
                for j in 0..dim {
                    let e: f64 = rng.sample(StandardNormal);
                    x[[i, j]] = centres[[c, j]] + e;
                }
                y.push(c);
            }
        }
        SyntheticKind::TwoMoons => {
            for i in 0..n {
                let c = i % 2;
                let t = rng.random_range(0.0..std::f64::consts::PI);
                let (px, py) = if c == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                for j in 0..dim {
                    let e: f64 = rng.sample(StandardNormal);
                    let base = match j {
                        0 => px,
                        1 => py,
                        _ => 0.0,
                    };
                    x[[i, j]] = base + 0.1 * e;
                }
                y.push(c);
            }
        }
    }
    EvalSet::new(x, y, LossKind::CrossEntropy)
}

/// Deterministic synthetic classification data with `n` training examples
/// and an independent test split of `max(1, n / 5)` examples.
pub fn make_synthetic(kind: SyntheticKind, n: usize, dim: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(Error::invalid("synthetic data needs n ≥ 1 and dim ≥ 1"));
    }
    if classes < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
    }
    if kind == SyntheticKind::TwoMoons && (classes != 2 || dim < 2) {
        return Err(Error::invalid("two_moons has exactly 2 classes and needs dim ≥ 2"));
    }
    let mut rng = seeded(seed, stream::DATA);
    let train = sample(kind, n, dim, classes, &mut rng)?;
    let test = sample(kind, (n / 5).max(1), dim, classes, &mut rng)?;
    let name = match kind {
        SyntheticKind::Blobs => "blobs",
        SyntheticKind::TwoMoons => "two_moons",
    };
    Ok(Dataset {
        name: name.into(),
        train,
        test,
    })
}
