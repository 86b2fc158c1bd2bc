//! Labeled datasets: a synthetic Gaussian-blob generator and an MNIST IDX reader.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Row-major features with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || classes < 2 {
            return Err(Error::config("a dataset needs at least one feature and two classes"));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::Shape {
                what: "feature matrix",
                expected: dim * labels.len(),
                actual: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::domain(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self {
            dim,
            classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Keep only the first `n` rows.
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.labels.truncate(n);
            self.features.truncate(n * self.dim);
        }
    }
}

/// Standardize every feature with the training set's mean and deviation.
/// Constant features are centered only.
pub fn standardize(train: &mut Dataset, test: &mut Dataset) {
    let d = train.dim;
    let n = train.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for i in 0..train.len() {
        for (m, x) in mean.iter_mut().zip(train.row(i)) {
            *m += x / n;
        }
    }
    let mut sd = vec![0.0; d];
    for i in 0..train.len() {
        for ((s, x), m) in sd.iter_mut().zip(train.row(i)).zip(&mean) {
            *s += (x - m).powi(2) / n;
        }
    }
    let scale: Vec<f64> = sd.iter().map(|v| if *v > 1e-12 { 1.0 / v.sqrt() } else { 1.0 }).collect();
    for set in [train, test] {
        for row in set.features.chunks_mut(d) {
            for ((x, m), s) in row.iter_mut().zip(&mean).zip(&scale) {
                *x = (*x - m) * s;
            }
        }
    }
}

/// Gaussian blobs: class means drawn from `N(0, separation² I)`, samples
/// from `N(mean, I)`. Labels cycle through the classes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlobSpec {
    pub train: usize,
    pub test: usize,
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            train: 10_000,
            test: 2_000,
            dim: 20,
            classes: 10,
            separation: 0.6,
        }
    }
}

pub fn synthetic_blobs(spec: &BlobSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut mrng = rng::stream(seed, Domain::Data, &[0]);
    let means: Vec<f64> = (0..spec.classes * spec.dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut mrng);
            spec.separation * z
        })
        .collect();
    let make = |n: usize, part: u64| -> Result<Dataset> {
        let mut r = rng::stream(seed, Domain::Data, &[part]);
        let mut features = Vec::with_capacity(n * spec.dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % spec.classes;
            labels.push(c);
            for j in 0..spec.dim {
                let z: f64 = StandardNormal.sample(&mut r);
                features.push(means[c * spec.dim + j] + z);
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        let f = order.iter().flat_map(|&i| features[i * spec.dim..(i + 1) * spec.dim].iter().copied()).collect();
        let l = order.iter().map(|&i| labels[i]).collect();
        Dataset::new(spec.dim, spec.classes, f, l)
    };
    Ok((make(spec.train, 1)?, make(spec.test, 2)?))
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: path.display().to_string(),
        message: message.into(),
    }
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parse an IDX image file (magic `0x00000803`). Returns (rows, cols, pixels).
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 16 || be_u32(bytes, 0) != 0x0803 {
        return Err(parse_err(path, "not an IDX image file (magic 0x00000803)"));
    }
    let n = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() != need {
        return Err(parse_err(path, format!("expected {need} bytes, found {}", bytes.len())));
    }
    Ok((rows, cols, bytes[16..].to_vec()))
}

/// Parse an IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    if bytes.len() < 8 || be_u32(bytes, 0) != 0x0801 {
        return Err(parse_err(path, "not an IDX label file (magic 0x00000801)"));
    }
    let n = be_u32(bytes, 4) as usize;
    if bytes.len() != 8 + n {
        return Err(parse_err(path, format!("expected {} bytes, found {}", 8 + n, bytes.len())));
    }
    Ok(bytes[8..].to_vec())
}

fn load_split(dir: &Path, images: &str, labels: &str) -> Result<Dataset> {
    let ip = dir.join(images);
    let lp = dir.join(labels);
    let (rows, cols, pixels) = parse_idx_images(&fs::read(&ip)?, &ip)?;
    let labels = parse_idx_labels(&fs::read(&lp)?, &lp)?;
    if pixels.len() != labels.len() * rows * cols {
        return Err(parse_err(&ip, "image and label counts differ"));
    }
    Dataset::new(
        rows * cols,
        10,
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        labels.iter().map(|&l| l as usize).collect(),
    )
}

/// Load MNIST from the four standard IDX files in `dir`, standardized.
pub fn load_mnist(dir: &Path, max_train: Option<usize>, max_test: Option<usize>) -> Result<(Dataset, Dataset)> {
    let mut train = load_split(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
    let mut test = load_split(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
    if let Some(n) = max_train {
        train.truncate(n);
    }
    if let Some(n) = max_test {
        test.truncate(n);
    }
    standardize(&mut train, &mut test);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, r: u32, c: u32) -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3];
        for v in [n, r, c] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend((0..n * r * c).map(|i| (i % 256) as u8));
        b
    }

    #[test]
    fn idx_round_trip() {
        let p = Path::new("mem");
        let (r, c, px) = parse_idx_images(&idx_images(3, 2, 4), p).unwrap();
        assert_eq!((r, c, px.len()), (2, 4, 24));
        assert_eq!(px[5], 5);
        let mut lb = vec![0, 0, 8, 1, 0, 0, 0, 2];
        lb.extend([7, 9]);
        assert_eq!(parse_idx_labels(&lb, p).unwrap(), vec![7, 9]);
    }

    #[test]
    fn idx_rejects_bad_magic_and_length() {
        let p = Path::new("mem");
        let mut b = idx_images(1, 2, 2);
        b[3] = 1;
        assert!(parse_idx_images(&b, p).is_err());
        let mut b = idx_images(1, 2, 2);
        b.pop();
        assert!(parse_idx_images(&b, p).is_err());
        assert!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 3, 1], p).is_err());
    }

    #[test]
    fn mnist_directory_loads() {
        let dir = tempfile::tempdir().unwrap();
        let mut lb = vec![0, 0, 8, 1, 0, 0, 0, 3];
        lb.extend([1, 2, 3]);
        for (img, lab) in [
            ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        ] {
            fs::write(dir.path().join(img), idx_images(3, 2, 2)).unwrap();
            fs::write(dir.path().join(lab), &lb).unwrap();
        }
        let (train, test) = load_mnist(dir.path(), Some(2), None).unwrap();
        assert_eq!((train.len(), test.len(), train.dim()), (2, 3, 4));
        assert_eq!(train.label(1), 2);
    }

    #[test]
    fn blobs_are_reproducible_and_balanced() {
        let spec = BlobSpec {
            train: 200,
            test: 50,
            ..BlobSpec::default()
        };
        let (a, _) = synthetic_blobs(&spec, 3).unwrap();
        let (b, _) = synthetic_blobs(&spec, 3).unwrap();
        assert_eq!(a, b);
        for c in 0..10 {
            assert_eq!(a.labels().iter().filter(|&&y| y == c).count(), 20);
        }
    }

    #[test]
    fn standardization_centers_training_features() {
        let spec = BlobSpec {
            train: 500,
            test: 10,
            dim: 3,
            classes: 2,
            separation: 4.0,
        };
        let (mut tr, mut te) = synthetic_blobs(&spec, 1).unwrap();
        standardize(&mut tr, &mut te);
        for j in 0..3 {
            let col: Vec<f64> = (0..tr.len()).map(|i| tr.row(i)[j]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
        }
    }
}
