//! Datasets: MNIST IDX files, synthetic desk-scale sets, and mini-batch iteration.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::Matrix;
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

/// Labeled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::invalid("dataset is empty"));
        }
        if labels.len() != features.rows() {
            return Err(Error::invalid(format!(
                "{} labels for {} examples",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {y} >= num_classes {num_classes}")));
        }
        if !features.is_finite() {
            return Err(Error::invalid("features must be finite"));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copies the given examples into a batch, in index order.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        Batch {
            x: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// First `n` examples.
    pub fn take(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Self::new(self.features.slice_rows(0, n), self.labels[..n].to_vec(), self.num_classes)
    }
}

/// A mini-batch of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Contiguous sub-batch `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Batch {
        Batch {
            x: self.x.slice_rows(start, end),
            labels: self.labels[start..end].to_vec(),
        }
    }
}

// ---------------------------------------------------------------------------
// IDX

fn parse_err(path: &Path, what: &'static str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        what,
        message: message.into(),
    }
}

struct IdxReader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    pos: usize,
}

impl<'a> IdxReader<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path, bytes, pos: 0 })
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| parse_err(self.path, what, "file truncated in header"))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let magic = self.u32("magic")?;
        if magic != expected {
            return Err(parse_err(
                self.path,
                "magic",
                format!("expected {expected:#010x}, found {magic:#010x}"),
            ));
        }
        Ok(())
    }

    fn payload(self, len: usize) -> Result<Vec<u8>> {
        let available = self.bytes.len() - self.pos;
        if available < len {
            return Err(parse_err(
                self.path,
                "payload",
                format!("truncated: header announces {len} bytes, {available} present"),
            ));
        }
        if available > len {
            return Err(parse_err(
                self.path,
                "payload",
                format!("{} trailing bytes after {len}-byte payload", available - len),
            ));
        }
        Ok(self.bytes[self.pos..].to_vec())
    }
}

/// Raw IDX image file: `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = IdxReader::open(path)?;
    r.magic(IDX_IMAGES_MAGIC)?;
    let n = r.u32("image count")? as usize;
    let rows = r.u32("row count")? as usize;
    let cols = r.u32("column count")? as usize;
    let pixels = r.payload(n * rows * cols)?;
    Ok((n, rows, cols, pixels))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = IdxReader::open(path)?;
    r.magic(IDX_LABELS_MAGIC)?;
    let n = r.u32("label count")? as usize;
    r.payload(n)
}

/// Loads an MNIST-style image/label pair, scaling pixels to `[0, 1]`.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(parse_err(
            labels_path,
            "label count",
            format!("{} labels but {} images in {}", labels.len(), n, images_path.display()),
        ));
    }
    if let Some(&y) = labels.iter().find(|&&y| usize::from(y) >= MNIST_CLASSES) {
        return Err(parse_err(labels_path, "label value", format!("label {y} is not a digit")));
    }
    let features = Matrix::from_vec(n, rows * cols, pixels.iter().map(|&p| f64::from(p) / 255.0).collect())?;
    Dataset::new(features, labels.into_iter().map(usize::from).collect(), MNIST_CLASSES)
}

/// Loads `<dir>/{train,t10k}-{images-idx3,labels-idx1}-ubyte`.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_mnist_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_mnist_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
    Ok((train, test))
}

/// Writes a dataset as an IDX pair. Features are stored as `round(255·v)`,
/// so values must lie in `[0, 1]`; labels must fit in a byte.
pub fn write_idx(dataset: &Dataset, rows: usize, cols: usize, images_path: &Path, labels_path: &Path) -> Result<()> {
    if rows * cols != dataset.dim() {
        return Err(Error::invalid(format!(
            "{rows}x{cols} images cannot hold {} features",
            dataset.dim()
        )));
    }
    let n = u32::try_from(dataset.len()).map_err(|_| Error::invalid("too many examples for IDX"))?;

    let mut images = Vec::with_capacity(16 + dataset.len() * dataset.dim());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&n.to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    for &v in dataset.features().as_slice() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("feature {v} outside [0, 1]")));
        }
        images.push((v * 255.0).round() as u8);
    }

    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    for &y in dataset.labels() {
        labels.push(u8::try_from(y).map_err(|_| Error::invalid(format!("label {y} does not fit a byte")))?);
    }

    fs::write(images_path, images).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, labels).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic data

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    GaussianBlobs,
    XorGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub seed: u64,
    /// Standard deviation around each blob centre; ignored for the grid.
    pub noise: f64,
    /// Number of blobs; the grid always has two classes.
    pub classes: usize,
    /// Blob dimensionality (>= 2); the grid is always two-dimensional.
    pub dim: usize,
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            seed,
            noise: 0.5,
            classes: 3,
            dim: 2,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.kind {
            SyntheticKind::GaussianBlobs => self.classes,
            SyntheticKind::XorGrid => 2,
        }
    }
}

/// Blob centres on a circle of radius 4 in the first two coordinates.
pub fn blob_centres(classes: usize, dim: usize) -> Matrix {
    Matrix::from_fn(classes, dim, |c, d| {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
        match d {
            0 => 4.0 * angle.cos(),
            1 => 4.0 * angle.sin(),
            _ => 0.0,
        }
    })
}

pub fn make_synthetic(kind: SyntheticKind, n: usize, seed: u64) -> Result<Dataset> {
    make_synthetic_with(&SyntheticSpec::new(kind, n, seed))
}

pub fn make_synthetic_with(spec: &SyntheticSpec) -> Result<Dataset> {
    let classes = spec.num_classes();
    if classes < 2 {
        return Err(Error::invalid("synthetic data needs at least 2 classes"));
    }
    if spec.n < classes {
        return Err(Error::invalid(format!(
            "synthetic data needs n >= {classes}, got {}",
            spec.n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        SyntheticKind::GaussianBlobs => {
            if spec.dim < 2 {
                return Err(Error::invalid("blobs need dim >= 2"));
            }
            if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
                return Err(Error::invalid("blob noise must be finite and >= 0"));
            }
            let centres = blob_centres(classes, spec.dim);
            let mut labels: Vec<usize> = (0..spec.n).map(|i| i % classes).collect();
            labels.shuffle(&mut rng);
            let features = Matrix::from_fn(spec.n, spec.dim, |r, d| {
                let z: f64 = rng.sample(StandardNormal);
                centres.get(labels[r], d) + spec.noise * z
            });
            Dataset::new(features, labels, classes)
        }
        SyntheticKind::XorGrid => {
            let mut side = (spec.n as f64).sqrt().ceil() as usize;
            if side % 2 == 1 {
                side += 1;
            }
            let cell = 2.0 / side as f64;
            let mut points: Vec<(f64, f64)> = Vec::with_capacity(side * side);
            for i in 0..side {
                for j in 0..side {
                    let cx = -1.0 + cell * (i as f64 + 0.5);
                    let cy = -1.0 + cell * (j as f64 + 0.5);
                    let jx = rng.random_range(-0.25..0.25) * cell;
                    let jy = rng.random_range(-0.25..0.25) * cell;
                    points.push((cx + jx, cy + jy));
                }
            }
            points.shuffle(&mut rng);
            points.truncate(spec.n);
            let labels = points.iter().map(|&(x, y)| usize::from((x > 0.0) != (y > 0.0))).collect();
            let features = Matrix::from_fn(spec.n, 2, |r, c| if c == 0 { points[r].0 } else { points[r].1 });
            Dataset::new(features, labels, 2)
        }
    }
}

// ---------------------------------------------------------------------------
// Batching

/// Shuffled mini-batch order over a dataset.
///
/// A trailing partial batch is dropped so every batch has exactly
/// `batch_size` examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchIterator {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl BatchIterator {
    pub fn new(len: usize, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || batch_size > len {
            return Err(Error::invalid(format!(
                "batch size {batch_size} must be in 1..={len}"
            )));
        }
        Ok(Self {
            order: (0..len).collect(),
            cursor: len,
            batch_size,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len() / self.batch_size
    }

    /// True once the current permutation has no full batch left.
    pub fn epoch_exhausted(&self) -> bool {
        self.cursor + self.batch_size > self.order.len()
    }

    /// Draws a fresh permutation and rewinds.
    pub fn start_epoch<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.order.shuffle(rng);
        self.cursor = 0;
    }

    /// Next full batch of the current epoch, or `None` once exhausted.
    pub fn next_in_epoch(&mut self) -> Option<&[usize]> {
        if self.epoch_exhausted() {
            return None;
        }
        let start = self.cursor;
        self.cursor += self.batch_size;
        Some(&self.order[start..self.cursor])
    }

    /// Next batch, reshuffling with `rng` whenever an epoch ends.
    pub fn next_batch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[usize] {
        if self.epoch_exhausted() {
            self.start_epoch(rng);
        }
        let start = self.cursor;
        self.cursor += self.batch_size;
        &self.order[start..self.cursor]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_validation() {
        let x = Matrix::zeros(2, 3);
        assert!(Dataset::new(x.clone(), vec![0, 1], 2).is_ok());
        assert!(Dataset::new(x.clone(), vec![0, 2], 2).is_err());
        assert!(Dataset::new(x, vec![0], 2).is_err());
        assert!(Dataset::new(Matrix::zeros(0, 3), vec![], 2).is_err());
    }

    #[test]
    fn two_batches_per_epoch_cover_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut it = BatchIterator::new(10, 5).unwrap();
        assert_eq!(it.batches_per_epoch(), 2);
        it.start_epoch(&mut rng);
        let mut seen: Vec<usize> = Vec::new();
        while let Some(b) = it.next_in_epoch() {
            assert_eq!(b.len(), 5);
            seen.extend_from_slice(b);
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn remainder_is_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut it = BatchIterator::new(11, 5).unwrap();
        it.start_epoch(&mut rng);
        assert!(it.next_in_epoch().is_some());
        assert!(it.next_in_epoch().is_some());
        assert!(it.next_in_epoch().is_none());
        assert!(BatchIterator::new(4, 5).is_err());
        assert!(BatchIterator::new(4, 0).is_err());
    }

    #[test]
    fn epochs_get_different_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut it = BatchIterator::new(20, 20).unwrap();
        let first = it.next_batch(&mut rng).to_vec();
        let second = it.next_batch(&mut rng).to_vec();
        assert_ne!(first, second);
        let mut sorted = second.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn synthetic_is_reproducible() {
        for kind in [SyntheticKind::GaussianBlobs, SyntheticKind::XorGrid] {
            assert_eq!(make_synthetic(kind, 50, 7).unwrap(), make_synthetic(kind, 50, 7).unwrap());
            assert_ne!(make_synthetic(kind, 50, 7).unwrap(), make_synthetic(kind, 50, 8).unwrap());
            assert!(make_synthetic(kind, 1, 7).is_err());
        }
    }

    #[test]
    fn noiseless_blobs_are_nearest_centroid_separable() {
        let spec = SyntheticSpec {
            noise: 0.0,
            classes: 4,
            dim: 3,
            ..SyntheticSpec::new(SyntheticKind::GaussianBlobs, 40, 2)
        };
        let data = make_synthetic_with(&spec).unwrap();
        let centres = blob_centres(4, 3);
        for (i, &y) in data.labels().iter().enumerate() {
            let row = data.features().row(i);
            let nearest = (0..4)
                .min_by(|&a, &b| {
                    let da: f64 = row.iter().zip(centres.row(a)).map(|(p, q)| (p - q).powi(2)).sum();
                    let db: f64 = row.iter().zip(centres.row(b)).map(|(p, q)| (p - q).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(nearest, y);
        }
    }

    #[test]
    fn xor_grid_labels_follow_quadrants() {
        let data = make_synthetic(SyntheticKind::XorGrid, 64, 0).unwrap();
        let ones = data.labels().iter().filter(|&&y| y == 1).count();
        assert_eq!(ones, 32);
        for i in 0..data.len() {
            let (x, y) = (data.features().get(i, 0), data.features().get(i, 1));
            assert!(x != 0.0 && y != 0.0);
            assert_eq!(data.labels()[i], usize::from((x > 0.0) != (y > 0.0)));
        }
    }
}
