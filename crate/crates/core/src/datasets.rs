//! MNIST / CIFAR-10 readers, label overlays and mini-batch iteration.
//!
//! Overlays write the one-hot label into the first `J` pixels (row-major) of
//! channel 0 and zero the same positions in every other channel.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FfError, Result};
use crate::tensor::{Shape, Tensor};

pub const MNIST_IMAGE_MAGIC: u32 = 2051;
pub const MNIST_LABEL_MAGIC: u32 = 2049;
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * 32 * 32;
pub const DEFAULT_OVERLAY_VALUE: f32 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().n != labels.len() {
            return Err(FfError::Data(format!("{} images but {} labels", images.shape().n, labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(FfError::Data(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Dataset { images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` samples (or all of them when `n >= len`).
    pub fn take(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Dataset::new(self.images.slice_samples(0..n)?, self.labels[..n].to_vec(), self.num_classes)
    }

    pub fn batch(&self, indices: &[usize]) -> Result<LabeledBatch> {
        let x = self.images.select_samples(indices)?;
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        LabeledBatch::new(x, y, self.num_classes)
    }

    /// Apply per-channel `(x - mean) / std`.
    pub fn standardized(&self, stats: &ChannelStats) -> Result<Self> {
        let s = self.images.shape();
        if stats.mean.len() != s.c {
            return Err(FfError::Shape(format!("channel stats for {} channels applied to {s}", stats.mean.len())));
        }
        let mut images = self.images.clone();
        let plane = s.plane();
        for (i, chunk) in images.data_mut().chunks_mut(plane).enumerate() {
            let c = i % s.c;
            for v in chunk {
                *v = (*v - stats.mean[c]) / stats.std[c];
            }
        }
        Dataset::new(images, self.labels.clone(), self.num_classes)
    }
}

/// Per-channel mean and standard deviation of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    pub fn compute(ds: &Dataset) -> Self {
        let s = ds.images.shape();
        let plane = s.plane();
        let mut sum = vec![0.0f64; s.c];
        let mut sq = vec![0.0f64; s.c];
        for (i, chunk) in ds.images.data().chunks(plane).enumerate() {
            let c = i % s.c;
            for &v in chunk {
                sum[c] += v as f64;
                sq[c] += (v as f64) * (v as f64);
            }
        }
        let count = (s.n * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|v| v / count).collect();
        let std = sq.iter().zip(&mean).map(|(q, m)| ((q / count - m * m).max(0.0).sqrt().max(1e-6)) as f32).collect();
        ChannelStats { mean: mean.into_iter().map(|m| m as f32).collect(), std }
    }
}

/// One-hot label matrix `Z`, `N x J`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct OneHot {
    n: usize,
    classes: usize,
    data: Vec<f32>,
}

impl OneHot {
    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self> {
        let mut data = vec![0.0; labels.len() * classes];
        for (n, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(FfError::Data(format!("label {y} outside [0, {classes})")));
            }
            data[n * classes + y] = 1.0;
        }
        Ok(OneHot { n: labels.len(), classes, data })
    }

    /// Accepts an arbitrary matrix; [`OneHot::validate`] checks the one-hot rows.
    pub fn from_raw(n: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * classes {
            return Err(FfError::Shape(format!("one-hot buffer of {} values for {n}x{classes}", data.len())));
        }
        Ok(OneHot { n, classes, data })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, n: usize) -> &[f32] {
        &self.data[n * self.classes..(n + 1) * self.classes]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Every row must be exactly one 1 and zeros elsewhere.
    pub fn validate(&self) -> Result<()> {
        for n in 0..self.n {
            let row = self.row(n);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || zeros != self.classes - 1 {
                return Err(FfError::Contract(format!("row {n} of Z is not one-hot: {row:?}")));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Result<Vec<usize>> {
        self.validate()?;
        Ok((0..self.n).map(|n| self.row(n).iter().position(|&v| v == 1.0).unwrap()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub z: OneHot,
}

impl LabeledBatch {
    pub fn new(x: Tensor, y: Vec<usize>, classes: usize) -> Result<Self> {
        if x.shape().n != y.len() {
            return Err(FfError::Shape(format!("batch of {} samples with {} labels", x.shape().n, y.len())));
        }
        let z = OneHot::from_labels(&y, classes)?;
        Ok(LabeledBatch { x, y, z })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.z.classes()
    }
}

fn check_overlay_fits(shape: Shape, classes: usize) -> Result<()> {
    if classes > shape.plane() {
        return Err(FfError::Config(format!("{classes} label pixels do not fit a {}x{} image", shape.h, shape.w)));
    }
    Ok(())
}

/// Write `values` (length J) into the overlay region of one sample.
fn write_overlay(sample: &mut [f32], shape: Shape, values: &[f32]) {
    let plane = shape.plane();
    for c in 0..shape.c {
        let region = &mut sample[c * plane..c * plane + values.len()];
        if c == 0 {
            region.copy_from_slice(values);
        } else {
            region.fill(0.0);
        }
    }
}

fn overlay_labels(x: &Tensor, labels: &[usize], classes: usize, value: f32) -> Result<Tensor> {
    check_overlay_fits(x.shape(), classes)?;
    let mut out = x.clone();
    let shape = x.shape();
    let mut code = vec![0.0f32; classes];
    for (n, &label) in labels.iter().enumerate() {
        code.fill(0.0);
        code[label] = value;
        write_overlay(out.sample_mut(n), shape, &code);
    }
    Ok(out)
}

/// Overlay the true label of every sample.
pub fn make_positive(batch: &LabeledBatch, overlay_value: f32) -> Result<Tensor> {
    overlay_labels(&batch.x, &batch.y, batch.num_classes(), overlay_value)
}

/// Overlay a uniformly drawn wrong label; returns the image and the labels used.
pub fn make_negative<R: Rng + ?Sized>(
    batch: &LabeledBatch,
    overlay_value: f32,
    rng: &mut R,
) -> Result<(Tensor, Vec<usize>)> {
    let classes = batch.num_classes();
    if classes < 2 {
        return Err(FfError::Config(format!("negative labels need at least 2 classes, got {classes}")));
    }
    let wrong: Vec<usize> = batch
        .y
        .iter()
        .map(|&y| {
            let r = rng.random_range(0..classes - 1);
            if r >= y {
                r + 1
            } else {
                r
            }
        })
        .collect();
    let x = overlay_labels(&batch.x, &wrong, classes, overlay_value)?;
    Ok((x, wrong))
}

/// `J` copies of every sample, one per candidate label, label-major:
/// output sample `j * N + n` carries label `j` on sample `n`.
pub fn make_all_overlays(x: &Tensor, classes: usize, overlay_value: f32) -> Result<Tensor> {
    check_overlay_fits(x.shape(), classes)?;
    let n = x.shape().n;
    let mut parts = Vec::with_capacity(classes);
    for j in 0..classes {
        parts.push(overlay_labels(x, &vec![j; n], classes, overlay_value)?);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat(&refs)
}

/// Fill the overlay region with a label-free pattern.
pub fn make_neutral(x: &Tensor, classes: usize, values: &[f32]) -> Result<Tensor> {
    check_overlay_fits(x.shape(), classes)?;
    if values.len() != classes {
        return Err(FfError::Shape(format!("neutral overlay of {} values for {classes} classes", values.len())));
    }
    let mut out = x.clone();
    let shape = x.shape();
    for n in 0..shape.n {
        write_overlay(out.sample_mut(n), shape, values);
    }
    Ok(out)
}

/// Deterministic mini-batches; the shuffle depends only on `(seed, epoch)`.
pub struct BatchIter<'a> {
    ds: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

pub fn epoch_order(len: usize, shuffle: bool, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
    }
    order
}

pub fn batch_iter(ds: &Dataset, batch_size: usize, shuffle: bool, seed: u64, epoch: usize) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(FfError::Config("batch_size must be >= 1".into()));
    }
    Ok(BatchIter { ds, order: epoch_order(ds.len(), shuffle, seed, epoch), batch_size, pos: 0 })
}

impl Iterator for BatchIter<'_> {
    type Item = LabeledBatch;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some(self.ds.batch(idx).expect("indices drawn from the dataset are valid"))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let mut file = File::open(path).map_err(|e| FfError::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut bytes).map_err(|e| FfError::io(path, e))?;
    } else {
        file.read_to_end(&mut bytes).map_err(|e| FfError::io(path, e))?;
    }
    Ok(bytes)
}

/// `dir/name`, falling back to `dir/name.gz`.
fn locate(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(FfError::Data(format!("missing dataset file {}", plain.display())))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| FfError::Data(format!("{}: truncated IDX header", path.display())))
}

/// Parse an IDX3 image file into `N x 1 x rows x cols`, scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != MNIST_IMAGE_MAGIC {
        return Err(FfError::Data(format!(
            "{}: bad image magic {magic}, expected {MNIST_IMAGE_MAGIC}",
            path.display()
        )));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(FfError::Data(format!(
            "{}: truncated, {} bytes for {n} images of {rows}x{cols}",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes[16..need].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::from_vec(Shape::try_new(n, 1, rows, cols)?, data)
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != MNIST_LABEL_MAGIC {
        return Err(FfError::Data(format!(
            "{}: bad label magic {magic}, expected {MNIST_LABEL_MAGIC}",
            path.display()
        )));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    if bytes.len() < 8 + n {
        return Err(FfError::Data(format!("{}: truncated, {} bytes for {n} labels", path.display(), bytes.len())));
    }
    Ok(bytes[8..8 + n].iter().map(|&b| b as usize).collect())
}

fn load_idx_split(dir: &Path, prefix: &str) -> Result<Dataset> {
    let img_path = locate(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let lbl_path = locate(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let images = parse_idx_images(&read_file(&img_path)?, &img_path)?;
    let labels = parse_idx_labels(&read_file(&lbl_path)?, &lbl_path)?;
    if images.shape().n != labels.len() {
        return Err(FfError::Data(format!(
            "{} holds {} images but {} holds {} labels",
            img_path.display(),
            images.shape().n,
            lbl_path.display(),
            labels.len()
        )));
    }
    Dataset::new(images, labels, 10)
}

/// Reads `train-*` and `t10k-*` IDX files (optionally gzipped) from `dir`.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    Ok((load_idx_split(dir, "train")?, load_idx_split(dir, "t10k")?))
}

/// Parse concatenated CIFAR-10 binary records.
pub fn parse_cifar_records(bytes: &[u8], path: &Path) -> Result<(Vec<f32>, Vec<usize>)> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(FfError::Data(format!(
            "{}: corrupt CIFAR-10 file, {} bytes is not a positive multiple of {CIFAR_RECORD_LEN}",
            path.display(),
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_LEN - 1));
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD_LEN) {
        if rec[0] > 9 {
            return Err(FfError::Data(format!("{}: label byte {} outside 0..=9", path.display(), rec[0])));
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((pixels, labels))
}

fn load_cifar_files(paths: &[PathBuf]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let (px, lb) = parse_cifar_records(&read_file(p)?, p)?;
        pixels.extend(px);
        labels.extend(lb);
    }
    let images = Tensor::from_vec(Shape::try_new(labels.len(), 3, 32, 32)?, pixels)?;
    Dataset::new(images, labels, 10)
}

/// Reads `data_batch_{1..5}.bin` and `test_batch.bin` from `dir` or from its
/// `cifar-10-batches-bin` subdirectory.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let mut dir = dir.as_ref().to_path_buf();
    if !dir.join("test_batch.bin").is_file() && dir.join("cifar-10-batches-bin").is_dir() {
        dir = dir.join("cifar-10-batches-bin");
    }
    let train: Vec<PathBuf> = (1..=5).map(|i| locate(&dir, &format!("data_batch_{i}.bin"))).collect::<Result<_>>()?;
    let test = vec![locate(&dir, "test_batch.bin")?];
    Ok((load_cifar_files(&train)?, load_cifar_files(&test)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(labels: Vec<usize>, classes: usize, h: usize, w: usize) -> LabeledBatch {
        let n = labels.len();
        let x = Tensor::from_fn(Shape::new(n, 1, h, w), |i| ((i * 31 % 17) as f32) / 17.0);
        LabeledBatch::new(x, labels, classes).unwrap()
    }

    #[test]
    fn positive_overlay_marks_true_label() {
        let b = batch(vec![3], 10, 28, 28);
        let x = make_positive(&b, 1.0).unwrap();
        let first: Vec<f32> = x.sample(0)[..10].to_vec();
        assert_eq!(first, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&x.sample(0)[10..], &b.x.sample(0)[10..]);
    }

    #[test]
    fn zero_image_label_zero_has_single_pixel() {
        let b = LabeledBatch::new(Tensor::zeros(Shape::new(1, 1, 28, 28)), vec![0], 10).unwrap();
        let x = make_positive(&b, 1.0).unwrap();
        let nonzero: Vec<usize> = (0..x.len()).filter(|&i| x.data()[i] != 0.0).collect();
        assert_eq!(nonzero, vec![0]);
    }

    #[test]
    fn rgb_overlay_zeroes_other_channels() {
        let x = Tensor::filled(Shape::new(1, 3, 4, 4), 0.5);
        let b = LabeledBatch::new(x, vec![1], 3).unwrap();
        let out = make_positive(&b, 1.0).unwrap();
        assert_eq!(&out.sample(0)[..3], &[0.0, 1.0, 0.0]);
        assert_eq!(&out.sample(0)[16..19], &[0.0, 0.0, 0.0]);
        assert_eq!(&out.sample(0)[32..35], &[0.0, 0.0, 0.0]);
        assert_eq!(out.sample(0)[3], 0.5);
    }

    #[test]
    fn overlay_too_large_is_config_error() {
        let b = batch(vec![0], 10, 3, 3);
        assert!(matches!(make_positive(&b, 1.0), Err(FfError::Config(_))));
    }

    #[test]
    fn two_classes_force_complement() {
        let b = batch(vec![0; 50], 2, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, wrong) = make_negative(&b, 1.0, &mut rng).unwrap();
        assert!(wrong.iter().all(|&w| w == 1));
    }

    #[test]
    fn single_class_negative_is_config_error() {
        let b = batch(vec![0], 1, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(make_negative(&b, 1.0, &mut rng), Err(FfError::Config(_))));
    }

    #[test]
    fn all_overlays_are_label_major() {
        let b = batch(vec![4, 7], 10, 28, 28);
        let all = make_all_overlays(&b.x, 10, 1.0).unwrap();
        assert_eq!(all.shape().n, 20);
        for j in 0..10 {
            for n in 0..2 {
                let s = all.sample(j * 2 + n);
                let arg = (0..10).max_by(|&a, &c| s[a].total_cmp(&s[c])).unwrap();
                assert_eq!(arg, j);
                assert_eq!(&s[10..], &b.x.sample(n)[10..]);
            }
        }
        let pos = make_positive(&b, 1.0).unwrap();
        assert_eq!(all.sample(4 * 2), pos.sample(0));
        assert_eq!(all.sample(7 * 2 + 1), pos.sample(1));
    }

    #[test]
    fn batch_sizes_cover_partial_tail() {
        let ds = Dataset::new(Tensor::zeros(Shape::new(10, 1, 2, 2)), vec![0; 10], 2).unwrap();
        let sizes: Vec<usize> = batch_iter(&ds, 4, true, 3, 0).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn shuffle_is_deterministic_per_seed_and_epoch() {
        assert_eq!(epoch_order(100, true, 5, 2), epoch_order(100, true, 5, 2));
        assert_ne!(epoch_order(100, true, 5, 2), epoch_order(100, true, 5, 3));
        let mut o = epoch_order(100, true, 5, 0);
        o.sort_unstable();
        assert_eq!(o, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn one_hot_validation() {
        let z = OneHot::from_raw(2, 3, vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(matches!(z.validate(), Err(FfError::Contract(_))));
        let ok = OneHot::from_labels(&[2, 0], 3).unwrap();
        assert_eq!(ok.labels().unwrap(), vec![2, 0]);
    }

    #[test]
    fn empty_cifar_file_is_corrupt() {
        let err = parse_cifar_records(&[], Path::new("x.bin")).unwrap_err();
        assert!(err.to_string().contains("corrupt"));
    }

    #[test]
    fn empty_idx_file_is_truncated() {
        let err = parse_idx_images(&[], Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn standardization_centres_channels() {
        let x = Tensor::from_fn(Shape::new(4, 2, 2, 2), |i| (i % 5) as f32);
        let ds = Dataset::new(x, vec![0; 4], 2).unwrap();
        let stats = ChannelStats::compute(&ds);
        let st = ds.standardized(&stats).unwrap();
        let again = ChannelStats::compute(&st);
        for c in 0..2 {
            assert!(again.mean[c].abs() < 1e-5);
            assert!((again.std[c] - 1.0).abs() < 1e-4);
        }
    }
}
