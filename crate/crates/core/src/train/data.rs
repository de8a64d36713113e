//! MNIST (IDX) and CIFAR-10 (binary batch) readers.
//!
//! Pixels stay as raw bytes; normalization to per-channel zero mean and unit
//! variance happens when a batch is assembled, using statistics of the
//! training split.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, ParseErrorKind, Result};
use crate::tensor::{Real, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

fn parse_err(path: &Path, offset: usize, kind: ParseErrorKind, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        kind,
        detail: detail.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err(path, bytes.len(), ParseErrorKind::Truncated, "header ends early"))
}

/// Decodes an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(parse_err(
            path,
            0,
            ParseErrorKind::BadMagic,
            format!("expected {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(parse_err(
            path,
            bytes.len(),
            ParseErrorKind::Truncated,
            format!("{n} images of {rows}x{cols} need {need} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > need {
        return Err(parse_err(path, need, ParseErrorKind::Malformed, "trailing bytes after last image"));
    }
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

/// Decodes an IDX label file, checking every label against `num_classes`.
pub fn parse_idx_labels(bytes: &[u8], path: &Path, num_classes: usize) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(parse_err(
            path,
            0,
            ParseErrorKind::BadMagic,
            format!("expected {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let need = 8 + n;
    if bytes.len() < need {
        return Err(parse_err(
            path,
            bytes.len(),
            ParseErrorKind::Truncated,
            format!("{n} labels need {need} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > need {
        return Err(parse_err(path, need, ParseErrorKind::Malformed, "trailing bytes after last label"));
    }
    let labels = bytes[8..].to_vec();
    check_labels(&labels, 8, 1, path, num_classes)?;
    Ok(labels)
}

fn check_labels(labels: &[u8], base: usize, stride: usize, path: &Path, num_classes: usize) -> Result<()> {
    match labels.iter().position(|&l| l as usize >= num_classes) {
        Some(i) => Err(parse_err(
            path,
            base + i * stride,
            ParseErrorKind::LabelOutOfRange,
            format!("label {} of record {i} is outside 0..{num_classes}", labels[i]),
        )),
        None => Ok(()),
    }
}

/// Decodes one CIFAR-10 batch into `(pixels, labels)`; pixels are
/// channel-major per record (`3 x 32 x 32`).
pub fn parse_cifar_batch(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(parse_err(
            path,
            whole,
            ParseErrorKind::Truncated,
            format!("{} bytes is not a whole number of {CIFAR_RECORD}-byte records", bytes.len()),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    check_labels(&labels, 0, CIFAR_RECORD, path, 10)?;
    Ok((pixels, labels))
}

/// Per-channel mean and standard deviation of raw pixel bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn from_pixels(pixels: &[u8], channels: usize, plane: usize) -> Self {
        let mut sum = vec![0.0f64; channels];
        let mut sq = vec![0.0f64; channels];
        for (k, chunk) in pixels.chunks(plane).enumerate() {
            let c = k % channels;
            for &p in chunk {
                let v = p as f64;
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        let count = (pixels.len() / channels).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / count - m * m).max(0.0).sqrt().max(1e-12))
            .collect();
        Self { mean, std }
    }
}

/// Byte images with labels and the normalization applied on access.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    channels: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    norm: Normalization,
}

impl Dataset {
    pub fn new(
        pixels: Vec<u8>,
        labels: Vec<u8>,
        [channels, height, width]: [usize; 3],
        num_classes: usize,
        norm: Normalization,
    ) -> Result<Self> {
        if pixels.len() != labels.len() * channels * height * width {
            return Err(Error::shape(
                "Dataset::new",
                format!(
                    "{} pixel bytes for {} images of {channels}x{height}x{width}",
                    pixels.len(),
                    labels.len()
                ),
            ));
        }
        if norm.mean.len() != channels || norm.std.len() != channels {
            return Err(Error::shape("Dataset::new", "normalization does not match channel count"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Config(format!("label {l} outside 0..{num_classes}")));
        }
        Ok(Self {
            pixels,
            labels,
            channels,
            height,
            width,
            num_classes,
            norm,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[N, C, H, W]`.
    pub fn shape(&self) -> [usize; 4] {
        [self.len(), self.channels, self.height, self.width]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn raw_image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Surrounds every image with `pad` rows and columns of raw zeros. The
    /// normalization statistics are kept.
    pub fn padded(&self, pad: usize) -> Self {
        let (h, w) = (self.height + 2 * pad, self.width + 2 * pad);
        let mut pixels = vec![0u8; self.len() * self.channels * h * w];
        for (k, plane) in self.pixels.chunks(self.height * self.width).enumerate() {
            let out = &mut pixels[k * h * w..(k + 1) * h * w];
            for (r, row) in plane.chunks(self.width).enumerate() {
                let start = (r + pad) * w + pad;
                out[start..start + self.width].copy_from_slice(row);
            }
        }
        Self {
            pixels,
            height: h,
            width: w,
            labels: self.labels.clone(),
            norm: self.norm.clone(),
            ..*self
        }
    }

    /// The first `n` images (or all, if fewer).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            pixels: self.pixels[..n * self.image_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            norm: self.norm.clone(),
            ..*self
        }
    }

    /// Normalized `[B, C, H, W]` batch of the given indices. With `flip`,
    /// each image is mirrored left-right with probability 1/2.
    pub fn batch<T: Real>(&self, indices: &[usize], mut flip: Option<&mut dyn rand::RngCore>) -> (Tensor<T>, Vec<usize>) {
        let (c, h, w) = (self.channels, self.height, self.width);
        let scale: Vec<(f64, f64)> = (0..c).map(|ci| (self.norm.mean[ci], 1.0 / self.norm.std[ci])).collect();
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            let mirror = flip.as_mut().is_some_and(|r| r.gen_bool(0.5));
            let img = self.raw_image(i);
            for ci in 0..c {
                let (m, inv) = scale[ci];
                for r in 0..h {
                    let row = &img[(ci * h + r) * w..(ci * h + r + 1) * w];
                    if mirror {
                        data.extend(row.iter().rev().map(|&p| T::of((p as f64 - m) * inv)));
                    } else {
                        data.extend(row.iter().map(|&p| T::of((p as f64 - m) * inv)));
                    }
                }
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i] as usize).collect();
        let tensor = Tensor::new(vec![indices.len(), c, h, w], data).expect("batch extent");
        (tensor, labels)
    }
}

/// Training and test splits sharing the training-split normalization.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

/// File names of the standard MNIST distribution, uncompressed.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

fn locate(dir: &Path, name: &str) -> PathBuf {
    let plain = dir.join(name);
    if plain.exists() {
        return plain;
    }
    // Some mirrors ship `train-images.idx3-ubyte`.
    let dotted = dir.join(name.replacen("-idx", ".idx", 1));
    if dotted.exists() {
        dotted
    } else {
        plain
    }
}

fn load_idx_pair(dir: &Path, images: &str, labels: &str) -> Result<(usize, usize, usize, Vec<u8>, Vec<u8>)> {
    let ip = locate(dir, images);
    let lp = locate(dir, labels);
    let (n, rows, cols, pixels) = parse_idx_images(&read(&ip)?, &ip)?;
    let labels = parse_idx_labels(&read(&lp)?, &lp, 10)?;
    if labels.len() != n {
        return Err(parse_err(&lp, 4, ParseErrorKind::Malformed, format!("{} labels for {n} images", labels.len())));
    }
    Ok((n, rows, cols, pixels, labels))
}

/// Reads the four MNIST files from `dir`: `[60000,1,28,28]` and
/// `[10000,1,28,28]` in file order.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<Splits> {
    let dir = dir.as_ref();
    let (_, r, c, train_px, train_lb) = load_idx_pair(dir, MNIST_FILES[0], MNIST_FILES[1])?;
    let (_, tr, tc, test_px, test_lb) = load_idx_pair(dir, MNIST_FILES[2], MNIST_FILES[3])?;
    if (tr, tc) != (r, c) {
        return Err(Error::Config(format!("train images are {r}x{c}, test images {tr}x{tc}")));
    }
    let norm = Normalization::from_pixels(&train_px, 1, r * c);
    Ok(Splits {
        train: Dataset::new(train_px, train_lb, [1, r, c], 10, norm.clone())?,
        test: Dataset::new(test_px, test_lb, [1, r, c], 10, norm)?,
    })
}

/// Reads `data_batch_1.bin` .. `data_batch_5.bin` and `test_batch.bin`.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<Splits> {
    let dir = dir.as_ref();
    let mut train_px = Vec::new();
    let mut train_lb = Vec::new();
    for k in 1..=5 {
        let p = dir.join(format!("data_batch_{k}.bin"));
        let (px, lb) = parse_cifar_batch(&read(&p)?, &p)?;
        train_px.extend(px);
        train_lb.extend(lb);
    }
    let p = dir.join("test_batch.bin");
    let (test_px, test_lb) = parse_cifar_batch(&read(&p)?, &p)?;
    let norm = Normalization::from_pixels(&train_px, 3, 32 * 32);
    Ok(Splits {
        train: Dataset::new(train_px, train_lb, [3, 32, 32], 10, norm.clone())?,
        test: Dataset::new(test_px, test_lb, [3, 32, 32], 10, norm)?,
    })
}
