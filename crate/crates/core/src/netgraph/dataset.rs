use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NetError;
use crate::tensorcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled images `[N, C, H, W]` with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self, NetError> {
        let shape = images.shape();
        if shape.len() != 4 {
            return Err(NetError::BatchShape {
                expected: vec![0, 0, 0, 0],
                actual: shape.to_vec(),
            });
        }
        if shape[0] != labels.len() {
            return Err(NetError::Manifest(format!("{} images but {} labels", shape[0], labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(NetError::BadLabel { label, classes });
        }
        if images.data().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(NetError::Manifest("pixel outside [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// `[C, H, W]`
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// One image as a batch of one.
    pub fn image(&self, i: usize) -> Tensor {
        self.batch(&[i]).0
    }

    /// Gathers the listed examples into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let [c, h, w] = self.image_shape();
        let size = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * size);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * size..(i + 1) * size]);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::from_parts(vec![indices.len(), c, h, w], data), labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.batch(indices);
        Dataset {
            images,
            labels,
            classes: self.classes,
            split: self.split,
        }
    }

    /// Concatenates two datasets with identical image shapes.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset, NetError> {
        if self.image_shape() != other.image_shape() {
            return Err(NetError::Manifest("image shapes differ".into()));
        }
        let mut data = self.images.data().to_vec();
        data.extend_from_slice(other.images.data());
        let mut shape = self.images.shape().to_vec();
        shape[0] += other.len();
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(
            Tensor::new(shape, data)?,
            labels,
            self.classes.max(other.classes),
            self.split,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub split: Split,
}

impl SyntheticConfig {
    pub fn new(classes: usize, per_class: usize, size: usize, seed: u64, split: Split) -> Self {
        Self {
            classes,
            per_class,
            height: size,
            width: size,
            seed,
            split,
        }
    }
}

/// Per-sample random appearance shared by all families.
struct Style {
    background: f64,
    foreground: f64,
    phase: f64,
    dy: f64,
    dx: f64,
    scale: f64,
}

/// Foreground mask of family `family` at pixel (y, x), normalised coordinates
/// in `[-1, 1]`. Classes beyond ten reuse the families at a finer frequency.
fn mask(family: usize, octave: usize, y: f64, x: f64, s: &Style) -> bool {
    let freq = (3.0 + octave as f64 * 2.0) * s.scale;
    let grating = |theta: f64| ((x * theta.cos() + y * theta.sin()) * freq * PI + s.phase).sin() > 0.0;
    let (cy, cx) = (y - s.dy, x - s.dx);
    let r = (cy * cy + cx * cx).sqrt();
    let size = 0.55 * s.scale / (1.0 + octave as f64 * 0.3);
    match family {
        0 => grating(0.0),
        1 => grating(PI / 2.0),
        2 => grating(PI / 4.0),
        3 => grating(3.0 * PI / 4.0),
        4 => r < size,
        5 => (r - size).abs() < 0.12,
        6 => {
            let q = freq * 0.75;
            let a = ((x + 1.0) * q + s.phase / PI).floor() as i64;
            let b = ((y + 1.0) * q + s.phase / PI).floor() as i64;
            (a + b).rem_euclid(2) == 0
        }
        7 => cy.abs() < 0.15 || cx.abs() < 0.15,
        8 => {
            let m = cy.abs().max(cx.abs());
            (m - size).abs() < 0.1
        }
        _ => ((cx - cy).abs() < 0.15 || (cx + cy).abs() < 0.15) && r < size * 1.3,
    }
}

/// Procedurally drawn shape/texture classes (gratings at four orientations,
/// disk, ring, checkers, cross, square outline, diagonal X) with random
/// contrast, phase, offset and scale plus pixel noise. Deterministic per seed.
pub fn generate_synthetic_dataset(cfg: &SyntheticConfig) -> Result<Dataset, NetError> {
    if cfg.classes == 0 || cfg.per_class == 0 || cfg.height == 0 || cfg.width == 0 {
        return Err(NetError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.classes * cfg.per_class;
    let (h, w) = (cfg.height, cfg.width);
    let mut data = Vec::with_capacity(n * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % cfg.classes;
        let style = Style {
            background: rng.gen_range(0.0..0.35),
            foreground: rng.gen_range(0.65..1.0),
            phase: rng.gen_range(0.0..2.0 * PI),
            dy: rng.gen_range(-0.25..0.25),
            dx: rng.gen_range(-0.25..0.25),
            scale: rng.gen_range(0.85..1.15),
        };
        for py in 0..h {
            for px in 0..w {
                let y = (py as f64 + 0.5) / h as f64 * 2.0 - 1.0;
                let x = (px as f64 + 0.5) / w as f64 * 2.0 - 1.0;
                let on = mask(label % 10, label / 10, y, x, &style);
                let base = if on { style.foreground } else { style.background };
                let noisy: f64 = base + rng.gen_range(-0.05..0.05);
                data.push(noisy.clamp(0.0, 1.0));
            }
        }
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, 1, h, w], data)?, labels, cfg.classes, cfg.split)
}

fn be_u32(bytes: &[u8], at: usize) -> Result<usize, NetError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .ok_or_else(|| NetError::Idx("truncated header".into()))
}

/// Parses an IDX file of unsigned bytes; returns the dimensions and payload.
fn parse_idx(bytes: &[u8], rank: usize) -> Result<(Vec<usize>, &[u8]), NetError> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(NetError::Idx("bad magic number".into()));
    }
    if bytes[2] != 0x08 {
        return Err(NetError::Idx(format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    if bytes[3] as usize != rank {
        return Err(NetError::Idx(format!("expected rank {rank}, found {}", bytes[3])));
    }
    let dims = (0..rank).map(|i| be_u32(bytes, 4 + 4 * i)).collect::<Result<Vec<_>, _>>()?;
    let start = 4 + 4 * rank;
    let len: usize = dims.iter().product();
    let payload = bytes
        .get(start..start + len)
        .ok_or_else(|| NetError::Idx(format!("payload needs {len} bytes, found {}", bytes.len() - start)))?;
    Ok((dims, payload))
}

/// Loads an MNIST-style image/label pair. Images are rescaled to `[0, 1]`
/// and zero-padded (centred) up to `pad_to` when that is larger.
pub fn read_idx_dataset(
    images: &Path,
    labels: &Path,
    pad_to: Option<usize>,
    split: Split,
) -> Result<Dataset, NetError> {
    let img_bytes = std::fs::read(images)?;
    let lbl_bytes = std::fs::read(labels)?;
    let (dims, pixels) = parse_idx(&img_bytes, 3)?;
    let (ldims, raw_labels) = parse_idx(&lbl_bytes, 1)?;
    if dims[0] != ldims[0] {
        return Err(NetError::Idx(format!("{} images but {} labels", dims[0], ldims[0])));
    }
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    if n == 0 {
        return Err(NetError::EmptyDataset);
    }
    let (oh, ow) = match pad_to {
        Some(p) => (p.max(h), p.max(w)),
        None => (h, w),
    };
    let (top, left) = ((oh - h) / 2, (ow - w) / 2);
    let mut data = vec![0.0; n * oh * ow];
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                data[(i * oh + y + top) * ow + x + left] = pixels[(i * h + y) * w + x] as f64 / 255.0;
            }
        }
    }
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1).max(10);
    Dataset::new(Tensor::new(vec![n, 1, oh, ow], data)?, labels, classes, split)
}

/// Writes an unsigned-byte IDX file (`dims` big-endian, then the payload).
pub fn write_idx(path: &Path, dims: &[usize], payload: &[u8]) -> Result<(), NetError> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(payload);
    std::fs::write(path, out)?;
    Ok(())
}
