use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::IMAGE_SIZE;
use crate::tensor::Tensor;

use super::dataset::DatasetContainer;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub size: usize,
    pub luma: [f64; 3],
    pub mean: f32,
    pub std: f32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            size: IMAGE_SIZE,
            luma: [0.299, 0.587, 0.114],
            mean: 0.5,
            std: 0.5,
        }
    }
}

/// Unlabeled network input, `[N, 1, size, size]`.
#[derive(Clone, Debug)]
pub struct Images {
    pub tensor: Tensor<f32>,
}

impl Images {
    pub fn len(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_len(&self) -> usize {
        self.tensor.shape()[1..].iter().product()
    }

    /// Gathers the listed rows into a new batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let per = self.image_len();
        let src = self.tensor.data();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&src[i * per..(i + 1) * per]);
        }
        let mut shape = self.tensor.shape().to_vec();
        shape[0] = indices.len();
        Tensor::new(shape, data)
    }

    /// Contiguous rows `[start, end)`.
    pub fn range(&self, start: usize, end: usize) -> Result<Tensor<f32>> {
        let idx: Vec<usize> = (start..end).collect();
        self.batch(&idx)
    }
}

/// Network input with its labels.
#[derive(Clone, Debug)]
pub struct LabeledImages {
    pub images: Images,
    pub labels: Vec<usize>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Drops the labels; what the adaptation stage sees of the target.
    pub fn unlabeled(&self) -> Images {
        self.images.clone()
    }
}

fn round_byte(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Weighted channel sum, rounded half up.
pub fn to_gray(pixels: &[u8], channels: usize, plane: usize, luma: [f64; 3]) -> Vec<u8> {
    if channels == 1 {
        return pixels.to_vec();
    }
    (0..plane)
        .map(|i| {
            let v = luma[0] * pixels[i] as f64
                + luma[1] * pixels[plane + i] as f64
                + luma[2] * pixels[2 * plane + i] as f64;
            round_byte(v)
        })
        .collect()
}

/// Bilinear resize of one plane, sampling at half-pixel centers with edge
/// clamping.
pub fn resize_bilinear(src: &[u8], h: usize, w: usize, oh: usize, ow: usize) -> Vec<u8> {
    if h == oh && w == ow {
        return src.to_vec();
    }
    let coords = |dst: usize, scale: f64, n: usize| {
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, s - lo as f64)
    };
    let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, fy) = coords(y, sy, h);
        for x in 0..ow {
            let (x0, x1, fx) = coords(x, sx, w);
            let p = |yy: usize, xx: usize| src[yy * w + xx] as f64;
            let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
            let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
            out.push(round_byte(top * (1.0 - fy) + bottom * fy));
        }
    }
    out
}

pub fn normalize_byte(v: u8, cfg: &PreprocessConfig) -> f32 {
    (v as f32 / 255.0 - cfg.mean) / cfg.std
}

/// Grayscale, resize to `size × size`, normalize.
pub fn preprocess(raw: &DatasetContainer, cfg: &PreprocessConfig) -> Result<LabeledImages> {
    if raw.is_empty() {
        return Err(Error::Validation(format!("dataset {} is empty", raw.name)));
    }
    let (h, w, s) = (raw.height, raw.width, cfg.size);
    let mut data = Vec::with_capacity(raw.len() * s * s);
    for i in 0..raw.len() {
        let gray = to_gray(raw.image(i), raw.channels, h * w, cfg.luma);
        let resized = resize_bilinear(&gray, h, w, s, s);
        data.extend(resized.into_iter().map(|v| normalize_byte(v, cfg)));
    }
    Ok(LabeledImages {
        images: Images {
            tensor: Tensor::new([raw.len(), 1, s, s], data)?,
        },
        labels: raw.labels().iter().map(|&l| l as usize).collect(),
    })
}
