use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::idx::{load_idx, save_idx, IdxArray};

/// Raw digits: `N×C×H×W` bytes plus one label per image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetContainer {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    images: Vec<u8>,
    labels: Vec<u8>,
}

impl DatasetContainer {
    pub fn new(
        name: impl Into<String>,
        [channels, height, width]: [usize; 3],
        images: Vec<u8>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Validation(format!(
                "images must have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::Validation("images must have positive height and width".into()));
        }
        let per = channels * height * width;
        if images.len() != per * labels.len() {
            return Err(Error::Validation(format!(
                "{} image bytes do not match {} labels of {channels}x{height}x{width}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= 10) {
            return Err(Error::Validation(format!("label {bad} outside [0, 10)")));
        }
        Ok(DatasetContainer {
            name: name.into(),
            channels,
            height,
            width,
            images,
            labels,
        })
    }

    /// Builds a dataset from an image array (rank 3 loads as one channel)
    /// and a rank-1 label array.
    pub fn from_idx(name: impl Into<String>, images: IdxArray, labels: IdxArray) -> Result<Self> {
        let shape = match images.dims.as_slice() {
            &[_, h, w] => [1, h, w],
            &[_, c, h, w] => [c, h, w],
            other => return Err(Error::Format(format!("image array must be rank 3 or 4, got {other:?}"))),
        };
        if labels.dims.len() != 1 {
            return Err(Error::Format(format!(
                "label array must be rank 1, got {:?}",
                labels.dims
            )));
        }
        if images.dims[0] != labels.dims[0] {
            return Err(Error::Validation(format!(
                "{} images but {} labels",
                images.dims[0], labels.dims[0]
            )));
        }
        Self::new(name, shape, images.data, labels.data)
    }

    /// Image array as stored on disk: rank 3 for grayscale, rank 4 otherwise.
    pub fn images_idx(&self) -> IdxArray {
        let dims = if self.channels == 1 {
            vec![self.len(), self.height, self.width]
        } else {
            vec![self.len(), self.channels, self.height, self.width]
        };
        IdxArray {
            dims,
            data: self.images.clone(),
        }
    }

    pub fn labels_idx(&self) -> IdxArray {
        IdxArray {
            dims: vec![self.len()],
            data: self.labels.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn images(&self) -> &[u8] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub(crate) fn images_mut(&mut self) -> &mut [u8] {
        &mut self.images
    }

    /// New dataset holding the listed examples, in order.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Self {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        DatasetContainer {
            name: name.into(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            images,
            labels,
        }
    }

    /// Contiguous range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize, name: impl Into<String>) -> Self {
        let indices: Vec<usize> = (start..end.min(self.len())).collect();
        self.select(&indices, name)
    }

    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        Self::new(
            self.name.clone(),
            [self.channels, self.height, self.width],
            self.images.clone(),
            labels,
        )
    }

    pub fn image_path(dir: &Path, name: &str) -> PathBuf {
        dir.join(format!("{name}-images.idx"))
    }

    pub fn labels_path(dir: &Path, name: &str) -> PathBuf {
        dir.join(format!("{name}-labels.idx"))
    }

    /// Reads `<name>-images.idx` and `<name>-labels.idx` from `dir`.
    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let images = load_idx(Self::image_path(dir, name))?;
        let labels = load_idx(Self::labels_path(dir, name))?;
        Self::from_idx(name, images, labels)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_idx(&self.images_idx(), Self::image_path(dir, &self.name))?;
        save_idx(&self.labels_idx(), Self::labels_path(dir, &self.name))
    }
}

/// Seeded permutation split; `round(fraction·N)` examples go to the first
/// part.
pub fn split(ds: &DatasetContainer, fraction: f64, seed: u64) -> Result<(DatasetContainer, DatasetContainer)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Validation(format!("split fraction {fraction} outside (0, 1)")));
    }
    let n_train = (fraction * ds.len() as f64).round() as usize;
    if n_train == 0 || n_train == ds.len() {
        return Err(Error::Validation(format!(
            "split of {} examples at {fraction} leaves one side empty",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = order.split_at(n_train);
    Ok((
        ds.select(a, format!("{}-train", ds.name)),
        ds.select(b, format!("{}-test", ds.name)),
    ))
}
