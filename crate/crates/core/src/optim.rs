//! Adam and deterministic mini-batch planning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Module};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Adam with bias-corrected moments. One instance per module.
pub struct Adam<T> {
    config: AdamConfig,
    step: u64,
    moments: Option<Vec<Moments<T>>>,
}

impl<T: Float> Adam<T> {
    /// Optimizer without moment buffers; call [`Adam::init`] before stepping.
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: None,
        }
    }

    pub fn for_module<M: Module<T> + ?Sized>(config: AdamConfig, module: &M) -> Self {
        let mut adam = Self::new(config);
        adam.init(module);
        adam
    }

    /// Zeroes the moment buffers to match the module's parameters.
    pub fn init<M: Module<T> + ?Sized>(&mut self, module: &M) {
        self.step = 0;
        self.moments = Some(
            module
                .parameters()
                .iter()
                .map(|p| Moments {
                    m: vec![T::zero(); p.value().numel()],
                    v: vec![T::zero(); p.value().numel()],
                })
                .collect(),
        );
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Second-moment buffers, parameter by parameter.
    pub fn second_moments(&self) -> impl Iterator<Item = &[T]> {
        self.moments.iter().flatten().map(|m| m.v.as_slice())
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Frozen parameters are skipped.
    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M) -> Result<()> {
        let moments = self.moments.as_mut().ok_or(Error::OptimizerUninitialized)?;
        let mut params = module.parameters_mut();
        if params.len() != moments.len() {
            return Err(Error::dim(
                "adam_step",
                format!(
                    "optimizer tracks {} parameters, module has {}",
                    moments.len(),
                    params.len()
                ),
            ));
        }
        for (p, mom) in params.iter().zip(moments.iter()) {
            if p.value().numel() != mom.m.len() {
                return Err(Error::dim(
                    "adam_step",
                    format!("shape of {} changed since init", p.name()),
                ));
            }
        }

        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let bias1 = T::one() - b1.powi(t);
        let bias2 = T::one() - b2.powi(t);

        for (p, mom) in params.iter_mut().zip(moments.iter_mut()) {
            if p.is_frozen() {
                p.zero_grad();
                continue;
            }
            let (value, grad) = p.value_and_grad_mut();
            for i in 0..value.len() {
                let g = grad[i];
                mom.m[i] = b1 * mom.m[i] + (T::one() - b1) * g;
                mom.v[i] = b2 * mom.v[i] + (T::one() - b2) * g * g;
                let m_hat = mom.m[i] / bias1;
                let v_hat = mom.v[i] / bias2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            grad.fill(T::zero());
        }
        Ok(())
    }
}

/// How a dataset is cut into shuffled mini-batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub drop_last: bool,
}

impl Default for BatchPlan {
    fn default() -> Self {
        BatchPlan {
            epochs: 1,
            batch_size: 200,
            seed: 0,
            drop_last: false,
        }
    }
}

/// SplitMix64 finalizer; mixes seed and epoch into one RNG seed.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl BatchPlan {
    /// Index batches for one epoch. Pure in `(len, seed, epoch)`.
    pub fn batch_indices(&self, len: usize, epoch: usize) -> Result<Vec<Vec<usize>>> {
        if len == 0 {
            return Err(Error::Validation("cannot batch an empty dataset".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be positive".into()));
        }
        let mut order: Vec<usize> = (0..len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, epoch as u64));
        order.shuffle(&mut rng);
        let batches = order
            .chunks(self.batch_size)
            .filter(|c| !self.drop_last || c.len() == self.batch_size)
            .map(<[usize]>::to_vec)
            .collect();
        Ok(batches)
    }

    /// Number of batches per epoch for a dataset of `len` items.
    pub fn batches_per_epoch(&self, len: usize) -> usize {
        if self.drop_last {
            len / self.batch_size
        } else {
            len.div_ceil(self.batch_size)
        }
    }
}
