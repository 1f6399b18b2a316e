//! LeNet encoder, linear classifier head and the three-layer domain
//! discriminator.
//!
//! Spatial pipeline of the encoder on 28x28 input: conv 28→24, pool →12,
//! conv →8, pool →4, so the flattened width is 50·4·4 = 800.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, LayerEntry, CHECKPOINT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Bound, Float, Module, Parameter, Tape, Tensor, Var};

pub const IMAGE_SIZE: usize = 28;
pub const FEATURE_DIM: usize = 500;
pub const NUM_CLASSES: usize = 10;
pub const DISCRIMINATOR_HIDDEN: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    Encoder,
    Classifier,
    Discriminator,
}

impl Arch {
    fn salt(self) -> u64 {
        match self {
            Arch::Encoder => 0x656e_636f_6465_7200,
            Arch::Classifier => 0x636c_6173_7369_6600,
            Arch::Discriminator => 0x6469_7363_7269_6d00,
        }
    }
}

/// Uniform Glorot bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn new(seed: u64, arch: Arch) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed ^ arch.salt()),
        }
    }

    fn weight<T: Float>(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) -> Parameter<T> {
        let a = glorot_bound(fan_in, fan_out);
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape.to_vec(), |_| T::from_f64(rng.random_range(-a..a)));
        Parameter::new(name, t)
    }

    fn bias<T: Float>(name: &str, len: usize) -> Parameter<T> {
        Parameter::new(name, Tensor::zeros([len]))
    }
}

/// Modified LeNet feature extractor: two conv/ReLU/pool stages and a
/// 500-unit fully connected layer with ReLU.
#[derive(Clone, Debug)]
pub struct Encoder<T = f32> {
    pub conv1_weight: Parameter<T>,
    pub conv1_bias: Parameter<T>,
    pub conv2_weight: Parameter<T>,
    pub conv2_bias: Parameter<T>,
    pub fc_weight: Parameter<T>,
    pub fc_bias: Parameter<T>,
}

impl<T: Float> Encoder<T> {
    pub fn init(seed: u64) -> Self {
        let mut init = Init::new(seed, Arch::Encoder);
        Encoder {
            conv1_weight: init.weight("encoder.conv1.weight", &[20, 1, 5, 5], 25, 20 * 25),
            conv1_bias: Init::bias("encoder.conv1.bias", 20),
            conv2_weight: init.weight("encoder.conv2.weight", &[50, 20, 5, 5], 20 * 25, 50 * 25),
            conv2_bias: Init::bias("encoder.conv2.bias", 50),
            fc_weight: init.weight("encoder.fc.weight", &[FEATURE_DIM, 800], 800, FEATURE_DIM),
            fc_bias: Init::bias("encoder.fc.bias", FEATURE_DIM),
        }
    }

    /// `[N, 1, 28, 28]` images to `[N, 500]` features.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, images: Var) -> Result<Var> {
        let s = tape.value(images).shape();
        if s.len() != 4 || s[1] != 1 || s[2] != IMAGE_SIZE || s[3] != IMAGE_SIZE {
            return Err(Error::dim(
                "encoder_forward",
                format!("expected [N, 1, 28, 28] images, got {s:?}"),
            ));
        }
        let h = tape.conv2d(images, bound[0], bound[1])?;
        let h = tape.relu(h)?;
        let h = tape.maxpool2(h)?;
        let h = tape.conv2d(h, bound[2], bound[3])?;
        let h = tape.relu(h)?;
        let h = tape.maxpool2(h)?;
        let h = tape.flatten(h)?;
        let h = tape.linear(h, bound[4], bound[5])?;
        tape.relu(h)
    }

    pub fn cast<U: Float>(&self) -> Encoder<U> {
        Encoder {
            conv1_weight: cast_param(&self.conv1_weight),
            conv1_bias: cast_param(&self.conv1_bias),
            conv2_weight: cast_param(&self.conv2_weight),
            conv2_bias: cast_param(&self.conv2_bias),
            fc_weight: cast_param(&self.fc_weight),
            fc_bias: cast_param(&self.fc_bias),
        }
    }
}

impl<T: Float> Module<T> for Encoder<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![
            &self.conv1_weight,
            &self.conv1_bias,
            &self.conv2_weight,
            &self.conv2_bias,
            &self.fc_weight,
            &self.fc_bias,
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![
            &mut self.conv1_weight,
            &mut self.conv1_bias,
            &mut self.conv2_weight,
            &mut self.conv2_bias,
            &mut self.fc_weight,
            &mut self.fc_bias,
        ]
    }
}

/// Single affine map from 500 features to 10 logits.
#[derive(Clone, Debug)]
pub struct Classifier<T = f32> {
    pub fc_weight: Parameter<T>,
    pub fc_bias: Parameter<T>,
}

impl<T: Float> Classifier<T> {
    pub fn init(seed: u64) -> Self {
        let mut init = Init::new(seed, Arch::Classifier);
        Classifier {
            fc_weight: init.weight(
                "classifier.fc.weight",
                &[NUM_CLASSES, FEATURE_DIM],
                FEATURE_DIM,
                NUM_CLASSES,
            ),
            fc_bias: Init::bias("classifier.fc.bias", NUM_CLASSES),
        }
    }

    /// Raw logits; no softmax.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, features: Var) -> Result<Var> {
        expect_features("classifier_forward", tape, features)?;
        tape.linear(features, bound[0], bound[1])
    }

    pub fn cast<U: Float>(&self) -> Classifier<U> {
        Classifier {
            fc_weight: cast_param(&self.fc_weight),
            fc_bias: cast_param(&self.fc_bias),
        }
    }
}

impl<T: Float> Module<T> for Classifier<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.fc_weight, &self.fc_bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.fc_weight, &mut self.fc_bias]
    }
}

/// Domain discriminator: 500 → 500 → 500 → 1 with ReLU between layers.
#[derive(Clone, Debug)]
pub struct Discriminator<T = f32> {
    pub fc1_weight: Parameter<T>,
    pub fc1_bias: Parameter<T>,
    pub fc2_weight: Parameter<T>,
    pub fc2_bias: Parameter<T>,
    pub fc3_weight: Parameter<T>,
    pub fc3_bias: Parameter<T>,
}

impl<T: Float> Discriminator<T> {
    pub fn init(seed: u64) -> Self {
        let mut init = Init::new(seed, Arch::Discriminator);
        let h = DISCRIMINATOR_HIDDEN;
        Discriminator {
            fc1_weight: init.weight("discriminator.fc1.weight", &[h, FEATURE_DIM], FEATURE_DIM, h),
            fc1_bias: Init::bias("discriminator.fc1.bias", h),
            fc2_weight: init.weight("discriminator.fc2.weight", &[h, h], h, h),
            fc2_bias: Init::bias("discriminator.fc2.bias", h),
            fc3_weight: init.weight("discriminator.fc3.weight", &[1, h], h, 1),
            fc3_bias: Init::bias("discriminator.fc3.bias", 1),
        }
    }

    /// One raw logit per example, shape `[N, 1]`.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, features: Var) -> Result<Var> {
        expect_features("discriminator_forward", tape, features)?;
        let h = tape.linear(features, bound[0], bound[1])?;
        let h = tape.relu(h)?;
        let h = tape.linear(h, bound[2], bound[3])?;
        let h = tape.relu(h)?;
        tape.linear(h, bound[4], bound[5])
    }

    pub fn cast<U: Float>(&self) -> Discriminator<U> {
        Discriminator {
            fc1_weight: cast_param(&self.fc1_weight),
            fc1_bias: cast_param(&self.fc1_bias),
            fc2_weight: cast_param(&self.fc2_weight),
            fc2_bias: cast_param(&self.fc2_bias),
            fc3_weight: cast_param(&self.fc3_weight),
            fc3_bias: cast_param(&self.fc3_bias),
        }
    }
}

impl<T: Float> Module<T> for Discriminator<T> {
    fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![
            &self.fc1_weight,
            &self.fc1_bias,
            &self.fc2_weight,
            &self.fc2_bias,
            &self.fc3_weight,
            &self.fc3_bias,
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![
            &mut self.fc1_weight,
            &mut self.fc1_bias,
            &mut self.fc2_weight,
            &mut self.fc2_bias,
            &mut self.fc3_weight,
            &mut self.fc3_bias,
        ]
    }
}

fn expect_features<T: Float>(op: &'static str, tape: &Tape<T>, features: Var) -> Result<()> {
    let s = tape.value(features).shape();
    if s.len() != 2 || s[1] != FEATURE_DIM {
        return Err(Error::dim(
            op,
            format!("expected [N, {FEATURE_DIM}] features, got {s:?}"),
        ));
    }
    Ok(())
}

fn cast_param<T: Float, U: Float>(p: &Parameter<T>) -> Parameter<U> {
    let mut out = Parameter::new(p.name(), p.value().cast());
    out.set_frozen(p.is_frozen());
    out
}

/// Freshly initialized parameters for one architecture, boxed behind the
/// common module interface.
pub fn init_weights(seed: u64, arch: Arch) -> Box<dyn Module<f32>> {
    match arch {
        Arch::Encoder => Box::new(Encoder::<f32>::init(seed)),
        Arch::Classifier => Box::new(Classifier::<f32>::init(seed)),
        Arch::Discriminator => Box::new(Discriminator::<f32>::init(seed)),
    }
}

/// `(name, shape)` table identifying a module's layout.
pub fn layer_table<T: Float, M: Module<T> + ?Sized>(module: &M) -> Vec<LayerEntry> {
    module
        .parameters()
        .iter()
        .map(|p| LayerEntry {
            name: p.name().to_string(),
            shape: p.shape().to_vec(),
        })
        .collect()
}
