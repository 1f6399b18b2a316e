//! Three-stage protocol: supervised pre-training on the source domain,
//! adversarial adaptation of a separate target encoder, and testing.
//!
//! Domain labels for the discriminator are fixed: source features are 1,
//! target features 0. The mapping step trains the target encoder against
//! the inverted label 1.

mod config;
mod protocol;

pub use config::{hex, RunConfig, StageConfig};
pub use protocol::{run_protocol, Domain, LossCurves, ProtocolReport, ProtocolRun};

use crate::data::{Images, LabeledImages};
use crate::error::{Error, Result};
use crate::models::{Classifier, Discriminator, Encoder, NUM_CLASSES};
use crate::optim::{mix_seed, Adam, AdamConfig, BatchPlan};
use crate::tensor::{Module, Tape, Tensor};

const SOURCE_DOMAIN: f32 = 1.0;
const TARGET_DOMAIN: f32 = 0.0;

/// Rows per forward pass when only predictions are needed.
const EVAL_CHUNK: usize = 500;

// Salts separating the RNG streams derived from one run seed.
const SALT_CLASSIFIER: u64 = 1;
const SALT_DISCRIMINATOR: u64 = 2;
const SALT_PRETRAIN_BATCHES: u64 = 3;
const SALT_SOURCE_STREAM: u64 = 4;
const SALT_TARGET_STREAM: u64 = 5;

/// Training hyperparameters for one stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn pretrain(cfg: &RunConfig) -> Self {
        TrainConfig {
            epochs: cfg.pretrain.epochs,
            lr: cfg.pretrain.lr,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
        }
    }

    pub fn adapt(cfg: &RunConfig) -> Self {
        TrainConfig {
            epochs: cfg.adapt.epochs,
            lr: cfg.adapt.lr,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
        }
    }

    fn plan(&self, salt: u64) -> BatchPlan {
        BatchPlan {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: mix_seed(self.seed, salt),
            drop_last: false,
        }
    }
}

/// Per-epoch record passed to progress observers.
#[derive(Clone, Copy, Debug)]
pub struct EpochSummary {
    pub stage: &'static str,
    pub epoch: usize,
    pub loss: f64,
    pub aux: f64,
}

/// Pre-trained source encoder and classifier, frozen.
#[derive(Clone, Debug)]
pub struct SourceModel {
    pub encoder: Encoder,
    pub classifier: Classifier,
    /// Mean training cross entropy per epoch.
    pub train_loss: Vec<f64>,
    /// Test accuracy after each epoch; empty when no test set was given.
    pub test_acc: Vec<f64>,
}

/// Rewrites a non-finite error from inside a training loop as a divergence
/// with position information.
fn diverged(stage: &str, epoch: usize, batch: usize) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite { op } => Error::Divergence(format!("{stage} epoch {epoch} batch {batch}: non-finite {op}")),
        other => other,
    }
}

fn check_loss(stage: &str, epoch: usize, batch: usize, loss: f32) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss as f64)
    } else {
        Err(Error::Divergence(format!(
            "{stage} epoch {epoch} batch {batch}: loss is {loss}"
        )))
    }
}

/// Trains encoder and classifier with cross entropy, then freezes both.
pub fn pretrain_source(
    train: &LabeledImages,
    test: Option<&LabeledImages>,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochSummary),
) -> Result<SourceModel> {
    if train.is_empty() {
        return Err(Error::Validation("source training set is empty".into()));
    }
    let mut encoder = Encoder::<f32>::init(cfg.seed);
    let mut classifier = Classifier::<f32>::init(mix_seed(cfg.seed, SALT_CLASSIFIER));
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut adam_enc = Adam::for_module(adam_cfg, &encoder);
    let mut adam_cls = Adam::for_module(adam_cfg, &classifier);
    let plan = cfg.plan(SALT_PRETRAIN_BATCHES);

    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut test_acc = Vec::new();
    for epoch in 0..cfg.epochs {
        let batches = plan.batch_indices(train.len(), epoch)?;
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let mut tape = Tape::new();
            let x = tape.constant(train.images.batch(idx)?)?;
            let be = tape.bind(&encoder, true)?;
            let bc = tape.bind(&classifier, true)?;
            let loss = (|| {
                let f = encoder.forward(&mut tape, &be, x)?;
                let z = classifier.forward(&mut tape, &bc, f)?;
                let loss = tape.softmax_cross_entropy(z, &labels)?;
                tape.backward(loss)?;
                Ok(loss)
            })()
            .map_err(diverged("pretrain", epoch, b))?;
            total += check_loss("pretrain", epoch, b, tape.value(loss).data()[0])? * idx.len() as f64;
            encoder.accumulate_grads(&tape, &be)?;
            classifier.accumulate_grads(&tape, &bc)?;
            adam_enc.step(&mut encoder)?;
            adam_cls.step(&mut classifier)?;
        }
        let mean = total / train.len() as f64;
        train_loss.push(mean);
        let acc = match test {
            Some(t) => {
                let (acc, _) = evaluate(&encoder, &classifier, t)?;
                test_acc.push(acc);
                acc
            }
            None => f64::NAN,
        };
        observer(&EpochSummary {
            stage: "pretrain",
            epoch,
            loss: mean,
            aux: acc,
        });
    }

    encoder.set_frozen(true);
    classifier.set_frozen(true);
    Ok(SourceModel {
        encoder,
        classifier,
        train_loss,
        test_acc,
    })
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Class logits `[N, 10]` for every image, computed in chunks.
pub fn logits(encoder: &Encoder, classifier: &Classifier, images: &Images) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(images.len() * NUM_CLASSES);
    for start in (0..images.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(images.len());
        let mut tape = Tape::new();
        let x = tape.constant(images.range(start, end)?)?;
        let be = tape.bind(encoder, false)?;
        let bc = tape.bind(classifier, false)?;
        let f = encoder.forward(&mut tape, &be, x)?;
        let z = classifier.forward(&mut tape, &bc, f)?;
        out.extend_from_slice(tape.value(z).data());
    }
    Ok(out)
}

/// Encoder features `[N, 500]`, computed in chunks.
pub fn features(encoder: &Encoder, images: &Images) -> Result<Tensor<f32>> {
    let mut out = Vec::with_capacity(images.len() * crate::models::FEATURE_DIM);
    for start in (0..images.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(images.len());
        let mut tape = Tape::new();
        let x = tape.constant(images.range(start, end)?)?;
        let be = tape.bind(encoder, false)?;
        let f = encoder.forward(&mut tape, &be, x)?;
        out.extend_from_slice(tape.value(f).data());
    }
    Tensor::new([images.len(), crate::models::FEATURE_DIM], out)
}

/// Accuracy of `classifier ∘ encoder` and the predicted class per example.
pub fn evaluate(encoder: &Encoder, classifier: &Classifier, data: &LabeledImages) -> Result<(f64, Vec<usize>)> {
    if data.is_empty() {
        return Err(Error::Validation("cannot evaluate on an empty dataset".into()));
    }
    let z = logits(encoder, classifier, &data.images)?;
    let preds: Vec<usize> = z.chunks_exact(NUM_CLASSES).map(argmax).collect();
    Ok((accuracy(&preds, &data.labels), preds))
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len() as f64
}

/// Discriminator and mapping losses, one entry per iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdaptHistory {
    pub disc_loss: Vec<f64>,
    pub map_loss: Vec<f64>,
    pub disc_steps: u64,
    pub map_steps: u64,
}

/// State of the adversarial stage. The source model is only borrowed, so
/// it cannot change while the session runs.
pub struct AdaptationSession<'a> {
    pub source: &'a SourceModel,
    pub target_encoder: Encoder,
    pub discriminator: Discriminator,
    adam_disc: Adam<f32>,
    adam_map: Adam<f32>,
    pub history: AdaptHistory,
}

impl<'a> AdaptationSession<'a> {
    /// Target encoder starts as a trainable copy of the source encoder;
    /// the discriminator is freshly initialized from `seed`.
    pub fn new(source: &'a SourceModel, lr: f64, seed: u64) -> Self {
        let disc = Discriminator::init(mix_seed(seed, SALT_DISCRIMINATOR));
        Self::with_discriminator(source, disc, lr)
    }

    pub fn with_discriminator(source: &'a SourceModel, discriminator: Discriminator, lr: f64) -> Self {
        let mut target_encoder = source.encoder.clone();
        target_encoder.set_frozen(false);
        let adam_cfg = AdamConfig::with_lr(lr);
        AdaptationSession {
            source,
            adam_disc: Adam::for_module(adam_cfg, &discriminator),
            adam_map: Adam::for_module(adam_cfg, &target_encoder),
            target_encoder,
            discriminator,
            history: AdaptHistory::default(),
        }
    }

    /// Discriminator and mapping losses at the current parameters, without
    /// updating anything.
    pub fn losses(&self, source_batch: Tensor<f32>, target_batch: Tensor<f32>) -> Result<(f64, f64)> {
        let (ns, nt) = (source_batch.shape()[0], target_batch.shape()[0]);
        let mut tape = Tape::new();
        let xs = tape.constant(source_batch)?;
        let xt = tape.constant(target_batch)?;
        let bs = tape.bind(&self.source.encoder, false)?;
        let bt = tape.bind(&self.target_encoder, false)?;
        let bd = tape.bind(&self.discriminator, false)?;
        let fs = self.source.encoder.forward(&mut tape, &bs, xs)?;
        let ft = self.target_encoder.forward(&mut tape, &bt, xt)?;
        let ds = self.discriminator.forward(&mut tape, &bd, fs)?;
        let dt = self.discriminator.forward(&mut tape, &bd, ft)?;
        let ls = tape.sigmoid_bce(ds, &vec![SOURCE_DOMAIN; ns])?;
        let lt = tape.sigmoid_bce(dt, &vec![TARGET_DOMAIN; nt])?;
        let ld = tape.add(ls, lt)?;
        let lm = tape.sigmoid_bce(dt, &vec![SOURCE_DOMAIN; nt])?;
        Ok((tape.value(ld).data()[0] as f64, tape.value(lm).data()[0] as f64))
    }

    /// One discriminator update followed by one target-encoder update.
    /// Returns the two losses as evaluated before each update.
    pub fn step(&mut self, source_batch: Tensor<f32>, target_batch: Tensor<f32>) -> Result<(f64, f64)> {
        let (ns, nt) = (source_batch.shape()[0], target_batch.shape()[0]);

        let mut tape = Tape::new();
        let xs = tape.constant(source_batch)?;
        let xt = tape.constant(target_batch.clone())?;
        let bs = tape.bind(&self.source.encoder, false)?;
        let bt = tape.bind(&self.target_encoder, false)?;
        let bd = tape.bind(&self.discriminator, true)?;
        let fs = self.source.encoder.forward(&mut tape, &bs, xs)?;
        let ft = self.target_encoder.forward(&mut tape, &bt, xt)?;
        let ds = self.discriminator.forward(&mut tape, &bd, fs)?;
        let dt = self.discriminator.forward(&mut tape, &bd, ft)?;
        let ls = tape.sigmoid_bce(ds, &vec![SOURCE_DOMAIN; ns])?;
        let lt = tape.sigmoid_bce(dt, &vec![TARGET_DOMAIN; nt])?;
        let disc_loss = tape.add(ls, lt)?;
        tape.backward(disc_loss)?;
        let ld = tape.value(disc_loss).data()[0];
        self.discriminator.accumulate_grads(&tape, &bd)?;
        self.adam_disc.step(&mut self.discriminator)?;
        self.history.disc_steps += 1;

        let mut tape = Tape::new();
        let xt = tape.constant(target_batch)?;
        let bt = tape.bind(&self.target_encoder, true)?;
        let bd = tape.bind(&self.discriminator, false)?;
        let ft = self.target_encoder.forward(&mut tape, &bt, xt)?;
        let dt = self.discriminator.forward(&mut tape, &bd, ft)?;
        let map_loss = tape.sigmoid_bce(dt, &vec![SOURCE_DOMAIN; nt])?;
        tape.backward(map_loss)?;
        let lm = tape.value(map_loss).data()[0];
        self.target_encoder.accumulate_grads(&tape, &bt)?;
        self.adam_map.step(&mut self.target_encoder)?;
        self.history.map_steps += 1;

        Ok((ld as f64, lm as f64))
    }

    /// Runs the epoch budget. Each epoch pairs batches from independently
    /// shuffled source and target streams and stops at the shorter one.
    pub fn run(
        &mut self,
        source_images: &Images,
        target_images: &Images,
        cfg: &TrainConfig,
        mut observer: impl FnMut(&EpochSummary),
    ) -> Result<()> {
        if source_images.is_empty() || target_images.is_empty() {
            return Err(Error::Validation(
                "adaptation needs non-empty source and target images".into(),
            ));
        }
        let source_plan = cfg.plan(SALT_SOURCE_STREAM);
        let target_plan = cfg.plan(SALT_TARGET_STREAM);
        for epoch in 0..cfg.epochs {
            let sb = source_plan.batch_indices(source_images.len(), epoch)?;
            let tb = target_plan.batch_indices(target_images.len(), epoch)?;
            let (mut sum_d, mut sum_m) = (0.0, 0.0);
            let iters = sb.len().min(tb.len());
            for (b, (si, ti)) in sb.iter().zip(&tb).enumerate() {
                let (ld, lm) = self
                    .step(source_images.batch(si)?, target_images.batch(ti)?)
                    .map_err(diverged("adapt", epoch, b))?;
                let ld = check_loss("adapt discriminator", epoch, b, ld as f32)?;
                let lm = check_loss("adapt mapping", epoch, b, lm as f32)?;
                self.history.disc_loss.push(ld);
                self.history.map_loss.push(lm);
                sum_d += ld;
                sum_m += lm;
            }
            observer(&EpochSummary {
                stage: "adapt",
                epoch,
                loss: sum_d / iters as f64,
                aux: sum_m / iters as f64,
            });
        }
        Ok(())
    }
}

/// Adapted target encoder and the state it was trained against.
#[derive(Clone, Debug)]
pub struct AdaptResult {
    pub target_encoder: Encoder,
    pub discriminator: Discriminator,
    pub history: AdaptHistory,
}

/// Adversarially trains a target encoder. Target data is passed without
/// labels.
pub fn adapt_target(
    source: &SourceModel,
    source_images: &Images,
    target_images: &Images,
    cfg: &TrainConfig,
    observer: impl FnMut(&EpochSummary),
) -> Result<AdaptResult> {
    let mut session = AdaptationSession::new(source, cfg.lr, cfg.seed);
    session.run(source_images, target_images, cfg, observer)?;
    Ok(AdaptResult {
        target_encoder: session.target_encoder,
        discriminator: session.discriminator,
        history: session.history,
    })
}
