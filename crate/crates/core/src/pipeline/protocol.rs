use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::LabeledImages;
use crate::error::{Error, Result};

use super::{adapt_target, evaluate, pretrain_source, AdaptResult, EpochSummary, RunConfig, SourceModel, TrainConfig};

/// A named domain with preprocessed train and test splits.
#[derive(Clone, Debug)]
pub struct Domain {
    pub name: String,
    pub train: LabeledImages,
    pub test: LabeledImages,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    /// Mean cross entropy per pre-training epoch.
    pub pretrain_loss: Vec<f64>,
    /// Source test accuracy per pre-training epoch.
    pub pretrain_test_acc: Vec<f64>,
    /// Discriminator loss per adaptation iteration.
    pub adapt_disc_loss: Vec<f64>,
    /// Mapping loss per adaptation iteration.
    pub adapt_map_loss: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub source: String,
    pub target: String,
    pub seed: u64,
    pub config: RunConfig,
    pub config_hash: String,
    /// Source model on the source test split.
    pub source_in_domain_acc: f64,
    /// Source model on the target test split.
    pub baseline_acc: f64,
    /// Adapted encoder with the source classifier on the target test split.
    pub adda_target_acc: f64,
    /// Adapted encoder with the source classifier on the source test split.
    pub adda_source_acc: f64,
    pub disc_steps: u64,
    pub map_steps: u64,
    pub loss_curves: LossCurves,
    /// Seconds; the only field that differs between identical runs.
    pub wall_time: f64,
}

/// Everything a protocol run produces.
pub struct ProtocolRun {
    pub report: ProtocolReport,
    pub source_model: SourceModel,
    pub adapted: AdaptResult,
    /// Predictions on the target test split: source model, then adapted.
    pub baseline_predictions: Vec<usize>,
    pub adapted_predictions: Vec<usize>,
}

/// Pre-trains on `source`, adapts to `target` without its training labels,
/// and scores the baseline and adapted models on both test splits.
pub fn run_protocol(
    source: &Domain,
    target: &Domain,
    cfg: &RunConfig,
    mut observer: impl FnMut(&EpochSummary),
) -> Result<ProtocolRun> {
    cfg.validate()?;
    if target.test.is_empty() || source.test.is_empty() {
        return Err(Error::Validation("protocol needs non-empty test splits".into()));
    }
    let start = Instant::now();
    let source_model = pretrain_source(
        &source.train,
        Some(&source.test),
        &TrainConfig::pretrain(cfg),
        &mut observer,
    )?;
    let adapted = adapt_target(
        &source_model,
        &source.train.unlabeled(),
        &target.train.unlabeled(),
        &TrainConfig::adapt(cfg),
        &mut observer,
    )?;

    let (enc, cls) = (&source_model.encoder, &source_model.classifier);
    let (source_in_domain_acc, _) = evaluate(enc, cls, &source.test)?;
    let (baseline_acc, baseline_predictions) = evaluate(enc, cls, &target.test)?;
    let (adda_target_acc, adapted_predictions) = evaluate(&adapted.target_encoder, cls, &target.test)?;
    let (adda_source_acc, _) = evaluate(&adapted.target_encoder, cls, &source.test)?;

    let report = ProtocolReport {
        source: source.name.clone(),
        target: target.name.clone(),
        seed: cfg.seed,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        source_in_domain_acc,
        baseline_acc,
        adda_target_acc,
        adda_source_acc,
        disc_steps: adapted.history.disc_steps,
        map_steps: adapted.history.map_steps,
        loss_curves: LossCurves {
            pretrain_loss: source_model.train_loss.clone(),
            pretrain_test_acc: source_model.test_acc.clone(),
            adapt_disc_loss: adapted.history.disc_loss.clone(),
            adapt_map_loss: adapted.history.map_loss.clone(),
        },
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok(ProtocolRun {
        report,
        source_model,
        adapted,
        baseline_predictions,
        adapted_predictions,
    })
}
