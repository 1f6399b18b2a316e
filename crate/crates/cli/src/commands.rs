use std::path::Path;

use adda_core::data::{LabeledImages, PreprocessConfig, SyntheticShiftSpec};
use adda_core::eval::{
    confusion_counts_csv, confusion_csv, confusion_svg, csv_string, embedding_csv, embedding_svg,
    nearest_neighbor_purity, sample_indices, tsne_embed, ConfusionMatrix, Embedding, TsneConfig,
};
use adda_core::models::{save_checkpoint, CheckpointMeta, Classifier, Encoder};
use adda_core::pipeline::{
    adapt_target, evaluate, features, pretrain_source, run_protocol, EpochSummary, RunConfig, SourceModel, TrainConfig,
};
use adda_core::tensor::Module;
use adda_core::{Error, Result};
use serde::Serialize;

use crate::context::Context;

fn progress(s: &EpochSummary) {
    println!("{} epoch {} loss {:.6} aux {:.6}", s.stage, s.epoch, s.loss, s.aux);
}

fn restore_encoder(ctx: &mut Context, path: &Path) -> Result<Encoder> {
    let mut enc = Encoder::init(0);
    ctx.load_checkpoint(path)?.restore(&mut enc)?;
    Ok(enc)
}

fn restore_classifier(ctx: &mut Context, path: &Path) -> Result<Classifier> {
    let mut cls = Classifier::init(0);
    ctx.load_checkpoint(path)?.restore(&mut cls)?;
    Ok(cls)
}

fn meta(ctx: &Context, epoch: usize, dataset: &str) -> CheckpointMeta {
    CheckpointMeta {
        seed: ctx.cfg.seed,
        epoch: epoch as u32,
        dataset: dataset.to_string(),
    }
}

fn predictions_csv(labels: &[usize], preds: &[usize]) -> Result<String> {
    let rows: Vec<Vec<String>> = labels
        .iter()
        .zip(preds)
        .enumerate()
        .map(|(i, (l, p))| vec![i.to_string(), l.to_string(), p.to_string()])
        .collect();
    csv_string(&["index", "label", "prediction"], &rows)
}

fn write_confusion(ctx: &mut Context, stem: &str, cm: &ConfusionMatrix, title: &str) -> Result<()> {
    ctx.write(&format!("{stem}.svg"), confusion_svg(cm, title).as_bytes())?;
    ctx.write(&format!("{stem}.csv"), confusion_csv(cm)?.as_bytes())?;
    ctx.write(&format!("{stem}_counts.csv"), confusion_counts_csv(cm)?.as_bytes())
}

#[derive(Serialize)]
struct PretrainMetrics<'a> {
    dataset: &'a str,
    seed: u64,
    train_examples: usize,
    test_examples: usize,
    train_loss: &'a [f64],
    test_acc: &'a [f64],
    final_test_acc: f64,
}

pub fn pretrain(ctx: &mut Context, source: &str) -> Result<()> {
    let domain = ctx.load_domain(source, ctx.cfg.source_cap, None)?;
    let model = pretrain_source(
        &domain.train,
        Some(&domain.test),
        &TrainConfig::pretrain(&ctx.cfg),
        progress,
    )?;
    let ckpt = save_checkpoint(
        &[&model.encoder, &model.classifier],
        meta(ctx, ctx.cfg.pretrain.epochs, &domain.name),
    );
    ctx.write("source.ckpt", &ckpt)?;
    let final_test_acc = model.test_acc.last().copied().unwrap_or(f64::NAN);
    println!("test accuracy {final_test_acc:.4}");
    ctx.write_json(
        "metrics.json",
        &PretrainMetrics {
            dataset: &domain.name,
            seed: ctx.cfg.seed,
            train_examples: domain.train.len(),
            test_examples: domain.test.len(),
            train_loss: &model.train_loss,
            test_acc: &model.test_acc,
            final_test_acc,
        },
    )
}

#[derive(Serialize)]
struct AdaptMetrics<'a> {
    source: &'a str,
    target: &'a str,
    seed: u64,
    disc_steps: u64,
    map_steps: u64,
    disc_loss: &'a [f64],
    map_loss: &'a [f64],
    baseline_acc: f64,
    adda_target_acc: f64,
}

pub fn adapt(ctx: &mut Context, source: &str, target: &str, checkpoint: &Path) -> Result<()> {
    let mut encoder = restore_encoder(ctx, checkpoint)?;
    let mut classifier = restore_classifier(ctx, checkpoint)?;
    encoder.set_frozen(true);
    classifier.set_frozen(true);
    let model = SourceModel {
        encoder,
        classifier,
        train_loss: Vec::new(),
        test_acc: Vec::new(),
    };
    let src = ctx.load_domain(source, ctx.cfg.source_cap, None)?;
    let shift = ctx.cfg.shift;
    let tgt = ctx.load_domain(target, ctx.cfg.target_cap, shift.as_ref())?;
    let adapted = adapt_target(
        &model,
        &src.train.unlabeled(),
        &tgt.train.unlabeled(),
        &TrainConfig::adapt(&ctx.cfg),
        progress,
    )?;
    let (baseline_acc, _) = evaluate(&model.encoder, &model.classifier, &tgt.test)?;
    let (adda_target_acc, preds) = evaluate(&adapted.target_encoder, &model.classifier, &tgt.test)?;
    println!("baseline accuracy {baseline_acc:.4}");
    println!("adapted accuracy {adda_target_acc:.4}");
    let ckpt = save_checkpoint(
        &[&adapted.target_encoder, &adapted.discriminator],
        meta(ctx, ctx.cfg.adapt.epochs, &tgt.name),
    );
    ctx.write("target.ckpt", &ckpt)?;
    ctx.write("predictions.csv", predictions_csv(&tgt.test.labels, &preds)?.as_bytes())?;
    let h = &adapted.history;
    ctx.write_json(
        "metrics.json",
        &AdaptMetrics {
            source: &src.name,
            target: &tgt.name,
            seed: ctx.cfg.seed,
            disc_steps: h.disc_steps,
            map_steps: h.map_steps,
            disc_loss: &h.disc_loss,
            map_loss: &h.map_loss,
            baseline_acc,
            adda_target_acc,
        },
    )
}

#[derive(Serialize)]
struct EvalMetrics<'a> {
    dataset: &'a str,
    examples: usize,
    accuracy: f64,
}

pub fn eval(ctx: &mut Context, encoder: &Path, classifier: Option<&Path>, dataset: &str) -> Result<()> {
    let enc = restore_encoder(ctx, encoder)?;
    let cls = restore_classifier(ctx, classifier.unwrap_or(encoder))?;
    let raw = ctx.load_dataset(dataset)?;
    let data = adda_core::data::preprocess(&raw, &PreprocessConfig::default())?;
    let (accuracy, preds) = evaluate(&enc, &cls, &data)?;
    println!("accuracy {accuracy:.4}");
    ctx.write("predictions.csv", predictions_csv(&data.labels, &preds)?.as_bytes())?;
    ctx.write_json(
        "metrics.json",
        &EvalMetrics {
            dataset: &raw.name,
            examples: data.len(),
            accuracy,
        },
    )
}

#[derive(Serialize)]
struct ConfusionMetrics {
    total: u64,
    accuracy: f64,
    empty_rows: Vec<usize>,
}

/// Reads the `label` and `prediction` columns of a predictions file.
fn read_predictions(ctx: &mut Context, path: &Path) -> Result<(Vec<usize>, Vec<usize>)> {
    let bytes = crate::context::read_bytes(path)?;
    ctx.record_input(path, &bytes);
    let malformed = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    let headers = reader.headers().map_err(malformed)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{}: missing column {name}", path.display())))
    };
    let (li, pi) = (column("label")?, column("prediction")?);
    let (mut labels, mut preds) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(malformed)?;
        let parse = |i: usize| {
            rec.get(i)
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad row {:?}", path.display(), rec)))
        };
        labels.push(parse(li)?);
        preds.push(parse(pi)?);
    }
    Ok((labels, preds))
}

pub fn confusion(ctx: &mut Context, predictions: &Path, title: &str) -> Result<()> {
    let (labels, preds) = read_predictions(ctx, predictions)?;
    let cm = ConfusionMatrix::from_predictions(&preds, &labels)?;
    write_confusion(ctx, "confusion", &cm, title)?;
    println!("accuracy {:.4}", cm.accuracy());
    ctx.write_json(
        "metrics.json",
        &ConfusionMetrics {
            total: cm.total(),
            accuracy: cm.accuracy(),
            empty_rows: cm.empty_rows(),
        },
    )
}

#[derive(Serialize)]
struct SynthMetrics<'a> {
    name: &'a str,
    examples: usize,
    shift: Option<&'a SyntheticShiftSpec>,
}

pub fn synth(
    ctx: &mut Context,
    dataset: &str,
    name: &str,
    shift: Option<&str>,
    skip: usize,
    take: Option<usize>,
) -> Result<()> {
    let spec = match shift {
        Some(text) => Some(
            serde_json::from_str::<SyntheticShiftSpec>(text).map_err(|e| Error::Format(format!("shift spec: {e}")))?,
        ),
        None => ctx.cfg.shift,
    };
    let raw = ctx.load_dataset(dataset)?;
    let end = take.map_or(raw.len(), |t| skip.saturating_add(t).min(raw.len()));
    if skip >= end {
        return Err(Error::Validation(format!(
            "selection {skip}..{end} of {} examples is empty",
            raw.len()
        )));
    }
    let mut out = raw.slice(skip, end, name);
    if let Some(spec) = &spec {
        out = adda_core::data::apply_shift(&out, spec)?;
        out.name = name.to_string();
    }
    let images = adda_core::data::encode_idx(&out.images_idx())?;
    let labels = adda_core::data::encode_idx(&out.labels_idx())?;
    ctx.write(&format!("{name}-images.idx"), &images)?;
    ctx.write(&format!("{name}-labels.idx"), &labels)?;
    println!("wrote {} examples", out.len());
    ctx.write_json(
        "metrics.json",
        &SynthMetrics {
            name,
            examples: out.len(),
            shift: spec.as_ref(),
        },
    )
}

/// One domain's worth of features for an embedding.
struct FeatureSet {
    values: Vec<f64>,
    labels: Vec<usize>,
}

fn sampled_features(encoder: &Encoder, data: &LabeledImages, cap: usize, seed: u64) -> Result<FeatureSet> {
    let idx = sample_indices(data.len(), cap, seed);
    let batch = data.images.batch(&idx)?;
    let imgs = adda_core::data::Images { tensor: batch };
    let f = features(encoder, &imgs)?;
    Ok(FeatureSet {
        values: f.data().iter().map(|&v| v as f64).collect(),
        labels: idx.iter().map(|&i| data.labels[i]).collect(),
    })
}

#[derive(Serialize)]
struct TsneMetrics {
    points: usize,
    perplexity: f64,
    iterations: usize,
    final_kl: f64,
    mean_entropy_bits: f64,
    class_purity: f64,
}

fn embed_domains(sets: &[FeatureSet], cfg: &TsneConfig) -> Result<(Embedding, Vec<u8>)> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut domains = Vec::new();
    for (d, s) in sets.iter().enumerate() {
        values.extend_from_slice(&s.values);
        labels.extend_from_slice(&s.labels);
        domains.extend(std::iter::repeat_n(d as u8, s.labels.len()));
    }
    let emb = tsne_embed(&values, &labels, adda_core::models::FEATURE_DIM, cfg)?;
    Ok((emb, domains))
}

fn tsne_metrics(emb: &Embedding, cfg: &TsneConfig) -> TsneMetrics {
    TsneMetrics {
        points: emb.points.len(),
        perplexity: cfg.perplexity,
        iterations: cfg.iterations,
        final_kl: emb.kl_trace.last().copied().unwrap_or(f64::NAN),
        mean_entropy_bits: emb.entropies.iter().sum::<f64>() / emb.entropies.len().max(1) as f64,
        class_purity: nearest_neighbor_purity(&emb.points, &emb.labels),
    }
}

fn write_embedding(ctx: &mut Context, stem: &str, emb: &Embedding, domains: &[u8], title: &str) -> Result<()> {
    let two = domains.contains(&1);
    let domains = two.then_some(domains);
    ctx.write(&format!("{stem}.svg"), embedding_svg(emb, domains, title).as_bytes())?;
    ctx.write(&format!("{stem}.csv"), embedding_csv(emb, domains)?.as_bytes())
}

pub struct TsneArgs<'a> {
    pub encoder: &'a Path,
    pub dataset: &'a str,
    pub target: Option<&'a str>,
    pub target_encoder: Option<&'a Path>,
    pub cfg: TsneConfig,
}

pub fn tsne(ctx: &mut Context, args: TsneArgs) -> Result<()> {
    let pre = PreprocessConfig::default();
    let enc = restore_encoder(ctx, args.encoder)?;
    let raw = ctx.load_dataset(args.dataset)?;
    let data = adda_core::data::preprocess(&raw, &pre)?;
    let mut sets = vec![sampled_features(&enc, &data, args.cfg.sample_cap, args.cfg.seed)?];
    if let Some(target) = args.target {
        let tenc = match args.target_encoder {
            Some(p) => restore_encoder(ctx, p)?,
            None => enc.clone(),
        };
        let raw = ctx.load_dataset(target)?;
        let data = adda_core::data::preprocess(&raw, &pre)?;
        sets.push(sampled_features(&tenc, &data, args.cfg.sample_cap, args.cfg.seed ^ 1)?);
    }
    let (emb, domains) = embed_domains(&sets, &args.cfg)?;
    write_embedding(ctx, "tsne", &emb, &domains, "encoder features")?;
    let m = tsne_metrics(&emb, &args.cfg);
    println!("final KL {:.6} purity {:.4}", m.final_kl, m.class_purity);
    ctx.write_json("metrics.json", &m)
}

#[derive(Serialize)]
struct ReportFigures {
    source_only: TsneMetrics,
    adapted: TsneMetrics,
}

pub fn report(ctx: &mut Context, source: &str, target: &str, tsne_cfg: Option<TsneConfig>) -> Result<()> {
    let src = ctx.load_domain(source, ctx.cfg.source_cap, None)?;
    let shift = ctx.cfg.shift;
    let tgt = ctx.load_domain(target, ctx.cfg.target_cap, shift.as_ref())?;
    // The report describes the experiment, not where it was written.
    let experiment = RunConfig {
        output_dir: None,
        ..ctx.cfg.clone()
    };
    let run = run_protocol(&src, &tgt, &experiment, progress)?;
    let r = &run.report;
    println!("source in-domain accuracy {:.4}", r.source_in_domain_acc);
    println!("baseline target accuracy {:.4}", r.baseline_acc);
    println!("adapted target accuracy {:.4}", r.adda_target_acc);
    println!("adapted source accuracy {:.4}", r.adda_source_acc);
    ctx.write_json("report.json", r)?;

    let model = &run.source_model;
    let enc_meta = meta(ctx, ctx.cfg.pretrain.epochs, &src.name);
    ctx.write(
        "source.ckpt",
        &save_checkpoint(&[&model.encoder, &model.classifier], enc_meta),
    )?;
    let tgt_meta = meta(ctx, ctx.cfg.adapt.epochs, &tgt.name);
    let adapted: [&dyn Module<f32>; 2] = [&run.adapted.target_encoder, &run.adapted.discriminator];
    ctx.write("target.ckpt", &save_checkpoint(&adapted, tgt_meta))?;

    let labels = &tgt.test.labels;
    let base = ConfusionMatrix::from_predictions(&run.baseline_predictions, labels)?;
    let ours = ConfusionMatrix::from_predictions(&run.adapted_predictions, labels)?;
    write_confusion(ctx, "confusion_source_only", &base, "source only on target")?;
    write_confusion(ctx, "confusion_adapted", &ours, "adapted on target")?;

    if let Some(cfg) = tsne_cfg {
        let seed = cfg.seed;
        let s = sampled_features(&model.encoder, &src.test, cfg.sample_cap, seed)?;
        let before = sampled_features(&model.encoder, &tgt.test, cfg.sample_cap, seed ^ 1)?;
        let (emb_before, domains) = embed_domains(&[s, before], &cfg)?;
        write_embedding(
            ctx,
            "tsne_source_only",
            &emb_before,
            &domains,
            "source encoder on both domains",
        )?;
        let s = sampled_features(&model.encoder, &src.test, cfg.sample_cap, seed)?;
        let after = sampled_features(&run.adapted.target_encoder, &tgt.test, cfg.sample_cap, seed ^ 1)?;
        let (emb_after, domains) = embed_domains(&[s, after], &cfg)?;
        write_embedding(
            ctx,
            "tsne_adapted",
            &emb_after,
            &domains,
            "target encoder on target domain",
        )?;
        ctx.write_json(
            "tsne_metrics.json",
            &ReportFigures {
                source_only: tsne_metrics(&emb_before, &cfg),
                adapted: tsne_metrics(&emb_after, &cfg),
            },
        )?;
    }
    Ok(())
}
