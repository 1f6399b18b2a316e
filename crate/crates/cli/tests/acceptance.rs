//! End-to-end acceptance checks. Prints one PASS / FAIL / SKIP line per
//! criterion.
//!
//! Criteria listed in `KNOWN_RED` still print FAIL when they miss their
//! threshold, but do not fail the process; README.md explains each one.
//! Any other FAIL exits non-zero. `ACCEPTANCE_ONLY=1,3,8` runs a subset.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use adda_core::data::{apply_shift, preprocess, DatasetContainer, LabeledImages, PreprocessConfig, SyntheticShiftSpec};
use adda_core::eval::{nearest_neighbor_purity, tsne_embed, ConfusionMatrix, TsneConfig};
use adda_core::models::{Classifier, Discriminator, FEATURE_DIM, NUM_CLASSES};
use adda_core::optim::{Adam, AdamConfig};
use adda_core::pipeline::{
    adapt_target, evaluate, pretrain_source, run_protocol, AdaptationSession, Domain, RunConfig, StageConfig,
    TrainConfig,
};
use adda_core::selfcheck;
use adda_core::tensor::{Module, Parameter, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const KNOWN_RED: &[u32] = &[5];

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn skip(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Skip,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Fail,
        detail: detail.into(),
    }
}

fn data_dir() -> PathBuf {
    std::env::var_os("ADDA_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn has_pair(dir: &Path, name: &str) -> bool {
    DatasetContainer::image_path(dir, name).exists() && DatasetContainer::labels_path(dir, name).exists()
}

fn prep(ds: &DatasetContainer) -> LabeledImages {
    preprocess(ds, &PreprocessConfig::default()).expect("preprocess")
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// 1 --------------------------------------------------------------------------

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let report = match selfcheck::gradient_suite(100) {
        Ok(r) => r,
        Err(e) => return fail(format!("suite errored: {e}")),
    };
    let elapsed = start.elapsed();
    let failures = report.failures();
    let detail = format!(
        "{} tensors over 100 trials, max rel err {:.2e}, {:.1}s{}",
        report.entries.len(),
        report.max_rel_error(),
        secs(elapsed),
        if failures.is_empty() {
            String::new()
        } else {
            format!("; {}", failures.join("; "))
        }
    );
    verdict(failures.is_empty() && elapsed < Duration::from_secs(120), detail)
}

// 2 --------------------------------------------------------------------------

struct Scalar(Parameter<f64>);

impl Module<f64> for Scalar {
    fn parameters(&self) -> Vec<&Parameter<f64>> {
        vec![&self.0]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        vec![&mut self.0]
    }
}

fn adam_trace() -> Outcome {
    // Gradient of cos(x) + x²/4, evaluated by hand for the reference and by
    // the tape-free parameter API for the optimizer.
    let grad = |x: f64| -x.sin() + x / 2.0;
    let (lr, b1, b2, eps) = (0.05f64, 0.9f64, 0.999f64, 1e-8f64);
    let (mut x, mut m, mut v) = (2.5f64, 0.0, 0.0);
    let mut p = Scalar(Parameter::new("x", Tensor::scalar(2.5)));
    let mut adam = Adam::for_module(AdamConfig::with_lr(lr), &p);
    let mut worst = 0.0f64;
    for t in 1..=100 {
        let g = grad(x);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        x -= lr * m_hat / (v_hat.sqrt() + eps);

        let cur = p.0.value().data()[0];
        p.0.zero_grad();
        p.0.value_and_grad_mut().1[0] = grad(cur);
        if let Err(e) = adam.step(&mut p) {
            return fail(format!("step {t}: {e}"));
        }
        worst = worst.max((p.0.value().data()[0] - x).abs());
    }
    verdict(worst < 1e-10, format!("max |Δ| over 100 steps {worst:.2e}"))
}

// 3 --------------------------------------------------------------------------

fn loss_identities() -> Outcome {
    let ln10 = std::f64::consts::LN_10;
    let ln2 = std::f64::consts::LN_2;
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // Zeroed classifier: every logit is 0 whatever the features are.
    let mut cls = Classifier::<f64>::init(1);
    cls.fc_weight.value_mut().data_mut().fill(0.0);
    let feats = Tensor::from_fn([16, FEATURE_DIM], |_| rng.random_range(0.0..4.0));
    let labels: Vec<usize> = (0..16).map(|i| i % NUM_CLASSES).collect();
    let mut tape = Tape::new();
    let bound = tape.bind(&cls, false).unwrap();
    let f = tape.constant(feats).unwrap();
    let z = cls.forward(&mut tape, &bound, f).unwrap();
    let ce_var = tape.softmax_cross_entropy(z, &labels).unwrap();
    let ce = tape.value(ce_var).data()[0];

    // D ≡ 0.5 via a zeroed output layer on a real adaptation session.
    let train = prep(&common::bars(60, 4, "bars"));
    let cfg = TrainConfig {
        epochs: 1,
        lr: 1e-3,
        batch_size: 20,
        seed: 4,
    };
    let source = pretrain_source(&train, None, &cfg, |_| {}).unwrap();
    let mut disc = Discriminator::<f32>::init(5);
    disc.fc3_weight.value_mut().data_mut().fill(0.0);
    disc.fc3_bias.value_mut().data_mut().fill(0.0);
    let session = AdaptationSession::with_discriminator(&source, disc, 1e-4);
    let imgs = train.unlabeled();
    let (ld, lm) = session
        .losses(imgs.range(0, 20).unwrap(), imgs.range(20, 60).unwrap())
        .unwrap();

    let errs = [(ce - ln10).abs(), (ld - 2.0 * ln2).abs(), (lm - ln2).abs()];
    verdict(
        errs.iter().all(|&e| e <= 1e-6),
        format!("CE {ce:.9} (ln10), L_D {ld:.9} (2ln2), L_M {lm:.9} (ln2)"),
    )
}

// 4 --------------------------------------------------------------------------

fn mnist_pretraining() -> Outcome {
    let dir = data_dir();
    if !has_pair(&dir, "mnist-train") || !has_pair(&dir, "mnist-test") {
        return skip(format!("MNIST IDX files not found in {}", dir.display()));
    }
    let train = prep(&DatasetContainer::load(&dir, "mnist-train").unwrap());
    let test = prep(&DatasetContainer::load(&dir, "mnist-test").unwrap());
    let cfg = TrainConfig {
        epochs: 5,
        lr: 1e-3,
        batch_size: 200,
        seed: 42,
    };
    let start = Instant::now();
    let model = match pretrain_source(&train, None, &cfg, |_| {}) {
        Ok(m) => m,
        Err(e) => return fail(format!("training failed: {e}")),
    };
    let (acc, _) = evaluate(&model.encoder, &model.classifier, &test).unwrap();
    let elapsed = start.elapsed();
    verdict(
        acc >= 0.97 && elapsed <= Duration::from_secs(30 * 60),
        format!("test accuracy {acc:.4} (need ≥ 0.97) in {:.0}s", secs(elapsed)),
    )
}

// 5 --------------------------------------------------------------------------

fn synthetic_shift() -> Outcome {
    let dir = data_dir();
    if !has_pair(&dir, "mnist-train") || !has_pair(&dir, "mnist-test") {
        return skip(format!("MNIST IDX files not found in {}", dir.display()));
    }
    let train = DatasetContainer::load(&dir, "mnist-train").unwrap();
    let test = DatasetContainer::load(&dir, "mnist-test").unwrap();
    let invert = SyntheticShiftSpec::invert();
    let source = Domain {
        name: "mnist".into(),
        train: prep(&train.slice(0, 5000, "mnist-a")),
        test: prep(&test),
    };
    let target = Domain {
        name: "mnist-inverted".into(),
        train: prep(&apply_shift(&train.slice(5000, 10000, "mnist-b"), &invert).unwrap()),
        test: prep(&apply_shift(&test, &invert).unwrap()),
    };
    let cfg = RunConfig {
        seed: 42,
        pretrain: StageConfig { lr: 1e-3, epochs: 5 },
        adapt: StageConfig { lr: 1e-4, epochs: 20 },
        ..RunConfig::default()
    };
    let start = Instant::now();
    let run = match run_protocol(&source, &target, &cfg, |_| {}) {
        Ok(r) => r,
        Err(e) => return fail(format!("protocol failed: {e}")),
    };
    let elapsed = start.elapsed();
    let r = &run.report;
    let gain = r.adda_target_acc - r.baseline_acc;
    let drop = r.source_in_domain_acc - r.adda_source_acc;
    verdict(
        gain >= 0.10 && drop <= 0.05 && elapsed <= Duration::from_secs(45 * 60),
        format!(
            "baseline {:.4} -> adapted {:.4} (gain {gain:+.4}, need ≥ 0.10); source {:.4} -> {:.4} (drop {drop:.4}, need ≤ 0.05); {:.0}s",
            r.baseline_acc,
            r.adda_target_acc,
            r.source_in_domain_acc,
            r.adda_source_acc,
            secs(elapsed)
        ),
    )
}

// 6 --------------------------------------------------------------------------

fn mnist_to_usps() -> Outcome {
    let dir = data_dir();
    let usps = ["usps-train", "usps-test"].iter().all(|n| has_pair(&dir, n));
    if !usps {
        return skip("usps-train / usps-test IDX files not supplied");
    }
    if !has_pair(&dir, "mnist-train") || !has_pair(&dir, "mnist-test") {
        return skip("MNIST IDX files not found");
    }
    let load = |n: &str| DatasetContainer::load(&dir, n).unwrap();
    let (mtrain, utrain) = (load("mnist-train"), load("usps-train"));
    let source = Domain {
        name: "mnist".into(),
        train: prep(&mtrain.slice(0, 2000.min(mtrain.len()), "mnist")),
        test: prep(&load("mnist-test")),
    };
    let target = Domain {
        name: "usps".into(),
        train: prep(&utrain.slice(0, 1800.min(utrain.len()), "usps")),
        test: prep(&load("usps-test")),
    };
    let cfg = RunConfig {
        seed: 42,
        pretrain: StageConfig { lr: 1e-3, epochs: 10 },
        adapt: StageConfig { lr: 1e-4, epochs: 30 },
        ..RunConfig::default()
    };
    match run_protocol(&source, &target, &cfg, |_| {}) {
        Ok(run) => {
            let r = &run.report;
            let gain = r.adda_target_acc - r.baseline_acc;
            verdict(
                gain >= 0.05,
                format!(
                    "baseline {:.4} -> adapted {:.4} (gain {gain:+.4}, need ≥ 0.05)",
                    r.baseline_acc, r.adda_target_acc
                ),
            )
        }
        Err(e) => fail(format!("protocol failed: {e}")),
    }
}

// 7 --------------------------------------------------------------------------

fn bits<M: Module<f32>>(m: &M) -> Vec<u32> {
    m.parameters()
        .iter()
        .flat_map(|p| p.value().data().iter().map(|v| v.to_bits()))
        .collect()
}

fn freeze_and_label_blindness() -> Outcome {
    // Freeze: the source model is bit-identical after adaptation.
    let train = prep(&common::bars(200, 7, "bars"));
    let cfg = TrainConfig {
        epochs: 2,
        lr: 1e-3,
        batch_size: 20,
        seed: 7,
    };
    let source = pretrain_source(&train, None, &cfg, |_| {}).unwrap();
    let before = (bits(&source.encoder), bits(&source.classifier));
    let target = prep(&apply_shift(&common::bars(100, 8, "t"), &SyntheticShiftSpec::invert()).unwrap());
    let adapted = adapt_target(&source, &train.unlabeled(), &target.unlabeled(), &cfg, |_| {}).unwrap();
    let frozen = (bits(&source.encoder), bits(&source.classifier)) == before;
    let moved = bits(&adapted.target_encoder) != before.0;

    // Label blindness: permuting every target label leaves the adapted
    // checkpoint byte-identical, end to end through the CLI.
    let ws = common::workspace();
    let root = ws.path();
    let pre = common::adda(
        root,
        &["--config", "cfg.json", "pretrain", "--source", "bars", "--out", "p"],
    );
    if !pre.status.success() {
        return fail(format!("pretrain failed: {}", common::stderr(&pre)));
    }
    let shifted = DatasetContainer::load(&root.join("data"), "shifted").unwrap();
    let permuted: Vec<u8> = shifted.labels().iter().map(|l| (l + 3) % 10).collect();
    let other = root.join("relabeled");
    std::fs::create_dir(&other).unwrap();
    shifted.with_labels(permuted).unwrap().save(&other).unwrap();
    let run = |target: &str, out: &str| {
        common::adda(
            root,
            &[
                "--config",
                "cfg.json",
                "adapt",
                "--source",
                "bars",
                "--target",
                target,
                "--checkpoint",
                "p/source.ckpt",
                "--out",
                out,
            ],
        )
    };
    let (a, b) = (run("data/shifted", "a"), run("relabeled/shifted", "b"));
    if !a.status.success() || !b.status.success() {
        return fail(format!("adapt failed: {}{}", common::stderr(&a), common::stderr(&b)));
    }
    let same = std::fs::read(root.join("a/target.ckpt")).unwrap() == std::fs::read(root.join("b/target.ckpt")).unwrap();
    verdict(
        frozen && moved && same,
        format!("source frozen {frozen}, target encoder updated {moved}, checkpoint unchanged under relabeling {same}"),
    )
}

// 8 --------------------------------------------------------------------------

fn confusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 10_000;
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
    let preds: Vec<usize> = labels
        .iter()
        .map(|&l| {
            if rng.random_bool(0.6) {
                l
            } else {
                rng.random_range(0..10)
            }
        })
        .collect();
    let cm = ConfusionMatrix::from_predictions(&preds, &labels).unwrap();
    let mut oracle = BTreeMap::new();
    for (&p, &l) in preds.iter().zip(&labels) {
        *oracle.entry((l, p)).or_insert(0u64) += 1;
    }
    let tally_ok = (0..10).all(|t| (0..10).all(|p| cm.counts[t][p] == oracle.get(&(t, p)).copied().unwrap_or(0)));
    let worst_row = cm
        .normalized()
        .iter()
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let total_ok = cm.total() == n as u64;
    verdict(
        tally_ok && total_ok && worst_row <= 1e-9,
        format!(
            "total {} of {n}, tally matches {tally_ok}, worst row-sum error {worst_row:.1e}",
            cm.total()
        ),
    )
}

// 9 --------------------------------------------------------------------------

fn tsne() -> Outcome {
    let dim = FEATURE_DIM;
    let per = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut x = Vec::with_capacity(3 * per * dim);
    let mut labels = Vec::with_capacity(3 * per);
    for c in 0..3 {
        for _ in 0..per {
            x.extend((0..dim).map(|k| if k == c { 30.0 } else { 0.0 } + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    let cfg = TsneConfig {
        seed: 9,
        ..TsneConfig::default()
    };
    let start = Instant::now();
    let emb = match tsne_embed(&x, &labels, dim, &cfg) {
        Ok(e) => e,
        Err(e) => return fail(format!("embedding failed: {e}")),
    };
    let elapsed = start.elapsed();
    let want = cfg.perplexity.log2();
    let worst = emb.entropies.iter().map(|h| (h - want).abs()).fold(0.0, f64::max);
    let tail = &emb.kl_trace[cfg.exaggeration_iters..];
    let monotone = tail.windows(2).filter(|w| w[1] <= w[0]).count() as f64 / (tail.len() - 1) as f64;
    let purity = nearest_neighbor_purity(&emb.points, &labels);
    verdict(
        worst <= 1e-4 && monotone >= 0.9 && purity >= 0.95 && elapsed <= Duration::from_secs(300),
        format!(
            "N=600: entropy err {worst:.1e}, KL nonincreasing {:.1}%, 1-NN purity {purity:.3}, {:.1}s",
            monotone * 100.0,
            secs(elapsed)
        ),
    )
}

// 10 -------------------------------------------------------------------------

/// Every file in `dir` except the manifest, with `wall_time` removed from
/// JSON reports.
fn artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name == "manifest.json" {
            continue;
        }
        let mut bytes = std::fs::read(&path).unwrap();
        if name == "report.json" {
            let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
            v.as_object_mut().unwrap().remove("wall_time");
            bytes = serde_json::to_vec(&v).unwrap();
        }
        out.insert(name, bytes);
    }
    out
}

fn cli_determinism() -> Outcome {
    let ws = common::workspace();
    let root = ws.path();
    let embed = ["--sample-cap", "40", "--iterations", "300", "--perplexity", "8"];
    let commands: Vec<(&str, Vec<&str>)> = vec![
        (
            "synth",
            vec![
                "synth",
                "--dataset",
                "bars",
                "--name",
                "noisy",
                "--shift",
                r#"{"kind":"gaussian_noise","sigma":20,"seed":5}"#,
            ],
        ),
        ("pretrain", vec!["pretrain", "--source", "bars"]),
        (
            "adapt",
            vec![
                "adapt",
                "--source",
                "bars",
                "--target",
                "shifted",
                "--checkpoint",
                "ref/pretrain/source.ckpt",
            ],
        ),
        (
            "eval",
            vec!["eval", "--encoder", "ref/pretrain/source.ckpt", "--dataset", "shifted"],
        ),
        (
            "confusion",
            vec!["confusion", "--predictions", "ref/eval/predictions.csv"],
        ),
        (
            "tsne",
            [
                vec![
                    "tsne",
                    "--encoder",
                    "ref/pretrain/source.ckpt",
                    "--dataset",
                    "bars",
                    "--target",
                    "shifted",
                ],
                embed.to_vec(),
            ]
            .concat(),
        ),
        (
            "report",
            [
                vec!["report", "--source", "bars", "--target", "shifted"],
                embed.to_vec(),
            ]
            .concat(),
        ),
    ];
    let mut compared = 0;
    for (name, args) in &commands {
        let mut trees = Vec::new();
        for run in ["ref", "again"] {
            let out = format!("{run}/{name}");
            let mut full = vec!["--config", "cfg.json", "--out", out.as_str()];
            full.extend(args.iter().copied());
            let res = common::adda(root, &full);
            if !res.status.success() {
                return fail(format!("{name} failed: {}", common::stderr(&res)));
            }
            trees.push(artifacts(&root.join(&out)));
        }
        if trees[0] != trees[1] {
            let differing: Vec<&String> = trees[0]
                .keys()
                .filter(|k| trees[0].get(*k) != trees[1].get(*k))
                .collect();
            return fail(format!("{name}: artifacts differ: {differing:?}"));
        }
        compared += trees[0].len();
    }
    verdict(
        true,
        format!("7 commands run twice, {compared} artifacts byte-identical"),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient suite", gradient_suite),
        (2, "adam scalar trace", adam_trace),
        (3, "loss identities", loss_identities),
        (4, "mnist pretraining", mnist_pretraining),
        (5, "synthetic shift adaptation", synthetic_shift),
        (6, "mnist to usps", mnist_to_usps),
        (7, "freeze and label blindness", freeze_and_label_blindness),
        (8, "confusion matrix", confusion),
        (9, "t-sne", tsne),
        (10, "cli determinism", cli_determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut unexpected = 0;
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let outcome = check();
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Skip => "SKIP",
            Status::Fail if KNOWN_RED.contains(&id) => "FAIL (known)",
            Status::Fail => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("{tag} [{id}] {name}: {}", outcome.detail);
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
