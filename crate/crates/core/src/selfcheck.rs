//! Seeded finite-difference sweep over every differentiable op and over the
//! full classification and discriminator graphs, all in f64.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::models::{Classifier, Discriminator, Encoder};
use crate::tensor::{finite_diff_check, finite_diff_check_at, Bound, GradCheck, Module, Tape, Tensor, Var};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
/// Coordinates sampled per tensor in the full-graph checks.
const GRAPH_COORDS: usize = 4;
/// Extra coordinate draws allowed when probes keep crossing kinks.
const MAX_DRAWS: usize = 8;

/// Aggregate over trials for one checked quantity.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SuiteEntry {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    /// Trials in which at least one coordinate was usable.
    pub trials_checked: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub trials: u64,
    pub entries: BTreeMap<String, SuiteEntry>,
}

impl SuiteReport {
    fn record(&mut self, name: String, r: GradCheck) {
        let e = self.entries.entry(name).or_default();
        e.max_rel_error = e.max_rel_error.max(r.max_rel_error);
        e.checked += r.checked;
        e.skipped_kinks += r.skipped_kinks;
        e.trials_checked += (r.checked > 0) as u64;
    }

    pub fn merge(&mut self, other: SuiteReport) {
        self.trials = self.trials.max(other.trials);
        for (name, o) in other.entries {
            let e = self.entries.entry(name).or_default();
            e.max_rel_error = e.max_rel_error.max(o.max_rel_error);
            e.checked += o.checked;
            e.skipped_kinks += o.skipped_kinks;
            e.trials_checked += o.trials_checked;
        }
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.values().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    /// Entries that exceed the tolerance or were checked in fewer than 90%
    /// of trials.
    pub fn failures(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| {
                e.max_rel_error.is_nan() || e.max_rel_error >= TOLERANCE || e.trials_checked * 10 < self.trials * 9
            })
            .map(|(name, e)| format!("{name}: {e:?}"))
            .collect()
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-scale..scale))
}

/// Reduces a tensor to a scalar through a fixed random projection, so every
/// output coordinate carries a distinct weight.
fn project(tape: &mut Tape<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone())?;
    let prod = tape.mul(y, w)?;
    tape.sum(prod)
}

fn pick(rng: &mut ChaCha8Rng, numel: usize, k: usize) -> Vec<usize> {
    if numel <= k {
        (0..numel).collect()
    } else {
        sample(rng, numel, k).into_vec()
    }
}

fn seed_for(group: u64, trial: u64) -> u64 {
    group * 1_000_003 + trial
}

/// Checks with respect to every argument of conv2d and linear.
pub fn dense_ops(trials: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        trials,
        ..Default::default()
    };
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(1, trial));
        // conv: [2,2,6,5] input, 3x3 kernel, output [2,3,4,3].
        let conv_args = [
            random(&mut rng, &[2, 2, 6, 5], 1.0),
            random(&mut rng, &[3, 2, 3, 3], 0.5),
            random(&mut rng, &[3], 0.5),
        ];
        let conv_proj = random(&mut rng, &[2, 3, 4, 3], 1.0);
        let lin_args = [
            random(&mut rng, &[3, 5], 1.0),
            random(&mut rng, &[4, 5], 1.0),
            random(&mut rng, &[4], 1.0),
        ];
        let lin_proj = random(&mut rng, &[3, 4], 1.0);
        for slot in 0..3 {
            let r = finite_diff_check(
                |t, v| {
                    let vars = substitute(t, &conv_args, slot, v)?;
                    let y = t.conv2d(vars[0], vars[1], vars[2])?;
                    project(t, y, &conv_proj)
                },
                &conv_args[slot],
                STEP,
            )?;
            report.record(format!("conv2d/{}", ["input", "weight", "bias"][slot]), r);
            let r = finite_diff_check(
                |t, v| {
                    let vars = substitute(t, &lin_args, slot, v)?;
                    let y = t.linear(vars[0], vars[1], vars[2])?;
                    project(t, y, &lin_proj)
                },
                &lin_args[slot],
                STEP,
            )?;
            report.record(format!("linear/{}", ["input", "weight", "bias"][slot]), r);
        }
    }
    Ok(report)
}

fn substitute(t: &mut Tape<f64>, args: &[Tensor<f64>], slot: usize, v: Var) -> Result<Vec<Var>> {
    args.iter()
        .enumerate()
        .map(|(i, a)| if i == slot { Ok(v) } else { t.constant(a.clone()) })
        .collect()
}

/// Max-pool, ReLU, reshaping, elementwise ops, reductions and both losses.
pub fn pointwise_ops(trials: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        trials,
        ..Default::default()
    };
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(2, trial));
        let x = random(&mut rng, &[2, 3, 4, 6], 1.0);
        let p_pool = random(&mut rng, &[2, 3, 2, 3], 1.0);
        let p_full = random(&mut rng, &[2, 3, 4, 6], 1.0);
        let p_flat = random(&mut rng, &[2, 72], 1.0);
        let p_re = random(&mut rng, &[6, 24], 1.0);
        let r = finite_diff_check(
            |t, x| {
                let y = t.maxpool2(x)?;
                project(t, y, &p_pool)
            },
            &x,
            STEP,
        )?;
        report.record("maxpool2".into(), r);
        let r = finite_diff_check(
            |t, x| {
                let y = t.relu(x)?;
                project(t, y, &p_full)
            },
            &x,
            STEP,
        )?;
        report.record("relu".into(), r);
        let r = finite_diff_check(
            |t, x| {
                let y = t.flatten(x)?;
                project(t, y, &p_flat)
            },
            &x,
            STEP,
        )?;
        report.record("flatten".into(), r);
        let r = finite_diff_check(
            |t, x| {
                let y = t.reshape(x, &[6, 24])?;
                project(t, y, &p_re)
            },
            &x,
            STEP,
        )?;
        report.record("reshape".into(), r);

        let a = random(&mut rng, &[4, 3], 2.0);
        let other = random(&mut rng, &[4, 3], 2.0);
        let proj = random(&mut rng, &[4, 3], 1.0);
        let factor = rng.random_range(-3.0..3.0);
        let r = finite_diff_check(
            |t, x| {
                let c = t.constant(other.clone())?;
                let y = t.add(x, c)?;
                project(t, y, &proj)
            },
            &a,
            STEP,
        )?;
        report.record("add".into(), r);
        // x appears on both sides so both operand paths are exercised.
        let r = finite_diff_check(
            |t, x| {
                let c = t.constant(other.clone())?;
                let y = t.mul(c, x)?;
                let y = t.mul(y, x)?;
                project(t, y, &proj)
            },
            &a,
            STEP,
        )?;
        report.record("mul".into(), r);
        let r = finite_diff_check(
            |t, x| {
                let y = t.scale(x, factor)?;
                project(t, y, &proj)
            },
            &a,
            STEP,
        )?;
        report.record("scale".into(), r);
        let r = finite_diff_check(|t, x| t.sum(x), &a, STEP)?;
        report.record("sum".into(), r);

        let logits = random(&mut rng, &[5, 10], 4.0);
        let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..10)).collect();
        let r = finite_diff_check(|t, z| t.softmax_cross_entropy(z, &labels), &logits, STEP)?;
        report.record("softmax_cross_entropy".into(), r);
        let z = random(&mut rng, &[6, 1], 6.0);
        let targets: Vec<f64> = (0..6).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let r = finite_diff_check(|t, z| t.sigmoid_bce(z, &targets), &z, STEP)?;
        report.record("sigmoid_bce".into(), r);
    }
    Ok(report)
}

/// Checks `loss(module)` against each parameter tensor on sampled
/// coordinates. Early-layer weights touch thousands of ReLUs, so a probe
/// often crosses a kink; fresh coordinates are drawn until enough are
/// usable.
fn check_params<M, F>(report: &mut SuiteReport, prefix: &str, rng: &mut ChaCha8Rng, module: &M, loss: F) -> Result<()>
where
    M: Module<f64>,
    F: Fn(&mut Tape<f64>, Bound) -> Result<Var>,
{
    for (k, p) in module.parameters().iter().enumerate() {
        let mut total = GradCheck::default();
        for _ in 0..MAX_DRAWS {
            let coords = pick(rng, p.value().numel(), GRAPH_COORDS);
            let r = finite_diff_check_at(
                |t, v| {
                    let bound = t.bind(module, false)?.substitute(k, v);
                    loss(t, bound)
                },
                p.value(),
                STEP,
                &coords,
            )?;
            total.max_rel_error = total.max_rel_error.max(r.max_rel_error);
            total.checked += r.checked;
            total.skipped_kinks += r.skipped_kinks;
            if total.checked >= GRAPH_COORDS.min(p.value().numel()) {
                break;
            }
        }
        report.record(format!("{prefix}/{}", p.name()), total);
    }
    Ok(())
}

/// Cross entropy of classifier(encoder(images)) against images and every
/// parameter tensor.
pub fn classification_graph(trials: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        trials,
        ..Default::default()
    };
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(3, trial));
        let encoder = Encoder::<f64>::init(trial);
        let classifier = Classifier::<f64>::init(trial + 1);
        let images = random(&mut rng, &[1, 1, 28, 28], 1.0);
        let labels = [rng.random_range(0..10)];
        let forward = |t: &mut Tape<f64>, x: Var, be: &Bound, bc: &Bound| -> Result<Var> {
            let f = encoder.forward(t, be, x)?;
            let z = classifier.forward(t, bc, f)?;
            t.softmax_cross_entropy(z, &labels)
        };

        let coords = pick(&mut rng, images.numel(), 2 * GRAPH_COORDS);
        let r = finite_diff_check_at(
            |t, x| {
                let be = t.bind(&encoder, false)?;
                let bc = t.bind(&classifier, false)?;
                forward(t, x, &be, &bc)
            },
            &images,
            STEP,
            &coords,
        )?;
        report.record("classification/images".into(), r);
        check_params(&mut report, "classification", &mut rng, &encoder, |t, be| {
            let x = t.constant(images.clone())?;
            let bc = t.bind(&classifier, false)?;
            forward(t, x, &be, &bc)
        })?;
        check_params(&mut report, "classification", &mut rng, &classifier, |t, bc| {
            let x = t.constant(images.clone())?;
            let be = t.bind(&encoder, false)?;
            forward(t, x, &be, &bc)
        })?;
    }
    Ok(report)
}

/// Domain BCE of the discriminator against its input features and every
/// parameter tensor.
pub fn discriminator_graph(trials: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        trials,
        ..Default::default()
    };
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(4, trial));
        let disc = Discriminator::<f64>::init(trial);
        // Encoder features are post-ReLU, so nonnegative.
        let feats = Tensor::from_fn([2, 500], |_| rng.random_range(0.0..2.0));
        let domains = [1.0, 0.0];

        let coords = pick(&mut rng, feats.numel(), 2 * GRAPH_COORDS);
        let r = finite_diff_check_at(
            |t, f| {
                let bd = t.bind(&disc, false)?;
                let z = disc.forward(t, &bd, f)?;
                t.sigmoid_bce(z, &domains)
            },
            &feats,
            STEP,
            &coords,
        )?;
        report.record("discriminator/features".into(), r);
        check_params(&mut report, "discriminator", &mut rng, &disc, |t, bd| {
            let f = t.constant(feats.clone())?;
            let z = disc.forward(t, &bd, f)?;
            t.sigmoid_bce(z, &domains)
        })?;
    }
    Ok(report)
}

/// All four groups.
pub fn gradient_suite(trials: u64) -> Result<SuiteReport> {
    let mut report = dense_ops(trials)?;
    report.merge(pointwise_ops(trials)?);
    report.merge(classification_graph(trials)?);
    report.merge(discriminator_graph(trials)?);
    Ok(report)
}
