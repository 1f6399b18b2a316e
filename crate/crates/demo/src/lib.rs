//! WebAssembly bindings for the static page in `www/`. Every export returns
//! a self-contained SVG string.

use std::fmt::Write;

use adda_core::data::{apply_shift, DatasetContainer, ShiftKind, SyntheticShiftSpec};
use adda_core::eval::{embedding_svg, nearest_neighbor_purity, tsne_embed, Embedding, TsneConfig};
use adda_core::optim::{Adam, AdamConfig};
use adda_core::tensor::{Module, Parameter, Tensor};
use wasm_bindgen::prelude::*;

const CLUSTER_DIM: usize = 20;

/// Deterministic uniform stream for fixtures; quality is not a concern.
struct Lcg(u64);

impl Lcg {
    fn next_f64(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Approximately standard normal (sum of twelve uniforms).
    fn gauss(&mut self) -> f64 {
        (0..12).map(|_| self.next_f64()).sum::<f64>() - 6.0
    }
}

/// Gaussian blobs in 20-D with centers on separate axes.
pub fn cluster_points(clusters: usize, per: usize, separation: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = Lcg(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut x = Vec::with_capacity(clusters * per * CLUSTER_DIM);
    let mut labels = Vec::with_capacity(clusters * per);
    for c in 0..clusters {
        for _ in 0..per {
            x.extend((0..CLUSTER_DIM).map(|k| if k == c % CLUSTER_DIM { separation } else { 0.0 } + rng.gauss()));
            labels.push(c);
        }
    }
    (x, labels)
}

fn cluster_embedding(
    clusters: usize,
    per: usize,
    separation: f64,
    perplexity: f64,
    iterations: usize,
    seed: u64,
) -> Result<Embedding, String> {
    if !(2..=10).contains(&clusters) {
        return Err("clusters must be between 2 and 10".into());
    }
    let (x, labels) = cluster_points(clusters, per, separation, seed);
    let cfg = TsneConfig {
        perplexity,
        iterations,
        // Short runs still get a post-exaggeration phase.
        exaggeration_iters: 250.min(iterations / 2),
        seed,
        ..TsneConfig::default()
    };
    tsne_embed(&x, &labels, CLUSTER_DIM, &cfg).map_err(|e| e.to_string())
}

pub fn tsne_demo(
    clusters: usize,
    per: usize,
    separation: f64,
    perplexity: f64,
    iterations: usize,
    seed: u64,
) -> Result<String, String> {
    let emb = cluster_embedding(clusters, per, separation, perplexity, iterations, seed)?;
    let purity = nearest_neighbor_purity(&emb.points, &emb.labels);
    let kl = emb.kl_trace.last().copied().unwrap_or(f64::NAN);
    Ok(embedding_svg(
        &emb,
        None,
        &format!("1-NN purity {purity:.3}, KL {kl:.3}"),
    ))
}

/// A 28×28 hand-drawn "7" with a slight gradient, for previewing shifts.
fn glyph() -> DatasetContainer {
    let mut px = vec![0u8; 28 * 28];
    for y in 0..28 {
        for x in 0..28 {
            let bar = (5..9).contains(&y) && (6..23).contains(&x);
            // Diagonal stroke from the bar's right end down to the bottom left.
            let t = (y as f64 - 8.0) / 16.0;
            let cx = 22.0 - t * 10.0;
            let stem = (8..24).contains(&y) && (x as f64 - cx).abs() < 2.0;
            if bar || stem {
                px[y * 28 + x] = 140 + (y * 4) as u8;
            }
        }
    }
    DatasetContainer::new("glyph", [1, 28, 28], px, vec![7]).expect("valid glyph")
}

fn pixel_grid(out: &mut String, pixels: &[u8], left: f64, top: f64, cell: f64) {
    for (i, &v) in pixels.iter().enumerate() {
        let (x, y) = ((i % 28) as f64, (i / 28) as f64);
        let _ = writeln!(
            out,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"rgb({v},{v},{v})\"/>",
            left + x * cell,
            top + y * cell
        );
    }
}

pub fn shift_preview(kind: &str, amount: f64, seed: u64) -> Result<String, String> {
    let kind = match kind {
        "invert" => ShiftKind::Invert,
        "noise" => ShiftKind::GaussianNoise { sigma: amount },
        "translate" => ShiftKind::Translate {
            dx: amount.round() as i64,
            dy: (amount / 2.0).round() as i64,
        },
        other => return Err(format!("unknown shift {other:?}")),
    };
    let before = glyph();
    let after = apply_shift(&before, &SyntheticShiftSpec { kind, seed }).map_err(|e| e.to_string())?;
    let mut out = String::from(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 420\" shape-rendering=\"crispEdges\">\n",
    );
    out.push_str("<rect width=\"800\" height=\"420\" fill=\"white\"/>\n");
    pixel_grid(&mut out, before.image(0), 20.0, 40.0, 13.0);
    pixel_grid(&mut out, after.image(0), 416.0, 40.0, 13.0);
    out.push_str("<text x=\"202\" y=\"28\" text-anchor=\"middle\" font-size=\"18\">original</text>\n");
    out.push_str("<text x=\"598\" y=\"28\" text-anchor=\"middle\" font-size=\"18\">shifted</text>\n");
    out.push_str("</svg>\n");
    Ok(out)
}

struct Point(Parameter<f64>);

impl Module<f64> for Point {
    fn parameters(&self) -> Vec<&Parameter<f64>> {
        vec![&self.0]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        vec![&mut self.0]
    }
}

fn rosenbrock(x: f64, y: f64) -> f64 {
    (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
}

fn rosenbrock_grad(x: f64, y: f64) -> [f64; 2] {
    [-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)]
}

/// Adam iterates on the Rosenbrock valley from `(-1.5, 2)`.
pub fn adam_path(lr: f64, steps: usize) -> Result<Vec<[f64; 2]>, String> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err("learning rate must be positive".into());
    }
    let start = Tensor::new([2], vec![-1.5, 2.0]).map_err(|e| e.to_string())?;
    let mut p = Point(Parameter::new("xy", start));
    let mut adam = Adam::for_module(AdamConfig::with_lr(lr), &p);
    let mut path = vec![[-1.5, 2.0]];
    for _ in 0..steps {
        let (value, grad) = p.0.value_and_grad_mut();
        let g = rosenbrock_grad(value[0], value[1]);
        grad.copy_from_slice(&g);
        adam.step(&mut p).map_err(|e| e.to_string())?;
        let v = p.0.value().data();
        path.push([v[0], v[1]]);
    }
    Ok(path)
}

pub fn adam_svg(lr: f64, steps: usize) -> Result<String, String> {
    let path = adam_path(lr, steps)?;
    let (x0, x1, y0, y1) = (-2.0, 2.0, -1.0, 3.0);
    let sx = |x: f64| 40.0 + (x - x0) / (x1 - x0) * 720.0;
    let sy = |y: f64| 760.0 - (y - y0) / (y1 - y0) * 720.0;
    let mut out = String::from("<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 800\">\n");
    out.push_str("<rect width=\"800\" height=\"800\" fill=\"white\"/>\n");
    let n = 40;
    for i in 0..n {
        for j in 0..n {
            let x = x0 + (i as f64 + 0.5) / n as f64 * (x1 - x0);
            let y = y0 + (j as f64 + 0.5) / n as f64 * (y1 - y0);
            let shade = 255.0 - (rosenbrock(x, y).ln_1p() / 8.0).min(1.0) * 150.0;
            let _ = writeln!(
                out,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"18.5\" height=\"18.5\" fill=\"rgb({s},{s},255)\"/>",
                sx(x) - 9.0,
                sy(y) - 9.0,
                s = shade as u8
            );
        }
    }
    let pts: Vec<String> = path
        .iter()
        .map(|p| format!("{:.1},{:.1}", sx(p[0].clamp(x0, x1)), sy(p[1].clamp(y0, y1))))
        .collect();
    let _ = writeln!(
        out,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>",
        pts.join(" ")
    );
    let _ = writeln!(
        out,
        "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"6\" fill=\"black\"/>",
        sx(1.0),
        sy(1.0)
    );
    let last = path[path.len() - 1];
    let _ = writeln!(
        out,
        "<text x=\"400\" y=\"28\" text-anchor=\"middle\" font-size=\"18\">{steps} steps at lr {lr}: f = {:.3e}</text>",
        rosenbrock(last[0], last[1])
    );
    out.push_str("</svg>\n");
    Ok(out)
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn tsne_clusters(
    clusters: u32,
    per_cluster: u32,
    separation: f64,
    perplexity: f64,
    iterations: u32,
    seed: u32,
) -> Result<String, JsError> {
    js(tsne_demo(
        clusters as usize,
        per_cluster as usize,
        separation,
        perplexity,
        iterations as usize,
        seed as u64,
    ))
}

#[wasm_bindgen]
pub fn shift_svg(kind: &str, amount: f64, seed: u32) -> Result<String, JsError> {
    js(shift_preview(kind, amount, seed as u64))
}

#[wasm_bindgen]
pub fn adam_rosenbrock(lr: f64, steps: u32) -> Result<String, JsError> {
    js(adam_svg(lr, steps as usize))
}
