//! Exact t-SNE: Gaussian input affinities calibrated to a perplexity,
//! Student-t output kernel, gradient descent with momentum.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 50;
const P_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    /// Points kept per domain before embedding.
    pub sample_cap: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            momentum: 0.5,
            final_momentum: 0.8,
            sample_cap: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    /// KL(P || Q) before each update, against the unexaggerated P.
    pub kl_trace: Vec<f64>,
    /// Achieved entropy of each conditional distribution, in bits.
    pub entropies: Vec<f64>,
}

/// Seeded subset of at most `cap` indices out of `n`, in ascending order.
pub fn sample_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, cap).into_vec();
    idx.sort_unstable();
    idx
}

fn squared_distances(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        for j in i + 1..n {
            let xj = &x[j * d..(j + 1) * d];
            let s: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    out
}

/// Conditional distribution of row `i` at precision `beta`, with distances
/// shifted by their minimum so the exponentials cannot all underflow.
/// Returns the entropy in bits.
fn conditional_row(dist: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&dj, r)) in dist.iter().zip(row.iter_mut()).enumerate() {
        if j == i {
            *r = 0.0;
            continue;
        }
        let shifted = dj - dmin;
        *r = (-beta * shifted).exp();
        sum += *r;
        weighted += shifted * *r;
    }
    for r in row.iter_mut() {
        *r /= sum;
    }
    (sum.ln() + beta * weighted / sum) / std::f64::consts::LN_2
}

/// Row-stochastic conditional affinities `p_{j|i}` (N×N) calibrated so
/// that each row has entropy `log2(perplexity)`, plus the achieved entropies.
pub fn conditional_affinities(features: &[f64], n: usize, d: usize, perplexity: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    validate(features, n, d, perplexity)?;
    let dist = squared_distances(features, n, d);
    let target = perplexity.log2();
    let mut p = vec![0.0; n * n];
    let mut entropies = Vec::with_capacity(n);
    for i in 0..n {
        let di = &dist[i * n..(i + 1) * n];
        let row = &mut p[i * n..(i + 1) * n];
        let mean: f64 = di.iter().sum::<f64>() / (n - 1) as f64;
        let mut beta = if mean > 0.0 { 1.0 / mean } else { 1.0 };
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut h = conditional_row(di, i, beta, row);
        for _ in 0..MAX_BISECTIONS {
            if (h - target).abs() < ENTROPY_TOL {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            h = conditional_row(di, i, beta, row);
        }
        entropies.push(h);
    }
    Ok((p, entropies))
}

/// `(P + Pᵀ) / 2N`, floored away from zero.
pub fn symmetrize(conditional: &[f64], n: usize) -> Vec<f64> {
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((conditional[i * n + j] + conditional[j * n + i]) / (2.0 * n as f64)).max(P_FLOOR);
            }
        }
    }
    p
}

/// Student-t joint distribution over the embedding and its unnormalized
/// kernel values `1 / (1 + |yi − yj|²)`.
pub fn student_q(y: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let k = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = k;
            num[j * n + i] = k;
            z += 2.0 * k;
        }
    }
    let q = num.iter().map(|&k| k / z).collect();
    (q, num)
}

/// KL(P || Q) and its gradient. Only the gradient sees P scaled by
/// `exaggeration`.
pub fn kl_and_gradient(p: &[f64], y: &[[f64; 2]], exaggeration: f64) -> (f64, Vec<[f64; 2]>) {
    let n = y.len();
    let (q, num) = student_q(y);
    let mut kl = 0.0;
    let mut grad = vec![[0.0; 2]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (pij, qij) = (p[i * n + j], q[i * n + j].max(P_FLOOR));
            if pij > 0.0 {
                kl += pij * (pij / qij).ln();
            }
            let w = 4.0 * (exaggeration * pij - q[i * n + j]) * num[i * n + j];
            grad[i][0] += w * (y[i][0] - y[j][0]);
            grad[i][1] += w * (y[i][1] - y[j][1]);
        }
    }
    (kl, grad)
}

fn validate(features: &[f64], n: usize, d: usize, perplexity: f64) -> Result<()> {
    if features.len() != n * d || d == 0 {
        return Err(Error::Validation(format!(
            "{} feature values for {n} points of width {d}",
            features.len()
        )));
    }
    if perplexity.is_nan() || perplexity <= 1.0 || perplexity * 3.0 > n as f64 {
        return Err(Error::Validation(format!(
            "perplexity {perplexity} needs at least {} points, got {n}",
            (perplexity * 3.0).ceil()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("t-SNE features must be finite".into()));
    }
    let first = &features[..d];
    if features.chunks_exact(d).all(|row| row == first) {
        return Err(Error::Validation("t-SNE features are all identical".into()));
    }
    Ok(())
}

/// Embeds `n` feature rows of width `d` into the plane.
pub fn tsne_embed(features: &[f64], labels: &[usize], d: usize, cfg: &TsneConfig) -> Result<Embedding> {
    let n = labels.len();
    let (cond, entropies) = conditional_affinities(features, n, d, cfg.perplexity)?;
    let p = symmetrize(&cond, n);

    let normal = Normal::new(0.0, 1e-4).expect("valid init scale");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut update = vec![[0.0; 2]; n];
    let mut kl_trace = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let early = it < cfg.exaggeration_iters;
        let exaggeration = if early { cfg.exaggeration } else { 1.0 };
        let momentum = if early { cfg.momentum } else { cfg.final_momentum };
        let (kl, grad) = kl_and_gradient(&p, &y, exaggeration);
        kl_trace.push(kl);
        for i in 0..n {
            for k in 0..2 {
                update[i][k] = momentum * update[i][k] - cfg.learning_rate * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
        center(&mut y);
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("t-SNE embedding became non-finite".into()));
    }
    Ok(Embedding {
        points: y,
        labels: labels.to_vec(),
        kl_trace,
        entropies,
    })
}

fn center(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let mx = y.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = y.iter().map(|p| p[1]).sum::<f64>() / n;
    for p in y.iter_mut() {
        p[0] -= mx;
        p[1] -= my;
    }
}

/// Fraction of points whose nearest other point shares their label.
pub fn nearest_neighbor_purity(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let n = points.len();
    let hits = (0..n)
        .filter(|&i| {
            let nearest = (0..n)
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    let da = (points[a][0] - points[i][0]).powi(2) + (points[a][1] - points[i][1]).powi(2);
                    let db = (points[b][0] - points[i][0]).powi(2) + (points[b][1] - points[i][1]).powi(2);
                    da.total_cmp(&db)
                })
                .expect("at least two points");
            labels[nearest] == labels[i]
        })
        .count();
    hits as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equidistant_points_give_uniform_p() {
        // Vertices of a regular simplex: the unit basis vectors.
        let feats = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        // Perplexity must stay below n/3 = 1, so calibrate rows directly.
        let dist = squared_distances(&feats, 3, 3);
        let mut cond = vec![0.0; 9];
        for i in 0..3 {
            conditional_row(&dist[i * 3..(i + 1) * 3], i, 0.7, &mut cond[i * 3..(i + 1) * 3]);
        }
        let p = symmetrize(&cond, 3);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((p[i * 3 + j] - 1.0 / 6.0).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn p_equal_q_has_zero_kl_and_gradient() {
        let y = vec![[0.0, 0.0], [1.0, 0.5], [-0.3, 2.0], [0.7, -1.1]];
        let (q, _) = student_q(&y);
        let (kl, grad) = kl_and_gradient(&q, &y, 1.0);
        assert!(kl.abs() < 1e-15);
        assert!(grad.iter().flatten().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let same = vec![0.5; 30 * 4];
        let labels = vec![0; 30];
        assert!(tsne_embed(
            &same,
            &labels,
            4,
            &TsneConfig {
                perplexity: 5.0,
                ..TsneConfig::default()
            }
        )
        .is_err());
        let x: Vec<f64> = (0..30 * 4).map(|v| v as f64).collect();
        assert!(tsne_embed(
            &x,
            &labels,
            4,
            &TsneConfig {
                perplexity: 11.0,
                ..TsneConfig::default()
            }
        )
        .is_err());
    }

    #[test]
    fn sampling_is_seeded_and_sorted() {
        let a = sample_indices(100, 10, 3);
        assert_eq!(a, sample_indices(100, 10, 3));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_indices(5, 10, 0), vec![0, 1, 2, 3, 4]);
    }
}
