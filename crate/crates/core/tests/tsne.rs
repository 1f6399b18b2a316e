use adda_core::eval::tsne::{conditional_affinities, kl_and_gradient, student_q};
use adda_core::eval::{nearest_neighbor_purity, tsne_embed, TsneConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const DIM: usize = 500;

/// Three Gaussian blobs in 500-D whose means sit 30 units apart along
/// separate axes; within-blob spread is unit variance per axis.
fn three_clusters(per: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut x = Vec::with_capacity(3 * per * DIM);
    let mut labels = Vec::with_capacity(3 * per);
    for c in 0..3 {
        for _ in 0..per {
            for k in 0..DIM {
                let mean = if k == c { 30.0 } else { 0.0 };
                x.push(mean + noise.sample(&mut rng));
            }
            labels.push(c);
        }
    }
    (x, labels)
}

fn post_exaggeration_monotone_fraction(trace: &[f64], from: usize) -> f64 {
    let tail = &trace[from..];
    let ok = tail.windows(2).filter(|w| w[1] <= w[0]).count();
    ok as f64 / (tail.len() - 1) as f64
}

#[test]
fn small_cluster_fixture() {
    let (x, labels) = three_clusters(20, 1);
    let cfg = TsneConfig {
        perplexity: 10.0,
        seed: 7,
        ..TsneConfig::default()
    };
    let emb = tsne_embed(&x, &labels, DIM, &cfg).unwrap();
    let target = cfg.perplexity.log2();
    assert!(emb.entropies.iter().all(|h| (h - target).abs() < 1e-4));
    assert!(nearest_neighbor_purity(&emb.points, &labels) >= 0.95);
    assert!(post_exaggeration_monotone_fraction(&emb.kl_trace, cfg.exaggeration_iters) >= 0.9);
    let mean_x: f64 = emb.points.iter().map(|p| p[0]).sum::<f64>() / emb.points.len() as f64;
    assert!(mean_x.abs() < 1e-9);
}

#[test]
fn six_hundred_points() {
    let (x, labels) = three_clusters(200, 2);
    let cfg = TsneConfig {
        seed: 11,
        ..TsneConfig::default()
    };
    let start = std::time::Instant::now();
    let emb = tsne_embed(&x, &labels, DIM, &cfg).unwrap();
    assert!(start.elapsed().as_secs() < 300);
    let target = cfg.perplexity.log2();
    let worst = emb.entropies.iter().map(|h| (h - target).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-4, "entropy error {worst}");
    let frac = post_exaggeration_monotone_fraction(&emb.kl_trace, cfg.exaggeration_iters);
    assert!(frac >= 0.9, "monotone fraction {frac}");
    assert!(nearest_neighbor_purity(&emb.points, &labels) >= 0.95);
}

#[test]
fn rotation_keeps_purity() {
    // A random orthogonal-free rotation: permuting and sign-flipping axes
    // preserves all pairwise distances exactly.
    let (x, labels) = three_clusters(20, 3);
    let mut perm: Vec<usize> = (0..DIM).collect();
    perm.reverse();
    let rotated: Vec<f64> = x
        .chunks_exact(DIM)
        .flat_map(|row| {
            perm.iter()
                .enumerate()
                .map(move |(k, &src)| if k % 2 == 0 { -row[src] } else { row[src] })
        })
        .collect();
    let cfg = TsneConfig {
        perplexity: 10.0,
        seed: 5,
        ..TsneConfig::default()
    };
    let a = tsne_embed(&x, &labels, DIM, &cfg).unwrap();
    let b = tsne_embed(&rotated, &labels, DIM, &cfg).unwrap();
    assert_eq!(
        nearest_neighbor_purity(&a.points, &labels),
        nearest_neighbor_purity(&b.points, &labels)
    );
}

#[test]
fn entropy_calibration_hits_target() {
    let (x, _) = three_clusters(30, 4);
    for perplexity in [5.0, 15.0, 29.0] {
        let (p, h) = conditional_affinities(&x, 90, DIM, perplexity).unwrap();
        for (i, hi) in h.iter().enumerate() {
            assert!((hi - perplexity.log2()).abs() < 1e-4);
            let row: f64 = p[i * 90..(i + 1) * 90].iter().sum();
            assert!((row - 1.0).abs() < 1e-12);
            assert_eq!(p[i * 90 + i], 0.0);
        }
    }
}

#[test]
fn kl_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let y: Vec<[f64; 2]> = (0..6)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    // Any symmetric distribution works as P.
    let (p, _) = student_q(&y.iter().map(|v| [v[0] * 1.7, v[1] * 0.4]).collect::<Vec<_>>());
    let (_, grad) = kl_and_gradient(&p, &y, 1.0);
    let h = 1e-6;
    for i in 0..6 {
        for k in 0..2 {
            let mut plus = y.clone();
            plus[i][k] += h;
            let mut minus = y.clone();
            minus[i][k] -= h;
            let num = (kl_and_gradient(&p, &plus, 1.0).0 - kl_and_gradient(&p, &minus, 1.0).0) / (2.0 * h);
            assert!((num - grad[i][k]).abs() < 1e-6, "{num} vs {}", grad[i][k]);
        }
    }
}
