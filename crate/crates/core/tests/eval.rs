#![allow(clippy::needless_range_loop)]

use adda_core::eval::{
    confusion_counts_csv, confusion_csv, confusion_svg, embedding_csv, embedding_svg, ConfusionMatrix, Embedding,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cell-by-cell tally written independently of the library.
fn brute_force(preds: &[usize], labels: &[usize]) -> Vec<Vec<u64>> {
    let mut out = vec![vec![0u64; 10]; 10];
    for t in 0..10 {
        for p in 0..10 {
            out[t][p] = preds
                .iter()
                .zip(labels)
                .filter(|&(&pp, &ll)| pp == p && ll == t)
                .count() as u64;
        }
    }
    out
}

#[test]
fn ten_thousand_random_examples_match_tally() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let labels: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..10)).collect();
    let preds: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..10)).collect();
    let cm = ConfusionMatrix::from_predictions(&preds, &labels).unwrap();
    let oracle = brute_force(&preds, &labels);
    for t in 0..10 {
        assert_eq!(cm.counts[t].to_vec(), oracle[t]);
    }
    assert_eq!(cm.total(), 10_000);
    for row in cm.normalized() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn csv_parses_back() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels: Vec<usize> = (0..997).map(|_| rng.random_range(0..10)).collect();
    let preds: Vec<usize> = (0..997).map(|_| rng.random_range(0..10)).collect();
    let cm = ConfusionMatrix::from_predictions(&preds, &labels).unwrap();
    let text = confusion_csv(&cm).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert!(!text.contains('\r'));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(reader.headers().unwrap().len(), 11);
    let norm = cm.normalized();
    for (t, rec) in reader.records().enumerate() {
        let rec = rec.unwrap();
        assert_eq!(rec.len() - 1, 10);
        for p in 0..10 {
            let v: f64 = rec[p + 1].parse().unwrap();
            assert!((v - norm[t][p]).abs() < 1e-9);
        }
    }
    let counts = confusion_counts_csv(&cm).unwrap();
    assert!(counts.starts_with("true,pred_0,"));
}

#[test]
fn figures_are_deterministic() {
    let emb = Embedding {
        points: (0..30).map(|i| [i as f64 * 0.5, (i * i) as f64 * 0.01]).collect(),
        labels: (0..30).map(|i| i % 10).collect(),
        kl_trace: vec![1.0],
        entropies: vec![],
    };
    let domains: Vec<u8> = (0..30).map(|i| (i % 2) as u8).collect();
    let a = embedding_svg(&emb, Some(&domains), "features");
    assert_eq!(a, embedding_svg(&emb, Some(&domains), "features"));
    assert_eq!(
        a.matches("<circle").count(),
        15 + 10,
        "15 filled points plus the legend"
    );
    assert!(a.contains("viewBox=\"0 0 800 800\""));
    let csv_text = embedding_csv(&emb, Some(&domains)).unwrap();
    assert_eq!(csv_text.lines().count(), 31);
    let cm = ConfusionMatrix::from_predictions(&[1, 2], &[1, 3]).unwrap();
    assert_eq!(confusion_svg(&cm, "t"), confusion_svg(&cm, "t"));
}

proptest! {
    #[test]
    fn totals_are_conserved(pairs in prop::collection::vec((0usize..10, 0usize..10), 0..400)) {
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let cm = ConfusionMatrix::from_predictions(&preds, &labels).unwrap();
        prop_assert_eq!(cm.total(), preds.len() as u64);
        let norm = cm.normalized();
        let empty = cm.empty_rows();
        for (t, row) in norm.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if empty.contains(&t) {
                prop_assert_eq!(s, 0.0);
            } else {
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }
}
