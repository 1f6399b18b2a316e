use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::NUM_CLASSES;

/// Rows are true labels, columns predictions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_predictions(predictions: &[usize], labels: &[usize]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut cm = ConfusionMatrix::default();
        for (&p, &t) in predictions.iter().zip(labels) {
            if p >= NUM_CLASSES || t >= NUM_CLASSES {
                return Err(Error::Validation(format!(
                    "class pair ({t}, {p}) outside [0, {NUM_CLASSES})"
                )));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, row: usize) -> u64 {
        self.counts[row].iter().sum()
    }

    /// Each row divided by its sum. Rows without examples stay all zero;
    /// see [`ConfusionMatrix::empty_rows`].
    pub fn normalized(&self) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        let mut out = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        for (t, row) in self.counts.iter().enumerate() {
            let total = self.row_total(t);
            if total == 0 {
                continue;
            }
            for (p, &c) in row.iter().enumerate() {
                out[t][p] = c as f64 / total as f64;
            }
        }
        out
    }

    pub fn empty_rows(&self) -> Vec<usize> {
        (0..NUM_CLASSES).filter(|&t| self.row_total(t) == 0).collect()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total() as f64
    }
}
