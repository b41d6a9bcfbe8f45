use serde::{Deserialize, Serialize};

use super::rouge::f1;
use crate::domain::FitLabel;
use crate::error::{Error, Result};

/// Per-category precision, recall, F1 and support.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub weighted_f1: f64,
    /// Indexed by [`FitLabel::index`].
    pub per_category: [CategoryScores; 3],
    /// `confusion[label][prediction]`.
    pub confusion: [[usize; 3]; 3],
}

impl ClassificationReport {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

pub fn classification_report(
    predictions: &[FitLabel],
    labels: &[FitLabel],
) -> Result<ClassificationReport> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput(
            "classification report needs at least one example".into(),
        ));
    }
    let mut confusion = [[0usize; 3]; 3];
    for (p, l) in predictions.iter().zip(labels) {
        confusion[l.index()][p.index()] += 1;
    }
    let n = labels.len();
    let correct: usize = (0..3).map(|c| confusion[c][c]).sum();
    let mut per_category = [CategoryScores::default(); 3];
    let mut weighted = 0.0;
    for c in 0..3 {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..3).map(|l| confusion[l][c]).sum();
        let precision = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if support == 0 {
            0.0
        } else {
            tp as f64 / support as f64
        };
        let score = f1(precision, recall);
        per_category[c] = CategoryScores {
            precision,
            recall,
            f1: score,
            support,
        };
        weighted += support as f64 * score;
    }
    Ok(ClassificationReport {
        accuracy: correct as f64 / n as f64,
        weighted_f1: weighted / n as f64,
        per_category,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use FitLabel::*;

    #[test]
    fn hand_example() {
        let r = classification_report(&[High, Medium, Medium, Low], &[High, High, Medium, Low])
            .unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.weighted_f1, 0.75);
        assert_eq!(r.total(), 4);
    }

    #[test]
    fn constant_predictor() {
        let labels = [Low, Medium, High];
        let r = classification_report(&[Medium; 3], &labels).unwrap();
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert!(classification_report(&[Medium; 2], &labels).is_err());
        assert!(classification_report(&[], &[]).is_err());
    }
}
