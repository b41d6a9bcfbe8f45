use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Precision, recall and F1 (β = 1).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(overlap: usize, candidate: usize, reference: usize) -> Self {
        let precision = if candidate == 0 {
            0.0
        } else {
            overlap as f64 / candidate as f64
        };
        let recall = if reference == 0 {
            0.0
        } else {
            overlap as f64 / reference as f64
        };
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ngram_counts<T: Eq + std::hash::Hash + Copy>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N with clipped n-gram overlap.
pub fn rouge_n<T: Eq + std::hash::Hash + Copy>(
    candidate: &[T],
    reference: &[T],
    n: usize,
) -> Result<Prf> {
    if n != 1 && n != 2 {
        return Err(Error::InvalidInput(format!(
            "rouge_n supports n = 1 or 2, got {n}"
        )));
    }
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    let total = |len: usize| if len >= n { len - n + 1 } else { 0 };
    Ok(Prf::from_counts(
        overlap,
        total(candidate.len()),
        total(reference.len()),
    ))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L from the longest common subsequence.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(
        lcs_len(candidate, reference),
        candidate.len(),
        reference.len(),
    )
}

/// Explanation-task report row: ROUGE-1/2/L and mean NLL.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
    pub mean_nll: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn worked_example() {
        let c = words("the cat sat on mat");
        let r = words("the cat is on the mat");
        let s = rouge_n(&c, &r, 1).unwrap();
        assert!((s.precision - 0.8).abs() < 1e-12);
        assert!((s.recall - 4.0 / 6.0).abs() < 1e-12);
        assert!((s.f1 - 0.727_273).abs() < 1e-6);
        let l = rouge_l(&c, &r);
        assert_eq!(lcs_len(&c, &r), 4);
        assert!((l.f1 - 0.727_273).abs() < 1e-6);
    }

    #[test]
    fn identity_and_disjoint() {
        let a = [1, 2, 3, 4];
        for n in [1, 2] {
            assert_eq!(
                rouge_n(&a, &a, n).unwrap(),
                Prf {
                    precision: 1.0,
                    recall: 1.0,
                    f1: 1.0
                }
            );
            assert_eq!(rouge_n(&a, &[7, 8, 9], n).unwrap(), Prf::default());
        }
        assert_eq!(rouge_l::<u32>(&[], &[1, 2]), Prf::default());
        assert!(rouge_n(&a, &a, 3).is_err());
    }

    #[test]
    fn subsequence_has_full_recall() {
        assert_eq!(rouge_l(&[1, 5, 2, 6, 3], &[1, 2, 3]).recall, 1.0);
    }
}
