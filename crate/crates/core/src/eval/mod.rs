//! ROUGE, NLL, accuracy and weighted F1, plus report files.

mod classification;
mod report;
mod rouge;

pub use classification::{classification_report, CategoryScores, ClassificationReport};
pub use report::{emit_report, Report, CLASSIFICATION_COLUMNS, EXPLANATION_COLUMNS};
pub use rouge::{f1, lcs_len, rouge_l, rouge_n, Prf, RougeScores};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{LanguageModel, EOS};
use crate::objectives::sft_loss;

/// Tokens before the first EOS.
pub fn strip_eos(tokens: &[u32]) -> &[u32] {
    let end = tokens
        .iter()
        .position(|&t| t == EOS)
        .unwrap_or(tokens.len());
    &tokens[..end]
}

/// ROUGE-1/2/L of one candidate against one reference, EOS stripped.
pub fn score_pair(candidate: &[u32], reference: &[u32]) -> (Prf, Prf, Prf) {
    let (c, r) = (strip_eos(candidate), strip_eos(reference));
    let r1 = rouge_n(c, r, 1).expect("n = 1 is supported");
    let r2 = rouge_n(c, r, 2).expect("n = 2 is supported");
    (r1, r2, rouge_l(c, r))
}

/// Mean teacher-forced NLL of `target` given `prompt`.
pub fn sequence_nll(model: &LanguageModel, prompt: &[u32], target: &[u32]) -> Result<f64> {
    if prompt.is_empty() || target.is_empty() {
        return Err(Error::InvalidInput(
            "nll needs a nonempty prompt and target".into(),
        ));
    }
    let mut seq = prompt.to_vec();
    seq.extend_from_slice(target);
    let rows = model.logit_rows(&seq[..seq.len() - 1], prompt.len() - 1, target.len())?;
    sft_loss(&rows, target, &vec![true; target.len()])
}

/// One example that could not be decoded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeFailure {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationEval {
    pub scores: RougeScores,
    /// Generated tokens per example (prompt removed); empty on failure.
    pub outputs: Vec<Vec<u32>>,
    pub failures: Vec<DecodeFailure>,
}

/// Greedy-decodes every prompt and scores it against its reference.
/// ROUGE components are arithmetic means of per-example scores; an example
/// whose decode fails scores zero. `mean_nll` is the mean per-example NLL
/// of the references.
pub fn eval_explanations(
    model: &LanguageModel,
    prompts: &[Vec<u32>],
    references: &[Vec<u32>],
    max_new: usize,
) -> Result<ExplanationEval> {
    if prompts.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    if prompts.len() != references.len() {
        return Err(Error::InvalidInput(format!(
            "{} prompts for {} references",
            prompts.len(),
            references.len()
        )));
    }
    let n = prompts.len() as f64;
    let mut sums = [Prf::default(); 3];
    let mut nll = 0.0;
    let mut outputs = Vec::with_capacity(prompts.len());
    let mut failures = Vec::new();
    for (i, (prompt, reference)) in prompts.iter().zip(references).enumerate() {
        nll += sequence_nll(model, prompt, reference)?;
        match model.greedy_decode(prompt, max_new) {
            Ok(seq) => {
                let generated = seq[prompt.len()..].to_vec();
                let scores = score_pair(&generated, reference);
                for (s, p) in sums.iter_mut().zip([scores.0, scores.1, scores.2]) {
                    s.precision += p.precision;
                    s.recall += p.recall;
                    s.f1 += p.f1;
                }
                outputs.push(generated);
            }
            Err(e) => {
                warn!("example {i}: decode failed: {e}");
                failures.push(DecodeFailure {
                    index: i,
                    reason: e.to_string(),
                });
                outputs.push(Vec::new());
            }
        }
    }
    let mean = |s: Prf| Prf {
        precision: s.precision / n,
        recall: s.recall / n,
        f1: s.f1 / n,
    };
    Ok(ExplanationEval {
        scores: RougeScores {
            rouge1: mean(sums[0]),
            rouge2: mean(sums[1]),
            rouge_l: mean(sums[2]),
            mean_nll: nll / n,
        },
        outputs,
        failures,
    })
}
