use serde::{Deserialize, Serialize};

use crate::domain::{
    parse_explanation, parse_fit_label, render_prompt, Corpus, ExampleRecord, FitLabel, JobView,
    PromptVariant, RejectReason, Source, Vocabulary,
};
use crate::error::Result;
use crate::models::LanguageModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// The whole decoded explanation must parse.
    Explanation,
    /// Only the `fit : <label>` line is needed.
    Classification,
}

/// A teacher-labelled record, or the reason it was rejected. Rejected
/// records keep whatever the teacher produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub record: ExampleRecord,
    pub rejected: Option<RejectReason>,
}

/// Greedy-decodes the explanation prompt of every `(job id, profile id)`
/// pair with `teacher`. The record label is the decoded fit label; its
/// coverage is the label's rating, since the teacher states no coverage.
pub fn generate_labels(
    teacher: &LanguageModel,
    vocab: &Vocabulary,
    corpus: &Corpus,
    pairs: &[(String, String)],
    mode: LabelMode,
    view: JobView,
) -> Result<Vec<LabeledRecord>> {
    let max_len = teacher.config.max_seq_len;
    let mut out = Vec::with_capacity(pairs.len());
    for (j, p) in pairs {
        let (job, profile) = (corpus.job(j)?, corpus.profile(p)?);
        let prompt = render_prompt(
            vocab,
            job,
            profile,
            view,
            PromptVariant::Explanation,
            max_len - 1,
        )?;
        let seq = teacher.greedy_decode(&prompt, max_len - prompt.len())?;
        let target = seq[prompt.len()..].to_vec();
        let parsed: std::result::Result<FitLabel, RejectReason> = match mode {
            LabelMode::Explanation => parse_explanation(vocab, &target)
                .map(|e| e.label)
                .map_err(Into::into),
            LabelMode::Classification => parse_fit_label(vocab, &target).map_err(Into::into),
        };
        let (label, rejected) = match parsed {
            Ok(label) => (label, None),
            Err(reason) => (FitLabel::Low, Some(reason)),
        };
        out.push(LabeledRecord {
            record: ExampleRecord {
                id: ExampleRecord::pair_id(j, p),
                source: Source::TeacherModel,
                label,
                coverage: label.rating(),
                prompt_tokens: prompt,
                target_tokens: target,
            },
            rejected,
        });
    }
    Ok(out)
}

/// Share of records that were not rejected.
pub fn parse_rate(labels: &[LabeledRecord]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|l| l.rejected.is_none()).count() as f64 / labels.len() as f64
}
