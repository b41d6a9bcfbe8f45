use serde::{Deserialize, Serialize};

use super::gen::{JobPosting, MemberProfile};
use super::oracle::{Explanation, FitLabel, Verdict};
use super::vocab::{Vocabulary, SKILL_NAMES};
use crate::error::{Error, Result};
use crate::models::{BOS, EOS, SEP};

/// Instruction sections in their fixed order.
pub const SECTIONS: [(&str, &str); 5] = [
    ("task", "task : assess member fit with job ;"),
    ("extraction", "extract : list job requirements ;"),
    (
        "evaluation",
        "evaluate : compare member years per requirement ;",
    ),
    ("reasoning", "reason : one line per requirement ;"),
    ("output", "output : end with fit label ;"),
];

/// Sections of the extraction-only subtask prompt.
pub const EXTRACTION_SECTIONS: [&str; 3] = [
    "task : extract job requirements ;",
    "extract : list job requirements ;",
    "output : requirements only ;",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptVariant {
    /// Five instruction sections, job, profile.
    Explanation,
    /// As `Explanation`, with the fit label stated before the separator.
    ExplanationWithRating(FitLabel),
    /// Job only; the expected output is the requirement lines.
    ExtractionOnly,
}

/// Which rendering of the job goes into a prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobView {
    /// Requirement lines only.
    Compressed,
    /// Every line of the posting.
    Full,
}

impl JobView {
    pub fn text(self, job: &JobPosting) -> String {
        match self {
            JobView::Compressed => job.requirements_text(),
            JobView::Full => job.raw_text(),
        }
    }
}

/// Assembles prompt tokens from already tokenized job and profile text.
/// `limit` is the largest allowed prompt length.
pub fn render_prompt_tokens(
    vocab: &Vocabulary,
    job: &[u32],
    profile: Option<&[u32]>,
    variant: PromptVariant,
    limit: usize,
) -> Result<Vec<u32>> {
    let mut out = vec![BOS];
    let words = |s: &str, out: &mut Vec<u32>| -> Result<()> {
        out.extend(vocab.encode(s)?);
        Ok(())
    };
    match variant {
        PromptVariant::ExtractionOnly => {
            for s in EXTRACTION_SECTIONS {
                words(s, &mut out)?;
            }
            words("job :", &mut out)?;
            out.extend_from_slice(job);
        }
        PromptVariant::Explanation | PromptVariant::ExplanationWithRating(_) => {
            let profile = profile
                .ok_or_else(|| Error::InvalidInput("explanation prompt needs a profile".into()))?;
            for (_, s) in SECTIONS {
                words(s, &mut out)?;
            }
            words("job :", &mut out)?;
            out.extend_from_slice(job);
            words("profile :", &mut out)?;
            out.extend_from_slice(profile);
            if let PromptVariant::ExplanationWithRating(label) = variant {
                words(&format!("rating : {} ;", label.word()), &mut out)?;
            }
        }
    }
    out.push(SEP);
    if out.len() > limit {
        return Err(Error::InvalidInput(format!(
            "prompt has {} tokens, limit is {limit}",
            out.len()
        )));
    }
    Ok(out)
}

pub fn render_prompt(
    vocab: &Vocabulary,
    job: &JobPosting,
    profile: &MemberProfile,
    view: JobView,
    variant: PromptVariant,
    limit: usize,
) -> Result<Vec<u32>> {
    let job_tokens = vocab.encode(&view.text(job))?;
    let profile_tokens = profile.tokens(vocab)?;
    render_prompt_tokens(vocab, &job_tokens, Some(&profile_tokens), variant, limit)
}

/// Single-sequence classifier input: profile first, then the job.
pub fn pair_tokens(vocab: &Vocabulary, job: &[u32], profile: &[u32]) -> Result<Vec<u32>> {
    let mut out = vec![BOS];
    out.extend(vocab.encode("profile :")?);
    out.extend_from_slice(profile);
    out.extend(vocab.encode("job :")?);
    out.extend_from_slice(job);
    out.push(SEP);
    Ok(out)
}

/// Input of one tower of a two-tower classifier.
pub fn tower_tokens(vocab: &Vocabulary, header: &str, body: &[u32]) -> Result<Vec<u32>> {
    let mut out = vec![BOS];
    out.extend(vocab.encode(header)?);
    out.extend(vocab.encode(":")?);
    out.extend_from_slice(body);
    out.push(SEP);
    Ok(out)
}

/// `python need 3 have 5 met ; ... fit : high <eos>`
pub fn explanation_tokens(vocab: &Vocabulary, explanation: &Explanation) -> Result<Vec<u32>> {
    let mut text = String::new();
    for line in &explanation.lines {
        text.push_str(&format!(
            "{} need {} have {} {} ; ",
            SKILL_NAMES[line.skill],
            line.need,
            line.have,
            line.verdict.word()
        ));
    }
    text.push_str(&format!("fit : {}", explanation.label.word()));
    let mut out = vocab.encode(&text)?;
    out.push(EOS);
    Ok(out)
}

/// Requirement lines plus EOS, the target of the extraction prompt.
pub fn extraction_target(vocab: &Vocabulary, job: &JobPosting) -> Result<Vec<u32>> {
    let mut out = vocab.encode(&job.requirements_text())?;
    out.push(EOS);
    Ok(out)
}

/// One parsed explanation line, as written by a model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedLine {
    pub skill: usize,
    pub need: u32,
    pub have: u32,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedExplanation {
    pub lines: Vec<ParsedLine>,
    pub label: FitLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseFailure {
    /// No end-of-sequence token.
    Truncated,
    /// Does not follow the line grammar.
    Malformed,
}

impl ParseFailure {
    pub fn reason(self) -> &'static str {
        match self {
            ParseFailure::Truncated => "truncated",
            ParseFailure::Malformed => "malformed",
        }
    }
}

/// Parses generated target tokens (without prompt). Content after EOS is
/// ignored.
pub fn parse_explanation(
    vocab: &Vocabulary,
    tokens: &[u32],
) -> std::result::Result<ParsedExplanation, ParseFailure> {
    let end = tokens
        .iter()
        .position(|&t| t == EOS)
        .ok_or(ParseFailure::Truncated)?;
    let words: Vec<&str> = tokens[..end]
        .iter()
        .map(|&t| vocab.word(t))
        .collect::<Result<_>>()
        .map_err(|_| ParseFailure::Malformed)?;
    let mut lines = Vec::new();
    let mut i = 0;
    loop {
        match words.get(i..) {
            Some(["fit", ":", label]) => {
                let label = FitLabel::from_word(label).ok_or(ParseFailure::Malformed)?;
                return Ok(ParsedExplanation { lines, label });
            }
            Some([skill, "need", need, "have", have, verdict, ";", ..]) => {
                let skill = SKILL_NAMES
                    .iter()
                    .position(|s| s == skill)
                    .ok_or(ParseFailure::Malformed)?;
                let need = need.parse().map_err(|_| ParseFailure::Malformed)?;
                let have = have.parse().map_err(|_| ParseFailure::Malformed)?;
                let verdict = Verdict::from_word(verdict).ok_or(ParseFailure::Malformed)?;
                lines.push(ParsedLine {
                    skill,
                    need,
                    have,
                    verdict,
                });
                i += 7;
            }
            _ => return Err(ParseFailure::Malformed),
        }
    }
}

/// Label from a decoded output: the `fit : <label>` line, wherever it is.
pub fn parse_fit_label(
    vocab: &Vocabulary,
    tokens: &[u32],
) -> std::result::Result<FitLabel, ParseFailure> {
    let end = tokens
        .iter()
        .position(|&t| t == EOS)
        .ok_or(ParseFailure::Truncated)?;
    let words: Vec<&str> = tokens[..end]
        .iter()
        .filter_map(|&t| vocab.word(t).ok())
        .collect();
    words
        .windows(3)
        .rev()
        .find_map(|w| {
            if w[0] == "fit" && w[1] == ":" {
                FitLabel::from_word(w[2])
            } else {
                None
            }
        })
        .ok_or(ParseFailure::Malformed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::gen::{gen_job, gen_matched_profile, GeneratorConfig};
    use crate::domain::oracle::oracle_assess;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (Vocabulary, JobPosting, MemberProfile) {
        let cfg = GeneratorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let job = gen_job(&mut rng, &cfg, "j1").unwrap();
        let profile = gen_matched_profile(&mut rng, &cfg, &job, "m1").unwrap();
        (Vocabulary::new(), job, profile)
    }

    #[test]
    fn sections_in_order() {
        let (v, job, profile) = sample();
        let p = render_prompt(
            &v,
            &job,
            &profile,
            JobView::Full,
            PromptVariant::Explanation,
            256,
        )
        .unwrap();
        let text = v.decode(&p).unwrap();
        let mut last = 0;
        for (_, s) in SECTIONS {
            let at = text.find(s).unwrap();
            assert!(at >= last);
            last = at;
        }
        assert!(text.find("job :").unwrap() > last);
        assert!(text.find("profile :").unwrap() > text.find("job :").unwrap());
    }

    #[test]
    fn extraction_prompt_has_no_profile() {
        let (v, job, _) = sample();
        let jt = v.encode(&job.raw_text()).unwrap();
        let p = render_prompt_tokens(&v, &jt, None, PromptVariant::ExtractionOnly, 256).unwrap();
        let text = v.decode(&p).unwrap();
        assert!(text.contains(&job.raw_text()));
        assert!(!text.contains("profile"));
    }

    #[test]
    fn overlength_reports_length() {
        let (v, job, profile) = sample();
        let err = render_prompt(
            &v,
            &job,
            &profile,
            JobView::Full,
            PromptVariant::Explanation,
            10,
        )
        .unwrap_err();
        assert!(err.to_string().contains("limit is 10"));
    }

    #[test]
    fn explanation_round_trip() {
        let (v, job, profile) = sample();
        let (fit, exp) = oracle_assess(&job, &profile);
        let t = explanation_tokens(&v, &exp).unwrap();
        let parsed = parse_explanation(&v, &t).unwrap();
        assert_eq!(parsed.label, fit.label);
        assert_eq!(parsed.lines.len(), job.requirements.len());
        assert_eq!(parse_fit_label(&v, &t).unwrap(), fit.label);
        assert_eq!(
            parse_explanation(&v, &t[..t.len() - 1]),
            Err(ParseFailure::Truncated)
        );
        let mut bad = t.clone();
        bad[1] = v.id("have").unwrap();
        assert_eq!(parse_explanation(&v, &bad), Err(ParseFailure::Malformed));
    }
}
