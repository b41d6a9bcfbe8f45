use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{CompressionMode, PipelineConfig};
use crate::distill::{classify_pair, load_checkpoint};
use crate::domain::{
    parse_explanation, render_prompt_tokens, FitAssessment, Importance, JobPosting, ParseFailure,
    PromptVariant, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::strip_eos;
use crate::models::{EncoderClassifier, LanguageModel, EOS};

/// How job text is compressed before classification and explanation.
#[derive(Clone, Debug)]
pub enum Compressor {
    /// Keep the marked requirement lines.
    Rule,
    /// Greedy-decode the extraction prompt with a small generative model.
    Model(LanguageModel),
}

impl Compressor {
    pub fn mode(&self) -> CompressionMode {
        match self {
            Compressor::Rule => CompressionMode::Rule,
            Compressor::Model(_) => CompressionMode::Model,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub tokens: Vec<u32>,
    /// Compressed tokens over original tokens.
    pub ratio: f64,
}

fn is_requirement_line(vocab: &Vocabulary, line: &[u32]) -> bool {
    let [importance, years, skill, semi] = line else {
        return false;
    };
    let word = |id: u32| vocab.word(id).unwrap_or("");
    Importance::from_word(word(*importance)).is_some()
        && vocab.years_of(*years).is_some()
        && vocab.skill_of(*skill).is_some()
        && word(*semi) == ";"
}

/// Requirement lines of a tokenized posting, in order.
pub fn rule_summary(vocab: &Vocabulary, job: &[u32]) -> Result<Vec<u32>> {
    let semi = vocab.id(";")?;
    let mut out = Vec::new();
    for line in job.split_inclusive(|&t| t == semi) {
        if is_requirement_line(vocab, line) {
            out.extend_from_slice(line);
        }
    }
    Ok(out)
}

/// Compresses job text. Model mode decodes at most `max_seq_len` tokens
/// and drops the trailing EOS.
pub fn summarize_job(
    vocab: &Vocabulary,
    job_text: &str,
    compressor: &Compressor,
) -> Result<Summary> {
    let job = vocab.encode(job_text)?;
    if job.is_empty() {
        return Err(Error::InvalidInput("job text is empty".into()));
    }
    let tokens = match compressor {
        Compressor::Rule => rule_summary(vocab, &job)?,
        Compressor::Model(model) => {
            let max_len = model.config.max_seq_len;
            let prompt = render_prompt_tokens(
                vocab,
                &job,
                None,
                PromptVariant::ExtractionOnly,
                max_len - 1,
            )?;
            let seq = model.greedy_decode(&prompt, max_len - prompt.len())?;
            strip_eos(&seq[prompt.len()..]).to_vec()
        }
    };
    let ratio = tokens.len() as f64 / job.len() as f64;
    Ok(Summary { tokens, ratio })
}

/// Share of the posting's requirement skills that appear in `summary`.
pub fn requirement_recall(vocab: &Vocabulary, job: &JobPosting, summary: &[u32]) -> f64 {
    let present: BTreeSet<usize> = summary.iter().filter_map(|&t| vocab.skill_of(t)).collect();
    let kept = job
        .requirements
        .iter()
        .filter(|r| present.contains(&r.skill))
        .count();
    kept as f64 / job.requirements.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplanationStatus {
    Ok,
    Malformed,
    Truncated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationOutput {
    pub text: String,
    pub status: ExplanationStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServeResult {
    pub fit: FitAssessment,
    pub explanation: Option<ExplanationOutput>,
    pub timings: Vec<StageTiming>,
    pub compressed_ratio: f64,
}

/// Loaded serving models. Read-only once built.
#[derive(Clone, Debug)]
pub struct Server {
    pub vocab: Vocabulary,
    pub compressor: Compressor,
    pub classifier: Option<EncoderClassifier>,
    pub explainer: Option<LanguageModel>,
}

impl Server {
    pub fn new(
        compressor: Compressor,
        classifier: Option<EncoderClassifier>,
        explainer: Option<LanguageModel>,
    ) -> Self {
        Self {
            vocab: Vocabulary::new(),
            compressor,
            classifier,
            explainer,
        }
    }

    /// Loads every checkpoint the config names.
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let compressor = match cfg.compression {
            CompressionMode::Rule => Compressor::Rule,
            CompressionMode::Model => {
                let path = cfg.summarizer_checkpoint.as_ref().ok_or_else(|| {
                    Error::config("compression", "model mode needs summarizer.checkpoint")
                })?;
                Compressor::Model(load_checkpoint(path)?.language_model()?)
            }
        };
        let classifier = cfg
            .classifier_checkpoint
            .as_ref()
            .map(|p| load_checkpoint(p)?.classifier())
            .transpose()?;
        let explainer = cfg
            .explainer_checkpoint
            .as_ref()
            .map(|p| load_checkpoint(p)?.language_model())
            .transpose()?;
        Ok(Self::new(compressor, classifier, explainer))
    }

    pub fn summarize(&self, job_text: &str) -> Result<Summary> {
        summarize_job(&self.vocab, job_text, &self.compressor)
    }

    /// Fit label for an already compressed job.
    pub fn fit_compressed(&self, job: &[u32], profile: &[u32]) -> Result<FitAssessment> {
        let model = self
            .classifier
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("no classifier loaded".into()))?;
        let label = classify_pair(model, &self.vocab, job, profile)?;
        Ok(FitAssessment::from_label(label))
    }

    /// Explanation for an already compressed job.
    pub fn explain_compressed(
        &self,
        job: &[u32],
        profile: &[u32],
    ) -> Result<(ExplanationOutput, Option<FitAssessment>)> {
        let model = self
            .explainer
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("no explainer loaded".into()))?;
        let max_len = model.config.max_seq_len;
        let prompt = render_prompt_tokens(
            &self.vocab,
            job,
            Some(profile),
            PromptVariant::Explanation,
            max_len - 1,
        )?;
        let seq = model.greedy_decode(&prompt, max_len - prompt.len())?;
        let out = &seq[prompt.len()..];
        let (status, fit) = match parse_explanation(&self.vocab, out) {
            Ok(p) => (
                ExplanationStatus::Ok,
                Some(FitAssessment::from_label(p.label)),
            ),
            Err(ParseFailure::Truncated) => (ExplanationStatus::Truncated, None),
            Err(ParseFailure::Malformed) => (ExplanationStatus::Malformed, None),
        };
        let body = if out.last() == Some(&EOS) {
            &out[..out.len() - 1]
        } else {
            out
        };
        Ok((
            ExplanationOutput {
                text: self.vocab.decode(body)?,
                status,
            },
            fit,
        ))
    }

    /// Summarizes the job and classifies the pair.
    pub fn fit(&self, job_text: &str, profile_text: &str) -> Result<ServeResult> {
        let t = Instant::now();
        let summary = self.summarize(job_text)?;
        let t_sum = t.elapsed().as_secs_f64();
        let profile = self.vocab.encode(profile_text)?;
        let t = Instant::now();
        let fit = self.fit_compressed(&summary.tokens, &profile)?;
        Ok(ServeResult {
            fit,
            explanation: None,
            timings: vec![
                StageTiming {
                    stage: "summarize".into(),
                    seconds: t_sum,
                },
                StageTiming {
                    stage: "classify".into(),
                    seconds: t.elapsed().as_secs_f64(),
                },
            ],
            compressed_ratio: summary.ratio,
        })
    }

    /// Summarizes the job and decodes an explanation. The fit comes from the
    /// classifier when one is loaded, else from the explanation's own
    /// `fit :` line; an unparseable explanation without a classifier
    /// reports Low and is flagged through its status.
    pub fn explain(&self, job_text: &str, profile_text: &str) -> Result<ServeResult> {
        let t = Instant::now();
        let summary = self.summarize(job_text)?;
        let mut timings = vec![StageTiming {
            stage: "summarize".into(),
            seconds: t.elapsed().as_secs_f64(),
        }];
        let profile = self.vocab.encode(profile_text)?;
        let t = Instant::now();
        let (explanation, parsed) = self.explain_compressed(&summary.tokens, &profile)?;
        timings.push(StageTiming {
            stage: "explain".into(),
            seconds: t.elapsed().as_secs_f64(),
        });
        let fit = match (&self.classifier, parsed) {
            (Some(_), _) => {
                let t = Instant::now();
                let fit = self.fit_compressed(&summary.tokens, &profile)?;
                timings.push(StageTiming {
                    stage: "classify".into(),
                    seconds: t.elapsed().as_secs_f64(),
                });
                fit
            }
            (None, Some(fit)) => fit,
            (None, None) => FitAssessment::from_label(crate::domain::FitLabel::Low),
        };
        Ok(ServeResult {
            fit,
            explanation: Some(explanation),
            timings,
            compressed_ratio: summary.ratio,
        })
    }
}

pub fn serve_fit(server: &Server, job_text: &str, profile_text: &str) -> Result<ServeResult> {
    server.fit(job_text, profile_text)
}

pub fn serve_explanation(
    server: &Server,
    job_text: &str,
    profile_text: &str,
) -> Result<ServeResult> {
    server.explain(job_text, profile_text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{gen_job, GeneratorConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rule_summary_keeps_requirements_and_is_a_fixed_point() {
        let vocab = Vocabulary::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..50 {
            let job = gen_job(&mut rng, &GeneratorConfig::default(), format!("j{i}")).unwrap();
            let s = summarize_job(&vocab, &job.raw_text(), &Compressor::Rule).unwrap();
            assert_eq!(vocab.decode(&s.tokens).unwrap(), job.requirements_text());
            assert_eq!(requirement_recall(&vocab, &job, &s.tokens), 1.0);
            let again = summarize_job(&vocab, &vocab.decode(&s.tokens).unwrap(), &Compressor::Rule)
                .unwrap();
            assert_eq!(again.tokens, s.tokens);
            assert_eq!(again.ratio, 1.0);
        }
    }

    #[test]
    fn no_noise_means_ratio_one() {
        let vocab = Vocabulary::new();
        let cfg = GeneratorConfig {
            noise_lines: (0, 0),
            ..GeneratorConfig::default()
        };
        let job = gen_job(&mut ChaCha8Rng::seed_from_u64(2), &cfg, "j").unwrap();
        let s = summarize_job(&vocab, &job.raw_text(), &Compressor::Rule).unwrap();
        assert_eq!(s.ratio, 1.0);
    }

    #[test]
    fn missing_models_are_errors() {
        let server = Server::new(Compressor::Rule, None, None);
        assert!(server.fit("required 2 python ;", "python 3 ;").is_err());
        assert!(server.explain("required 2 python ;", "python 3 ;").is_err());
        assert!(summarize_job(&server.vocab, "", &Compressor::Rule).is_err());
    }
}
