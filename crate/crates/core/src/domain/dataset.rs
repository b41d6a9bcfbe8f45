use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::gen::{
    gen_disjoint_profile, gen_job, gen_matched_profile, job_id, profile_id, GeneratorConfig,
    JobPosting, MemberProfile,
};
use super::oracle::{oracle_assess, FitLabel};
use super::prompt::{
    explanation_tokens, parse_explanation, render_prompt, JobView, ParseFailure, PromptVariant,
};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::models::{EOS, SEP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Oracle,
    TeacherModel,
    Filtered,
}

/// One training or evaluation example. Field order is the on-disk order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    pub source: Source,
    pub label: FitLabel,
    pub coverage: f64,
    pub prompt_tokens: Vec<u32>,
    pub target_tokens: Vec<u32>,
}

impl ExampleRecord {
    pub fn pair_id(job: &str, profile: &str) -> String {
        format!("{job}.{profile}")
    }

    /// `(job id, profile id)` encoded in the record id.
    pub fn refs(&self) -> Result<(&str, &str)> {
        self.id.split_once('.').ok_or_else(|| {
            Error::parse(
                "record id",
                format!("`{}` has no job.profile form", self.id),
            )
        })
    }

    pub fn len(&self) -> usize {
        self.prompt_tokens.len() + self.target_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Prompt followed by target.
    pub fn sequence(&self) -> Vec<u32> {
        let mut s = self.prompt_tokens.clone();
        s.extend_from_slice(&self.target_tokens);
        s
    }

    pub fn ends_with_eos(&self) -> bool {
        self.target_tokens.last() == Some(&EOS)
    }
}

/// Jobs and profiles addressed by id, plus the pairs drawn from them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub jobs: BTreeMap<String, JobPosting>,
    pub profiles: BTreeMap<String, MemberProfile>,
    pub pairs: Vec<(String, String)>,
}

impl Corpus {
    pub fn job(&self, id: &str) -> Result<&JobPosting> {
        self.jobs
            .get(id)
            .ok_or_else(|| Error::UnknownReference(id.to_string()))
    }

    pub fn profile(&self, id: &str) -> Result<&MemberProfile> {
        self.profiles
            .get(id)
            .ok_or_else(|| Error::UnknownReference(id.to_string()))
    }

    pub fn pair(&self, record: &ExampleRecord) -> Result<(&JobPosting, &MemberProfile)> {
        let (j, p) = record.refs()?;
        Ok((self.job(j)?, self.profile(p)?))
    }

    fn push(&mut self, job: JobPosting, profile: MemberProfile) {
        self.pairs.push((job.id.clone(), profile.id.clone()));
        self.jobs.insert(job.id.clone(), job);
        self.profiles.insert(profile.id.clone(), profile);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    /// The pairs the records refer to, in record order.
    pub fn select(&self, records: &[ExampleRecord]) -> Result<Corpus> {
        let mut out = Corpus::default();
        for r in records {
            let (job, profile) = self.pair(r)?;
            out.push(job.clone(), profile.clone());
        }
        Ok(out)
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `count` fresh job/profile pairs. Ids start at `first_id` so corpora
    /// built for different splits never collide. Every `negative_every`-th
    /// pair (if nonzero) uses a profile disjoint from the job.
    pub fn generate<R: Rng + ?Sized>(
        rng: &mut R,
        config: &GeneratorConfig,
        count: usize,
        first_id: usize,
        negative_every: usize,
    ) -> Result<Self> {
        let mut corpus = Corpus::default();
        corpus.extend(rng, config, count, first_id, negative_every)?;
        Ok(corpus)
    }

    pub fn extend<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        config: &GeneratorConfig,
        count: usize,
        first_id: usize,
        negative_every: usize,
    ) -> Result<()> {
        for i in first_id..first_id + count {
            let job = gen_job(rng, config, job_id(i))?;
            let profile =
                if negative_every > 0 && (i - first_id) % negative_every == negative_every - 1 {
                    gen_disjoint_profile(rng, config, &job, profile_id(i))?
                } else {
                    gen_matched_profile(rng, config, &job, profile_id(i))?
                };
            self.push(job, profile);
        }
        Ok(())
    }

    /// Merges another corpus; ids must not collide.
    pub fn merge(&mut self, other: Corpus) -> Result<()> {
        for (j, p) in other.pairs {
            if self.jobs.contains_key(&j) || self.profiles.contains_key(&p) {
                return Err(Error::InvalidInput(format!("duplicate pair {j}.{p}")));
            }
            let job = other.jobs[&j].clone();
            let profile = other.profiles[&p].clone();
            self.push(job, profile);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer(&mut w, self).map_err(|e| Error::parse("corpus", e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(f))
            .map_err(|e| Error::parse("corpus", e.to_string()))
    }
}

/// Oracle-labelled explanation record of one pair.
pub fn oracle_record(
    vocab: &Vocabulary,
    job: &JobPosting,
    profile: &MemberProfile,
    view: JobView,
    max_seq_len: usize,
) -> Result<ExampleRecord> {
    let (fit, explanation) = oracle_assess(job, profile);
    let target = explanation_tokens(vocab, &explanation)?;
    let limit = max_seq_len.saturating_sub(target.len());
    let prompt = render_prompt(vocab, job, profile, view, PromptVariant::Explanation, limit)?;
    Ok(ExampleRecord {
        id: ExampleRecord::pair_id(&job.id, &profile.id),
        source: Source::Oracle,
        label: fit.label,
        coverage: fit.coverage,
        prompt_tokens: prompt,
        target_tokens: target,
    })
}

/// Oracle-labelled explanation records for every pair of the corpus.
pub fn oracle_records(
    vocab: &Vocabulary,
    corpus: &Corpus,
    view: JobView,
    max_seq_len: usize,
) -> Result<Vec<ExampleRecord>> {
    corpus
        .pairs
        .iter()
        .map(|(j, p)| oracle_record(vocab, corpus.job(j)?, corpus.profile(p)?, view, max_seq_len))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    HallucinatedSkill,
    LabelMismatch,
    Truncated,
    Malformed,
}

impl RejectReason {
    pub fn name(self) -> &'static str {
        match self {
            RejectReason::HallucinatedSkill => "hallucinated-skill",
            RejectReason::LabelMismatch => "label-mismatch",
            RejectReason::Truncated => "truncated",
            RejectReason::Malformed => "malformed",
        }
    }
}

impl From<ParseFailure> for RejectReason {
    fn from(f: ParseFailure) -> Self {
        match f {
            ParseFailure::Truncated => RejectReason::Truncated,
            ParseFailure::Malformed => RejectReason::Malformed,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct FilterOutcome {
    pub kept: Vec<ExampleRecord>,
    pub rejected: Vec<(ExampleRecord, RejectReason)>,
}

/// First rule a record violates, if any.
pub fn check_record(
    vocab: &Vocabulary,
    corpus: &Corpus,
    record: &ExampleRecord,
) -> Result<Option<RejectReason>> {
    let (job, profile) = corpus.pair(record)?;
    if !record.ends_with_eos() {
        return Ok(Some(RejectReason::Truncated));
    }
    let parsed = match parse_explanation(vocab, &record.target_tokens) {
        Ok(p) => p,
        Err(f) => return Ok(Some(f.into())),
    };
    if parsed
        .lines
        .iter()
        .any(|l| job.requirement_for(l.skill).is_none())
    {
        return Ok(Some(RejectReason::HallucinatedSkill));
    }
    let (fit, _) = oracle_assess(job, profile);
    if record.label != fit.label || parsed.label != record.label {
        return Ok(Some(RejectReason::LabelMismatch));
    }
    Ok(None)
}

/// Keeps records that pass every rule; rejected records carry the reason.
pub fn quality_filter(
    vocab: &Vocabulary,
    records: &[ExampleRecord],
    corpus: &Corpus,
) -> Result<FilterOutcome> {
    let mut out = FilterOutcome::default();
    for r in records {
        match check_record(vocab, corpus, r)? {
            None => out.kept.push(r.clone()),
            Some(reason) => out.rejected.push((r.clone(), reason)),
        }
    }
    Ok(out)
}

/// Exactly `per_category` records of each label, chosen at random.
pub fn stratified_sample<R: Rng + ?Sized>(
    pool: &[ExampleRecord],
    per_category: usize,
    rng: &mut R,
) -> Result<Vec<ExampleRecord>> {
    stratified_sample_counts(pool, [per_category; 3], rng)
}

/// Per-category counts `[low, medium, high]` summing to `total`, as equal
/// as possible; the remainder goes to the lowest categories.
pub fn balanced_counts(total: usize) -> [usize; 3] {
    let base = total / 3;
    let rest = total % 3;
    [
        base + usize::from(rest > 0),
        base + usize::from(rest > 1),
        base,
    ]
}

/// `counts[label.index()]` records of each label, chosen at random.
pub fn stratified_sample_counts<R: Rng + ?Sized>(
    pool: &[ExampleRecord],
    counts: [usize; 3],
    rng: &mut R,
) -> Result<Vec<ExampleRecord>> {
    let mut out = Vec::with_capacity(counts.iter().sum());
    for label in FitLabel::ALL {
        let needed = counts[label.index()];
        let mut idx: Vec<usize> = (0..pool.len())
            .filter(|&i| pool[i].label == label)
            .collect();
        if idx.len() < needed {
            return Err(Error::InsufficientPool {
                category: label.to_string(),
                needed,
                available: idx.len(),
            });
        }
        idx.shuffle(rng);
        let mut chosen = idx[..needed].to_vec();
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|i| pool[i].clone()));
    }
    out.shuffle(rng);
    Ok(out)
}

/// Label histogram `[low, medium, high]`.
pub fn label_histogram(records: &[ExampleRecord]) -> [usize; 3] {
    let mut h = [0; 3];
    for r in records {
        h[r.label.index()] += 1;
    }
    h
}

/// Splits a prompt into the job and profile token spans.
pub fn prompt_parts<'a>(vocab: &Vocabulary, prompt: &'a [u32]) -> Result<(&'a [u32], &'a [u32])> {
    let job_kw = vocab.id("job")?;
    let profile_kw = vocab.id("profile")?;
    let colon = vocab.id(":")?;
    let find = |kw: u32, from: usize| {
        (from..prompt.len().saturating_sub(1)).find(|&i| prompt[i] == kw && prompt[i + 1] == colon)
    };
    let bad = || Error::parse("prompt", "missing job or profile section");
    let j = find(job_kw, 0).ok_or_else(bad)?;
    let p = find(profile_kw, j + 2).ok_or_else(bad)?;
    let end = prompt[p + 2..]
        .iter()
        .position(|&t| t == SEP || t == vocab.id("rating").unwrap_or(SEP))
        .ok_or_else(bad)?;
    Ok((&prompt[j + 2..p], &prompt[p + 2..p + 2 + end]))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::parse("jsonl row", e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| {
            Error::parse(format!("{} line {}", path.display(), n + 1), e.to_string())
        })?);
    }
    Ok(rows)
}

pub fn write_records(path: &Path, records: &[ExampleRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_records(path: &Path) -> Result<Vec<ExampleRecord>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (Vocabulary, Corpus, Vec<ExampleRecord>) {
        let v = Vocabulary::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Corpus::generate(&mut rng, &GeneratorConfig::default(), n, 0, 0).unwrap();
        let r = oracle_records(&v, &c, JobView::Compressed, 256).unwrap();
        (v, c, r)
    }

    #[test]
    fn oracle_records_pass_filter() {
        let (v, c, r) = setup(60);
        let out = quality_filter(&v, &r, &c).unwrap();
        assert_eq!(out.kept.len(), 60);
        let again = quality_filter(&v, &out.kept, &c).unwrap();
        assert_eq!(again.kept, out.kept);
    }

    #[test]
    fn filter_reasons() {
        let (v, c, r) = setup(10);
        let mut fake = r[0].clone();
        let (job, _) = c.pair(&fake).unwrap();
        let foreign = (0..10).find(|&s| job.requirement_for(s).is_none()).unwrap();
        fake.target_tokens[0] = v.skill_id(foreign);
        assert_eq!(
            check_record(&v, &c, &fake).unwrap(),
            Some(RejectReason::HallucinatedSkill)
        );

        let mut wrong = r[0].clone();
        wrong.label = if wrong.label == FitLabel::High {
            FitLabel::Low
        } else {
            FitLabel::High
        };
        assert_eq!(
            check_record(&v, &c, &wrong).unwrap(),
            Some(RejectReason::LabelMismatch)
        );

        let mut cut = r[0].clone();
        cut.target_tokens.pop();
        assert_eq!(
            check_record(&v, &c, &cut).unwrap(),
            Some(RejectReason::Truncated)
        );

        let mut orphan = r[0].clone();
        orphan.id = "j99999.m99999".into();
        assert!(matches!(
            check_record(&v, &c, &orphan),
            Err(Error::UnknownReference(_))
        ));
    }

    #[test]
    fn stratified_counts() {
        let (_, _, r) = setup(300);
        let s = stratified_sample(&r, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(label_histogram(&s), [10, 10, 10]);
        assert!(stratified_sample(&r, 0, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap()
            .is_empty());
        let err = stratified_sample(&r, 10_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(err, Error::InsufficientPool { .. }));
    }

    #[test]
    fn prompt_parts_recover_job_and_profile() {
        let (v, c, r) = setup(5);
        for rec in &r {
            let (job, profile) = c.pair(rec).unwrap();
            let (jt, pt) = prompt_parts(&v, &rec.prompt_tokens).unwrap();
            assert_eq!(v.decode(jt).unwrap(), job.requirements_text());
            assert_eq!(v.decode(pt).unwrap(), profile.raw_text());
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let (_, _, r) = setup(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_records(&path, &r).unwrap();
        assert_eq!(read_records(&path).unwrap(), r);
        let first = std::fs::read_to_string(&path).unwrap();
        let line = first.lines().next().unwrap();
        assert!(line.starts_with("{\"id\":"));
        let order = [
            "\"id\"",
            "\"source\"",
            "\"label\"",
            "\"coverage\"",
            "\"prompt_tokens\"",
            "\"target_tokens\"",
        ];
        let pos: Vec<usize> = order.iter().map(|k| line.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }
}
