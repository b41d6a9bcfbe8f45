use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, MAX_YEARS, NOISE_TEMPLATES, SKILL_NAMES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Importance {
    Required,
    Preferred,
}

impl Importance {
    pub fn word(self) -> &'static str {
        match self {
            Importance::Required => "required",
            Importance::Preferred => "preferred",
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        match w {
            "required" => Some(Importance::Required),
            "preferred" => Some(Importance::Preferred),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Requirement {
    pub skill: usize,
    pub min_years: u32,
    pub importance: Importance,
}

/// A line of job text, in posting order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobLine {
    /// Index into `requirements`.
    Requirement(usize),
    /// Index into the noise template table.
    Noise(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobPosting {
    pub id: String,
    pub requirements: Vec<Requirement>,
    pub lines: Vec<JobLine>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberProfile {
    pub id: String,
    /// `(skill, years)` sorted by skill.
    pub skills: Vec<(usize, u32)>,
}

/// Ranges are inclusive `(lo, hi)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub catalog_size: usize,
    pub requirements: (usize, usize),
    pub min_years: (u32, u32),
    pub noise_lines: (usize, usize),
    pub profile_skills: (usize, usize),
    pub profile_years: (u32, u32),
    /// Probability that a requirement is `required` rather than `preferred`.
    pub required_prob: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            catalog_size: 10,
            requirements: (1, 4),
            min_years: (1, 5),
            noise_lines: (5, 8),
            profile_skills: (0, 5),
            profile_years: (1, 7),
            required_prob: 0.6,
        }
    }
}

fn check_range<T: PartialOrd + std::fmt::Debug>(field: &str, r: (T, T)) -> Result<()> {
    if r.0 > r.1 {
        return Err(Error::config(field, format!("empty range {:?}", r)));
    }
    Ok(())
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.catalog_size == 0 || self.catalog_size > SKILL_NAMES.len() {
            return Err(Error::config(
                "catalog_size",
                format!(
                    "must be in 1..={}, got {}",
                    SKILL_NAMES.len(),
                    self.catalog_size
                ),
            ));
        }
        check_range("requirements", self.requirements)?;
        check_range("min_years", self.min_years)?;
        check_range("noise_lines", self.noise_lines)?;
        check_range("profile_skills", self.profile_skills)?;
        check_range("profile_years", self.profile_years)?;
        if self.requirements.0 == 0 {
            return Err(Error::config(
                "requirements",
                "a job needs at least one requirement",
            ));
        }
        if self.requirements.1 > self.catalog_size {
            return Err(Error::config(
                "requirements",
                format!(
                    "maximum {} exceeds catalog size {}",
                    self.requirements.1, self.catalog_size
                ),
            ));
        }
        if self.profile_skills.1 > self.catalog_size {
            return Err(Error::config(
                "profile_skills",
                format!(
                    "maximum {} exceeds catalog size {}",
                    self.profile_skills.1, self.catalog_size
                ),
            ));
        }
        if self.min_years.1 > 10 {
            return Err(Error::config(
                "min_years",
                "minimum years must lie in 0..=10",
            ));
        }
        if self.profile_years.1 > MAX_YEARS {
            return Err(Error::config(
                "profile_years",
                format!("years must lie in 0..={MAX_YEARS}"),
            ));
        }
        if !(0.0..=1.0).contains(&self.required_prob) {
            return Err(Error::config("required_prob", "must be a probability"));
        }
        Ok(())
    }
}

impl JobPosting {
    /// Builds a posting with requirement lines first, then the given noise lines.
    pub fn from_parts(
        id: impl Into<String>,
        requirements: Vec<Requirement>,
        noise: Vec<usize>,
    ) -> Self {
        let lines = (0..requirements.len())
            .map(JobLine::Requirement)
            .chain(noise.into_iter().map(JobLine::Noise))
            .collect();
        Self {
            id: id.into(),
            requirements,
            lines,
        }
    }

    pub fn requirement_text(req: &Requirement) -> String {
        format!(
            "{} {} {} ;",
            req.importance.word(),
            req.min_years,
            SKILL_NAMES[req.skill]
        )
    }

    fn line_text(&self, line: JobLine) -> String {
        match line {
            JobLine::Requirement(i) => Self::requirement_text(&self.requirements[i]),
            JobLine::Noise(t) => format!("{} ;", NOISE_TEMPLATES[t]),
        }
    }

    /// All lines in posting order; every line ends with `;`.
    pub fn raw_text(&self) -> String {
        self.lines
            .iter()
            .map(|&l| self.line_text(l))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Requirement lines only, in posting order.
    pub fn requirements_text(&self) -> String {
        self.lines
            .iter()
            .filter(|l| matches!(l, JobLine::Requirement(_)))
            .map(|&l| self.line_text(l))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn tokens(&self, vocab: &Vocabulary) -> Result<Vec<u32>> {
        vocab.encode(&self.raw_text())
    }

    pub fn requirement_for(&self, skill: usize) -> Option<&Requirement> {
        self.requirements.iter().find(|r| r.skill == skill)
    }

    pub fn noise_count(&self) -> usize {
        self.lines
            .iter()
            .filter(|l| matches!(l, JobLine::Noise(_)))
            .count()
    }
}

impl MemberProfile {
    pub fn from_parts(id: impl Into<String>, mut skills: Vec<(usize, u32)>) -> Self {
        skills.sort_unstable();
        Self {
            id: id.into(),
            skills,
        }
    }

    pub fn years_for(&self, skill: usize) -> u32 {
        self.skills.iter().find(|s| s.0 == skill).map_or(0, |s| s.1)
    }

    /// `python 3 ; sql 5 ;` in catalog order, or `none` when empty.
    pub fn raw_text(&self) -> String {
        if self.skills.is_empty() {
            return "none".to_string();
        }
        self.skills
            .iter()
            .map(|&(s, y)| format!("{} {} ;", SKILL_NAMES[s], y))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn tokens(&self, vocab: &Vocabulary) -> Result<Vec<u32>> {
        vocab.encode(&self.raw_text())
    }
}

pub fn job_id(index: usize) -> String {
    format!("j{index:05}")
}

pub fn profile_id(index: usize) -> String {
    format!("m{index:05}")
}

/// Random job posting: distinct requirement skills, noise lines from the
/// benefit templates, all lines shuffled together.
pub fn gen_job<R: Rng + ?Sized>(
    rng: &mut R,
    config: &GeneratorConfig,
    id: impl Into<String>,
) -> Result<JobPosting> {
    config.validate()?;
    let n_req = rng.gen_range(config.requirements.0..=config.requirements.1);
    let n_noise = rng.gen_range(config.noise_lines.0..=config.noise_lines.1);
    let mut skills: Vec<usize> = (0..config.catalog_size).collect();
    skills.shuffle(rng);
    let requirements = skills[..n_req]
        .iter()
        .map(|&skill| Requirement {
            skill,
            min_years: rng.gen_range(config.min_years.0..=config.min_years.1),
            importance: if rng.gen_bool(config.required_prob) {
                Importance::Required
            } else {
                Importance::Preferred
            },
        })
        .collect();
    let noise = (0..n_noise)
        .map(|_| rng.gen_range(0..NOISE_TEMPLATES.len()))
        .collect();
    let mut job = JobPosting::from_parts(id, requirements, noise);
    job.lines.shuffle(rng);
    Ok(job)
}

/// Random profile independent of any job.
pub fn gen_profile<R: Rng + ?Sized>(
    rng: &mut R,
    config: &GeneratorConfig,
    id: impl Into<String>,
) -> Result<MemberProfile> {
    config.validate()?;
    let n = rng.gen_range(config.profile_skills.0..=config.profile_skills.1);
    let mut skills: Vec<usize> = (0..config.catalog_size).collect();
    skills.shuffle(rng);
    let picked = skills[..n]
        .iter()
        .map(|&s| {
            (
                s,
                rng.gen_range(config.profile_years.0..=config.profile_years.1),
            )
        })
        .collect();
    Ok(MemberProfile::from_parts(id, picked))
}

/// Profile drawn relative to a job so that every fit level is reachable:
/// a per-profile strength decides how often each requirement is met, and
/// unmet requirements are split between partial experience and absence.
/// A few unrelated skills are added as distractors.
pub fn gen_matched_profile<R: Rng + ?Sized>(
    rng: &mut R,
    config: &GeneratorConfig,
    job: &JobPosting,
    id: impl Into<String>,
) -> Result<MemberProfile> {
    config.validate()?;
    let strength = [0.1, 0.5, 0.9][rng.gen_range(0..3)];
    let max_years = config.profile_years.1.max(1);
    let mut skills = Vec::new();
    for req in &job.requirements {
        if rng.gen_bool(strength) {
            let lo = req.min_years.max(1).min(max_years);
            skills.push((req.skill, rng.gen_range(lo..=max_years.max(lo))));
        } else if req.min_years > 1 && rng.gen_bool(0.5) {
            skills.push((req.skill, rng.gen_range(1..req.min_years)));
        }
    }
    let mut others: Vec<usize> = (0..config.catalog_size)
        .filter(|s| job.requirement_for(*s).is_none())
        .collect();
    others.shuffle(rng);
    let extra = rng.gen_range(0..=2usize).min(others.len());
    for &s in &others[..extra] {
        skills.push((s, rng.gen_range(config.profile_years.0.max(1)..=max_years)));
    }
    Ok(MemberProfile::from_parts(id, skills))
}

/// Profile sharing no skill with the job (coverage 0).
pub fn gen_disjoint_profile<R: Rng + ?Sized>(
    rng: &mut R,
    config: &GeneratorConfig,
    job: &JobPosting,
    id: impl Into<String>,
) -> Result<MemberProfile> {
    config.validate()?;
    let mut others: Vec<usize> = (0..config.catalog_size)
        .filter(|s| job.requirement_for(*s).is_none())
        .collect();
    others.shuffle(rng);
    let n = rng
        .gen_range(config.profile_skills.0..=config.profile_skills.1)
        .min(others.len());
    let skills = others[..n]
        .iter()
        .map(|&s| {
            (
                s,
                rng.gen_range(config.profile_years.0.max(1)..=config.profile_years.1.max(1)),
            )
        })
        .collect();
    Ok(MemberProfile::from_parts(id, skills))
}
