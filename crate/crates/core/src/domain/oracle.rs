use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::gen::{Importance, JobPosting, MemberProfile};
use crate::error::{Error, Result};

pub const HIGH_THRESHOLD: f64 = 0.75;
pub const MEDIUM_THRESHOLD: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FitLabel {
    Low,
    Medium,
    High,
}

impl FitLabel {
    pub const ALL: [FitLabel; 3] = [FitLabel::Low, FitLabel::Medium, FitLabel::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("category index {i} out of range")))
    }

    pub fn from_coverage(coverage: f64) -> Self {
        if coverage >= HIGH_THRESHOLD {
            FitLabel::High
        } else if coverage >= MEDIUM_THRESHOLD {
            FitLabel::Medium
        } else {
            FitLabel::Low
        }
    }

    /// Category midpoint on the [0, 1] rating scale.
    pub fn rating(self) -> f64 {
        match self {
            FitLabel::Low => 1.0 / 6.0,
            FitLabel::Medium => 0.5,
            FitLabel::High => 5.0 / 6.0,
        }
    }

    /// Lowercase word used in rendered text.
    pub fn word(self) -> &'static str {
        match self {
            FitLabel::Low => "low",
            FitLabel::Medium => "medium",
            FitLabel::High => "high",
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        match w {
            "low" => Some(FitLabel::Low),
            "medium" => Some(FitLabel::Medium),
            "high" => Some(FitLabel::High),
            _ => None,
        }
    }
}

impl fmt::Display for FitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitLabel::Low => "Low",
            FitLabel::Medium => "Medium",
            FitLabel::High => "High",
        })
    }
}

impl FromStr for FitLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::from_word(&s.to_ascii_lowercase())
            .ok_or_else(|| Error::parse("fit label", s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Met,
    Partial,
    Missing,
}

impl Verdict {
    pub fn judge(have: u32, need: u32) -> Self {
        if have >= need {
            Verdict::Met
        } else if have > 0 {
            Verdict::Partial
        } else {
            Verdict::Missing
        }
    }

    pub fn score(self) -> f64 {
        match self {
            Verdict::Met => 1.0,
            Verdict::Partial => 0.5,
            Verdict::Missing => 0.0,
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            Verdict::Met => "met",
            Verdict::Partial => "partial",
            Verdict::Missing => "missing",
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        match w {
            "met" => Some(Verdict::Met),
            "partial" => Some(Verdict::Partial),
            "missing" => Some(Verdict::Missing),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitAssessment {
    pub label: FitLabel,
    pub rating: f64,
    pub coverage: f64,
}

impl FitAssessment {
    pub fn from_coverage(coverage: f64) -> Self {
        let label = FitLabel::from_coverage(coverage);
        Self {
            label,
            rating: label.rating(),
            coverage,
        }
    }

    pub fn from_label(label: FitLabel) -> Self {
        Self {
            label,
            rating: label.rating(),
            coverage: label.rating(),
        }
    }
}

/// One explanation line: the requirement it refers to and the verdict.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExplanationLine {
    pub skill: usize,
    pub need: u32,
    pub have: u32,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Explanation {
    pub lines: Vec<ExplanationLine>,
    pub label: FitLabel,
}

pub fn importance_weight(importance: Importance) -> f64 {
    match importance {
        Importance::Required => 2.0,
        Importance::Preferred => 1.0,
    }
}

/// Rule-based fit oracle.
pub fn oracle_assess(job: &JobPosting, profile: &MemberProfile) -> (FitAssessment, Explanation) {
    let mut lines = Vec::with_capacity(job.requirements.len());
    let (mut got, mut total) = (0.0, 0.0);
    for req in &job.requirements {
        let have = profile.years_for(req.skill);
        let verdict = Verdict::judge(have, req.min_years);
        let w = importance_weight(req.importance);
        got += w * verdict.score();
        total += w;
        lines.push(ExplanationLine {
            skill: req.skill,
            need: req.min_years,
            have,
            verdict,
        });
    }
    let coverage = if total > 0.0 { got / total } else { 0.0 };
    let fit = FitAssessment::from_coverage(coverage);
    (
        fit,
        Explanation {
            lines,
            label: fit.label,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::gen::Requirement;

    fn job(reqs: &[(usize, u32, Importance)]) -> JobPosting {
        JobPosting::from_parts(
            "j0",
            reqs.iter()
                .map(|&(skill, min_years, importance)| Requirement {
                    skill,
                    min_years,
                    importance,
                })
                .collect(),
            vec![],
        )
    }

    #[test]
    fn full_and_empty_coverage() {
        let j = job(&[(0, 2, Importance::Required), (3, 4, Importance::Preferred)]);
        let p = MemberProfile::from_parts("m0", vec![(0, 5), (3, 4)]);
        let (fit, exp) = oracle_assess(&j, &p);
        assert_eq!(fit.coverage, 1.0);
        assert_eq!(fit.label, FitLabel::High);
        assert_eq!(exp.lines.len(), 2);

        let empty = MemberProfile::from_parts("m1", vec![]);
        let (fit, _) = oracle_assess(&j, &empty);
        assert_eq!(fit.coverage, 0.0);
        assert_eq!(fit.label, FitLabel::Low);
    }

    #[test]
    fn weighted_two_thirds_is_medium() {
        let j = job(&[(1, 3, Importance::Required), (2, 1, Importance::Preferred)]);
        let p = MemberProfile::from_parts("m0", vec![(1, 3)]);
        let (fit, _) = oracle_assess(&j, &p);
        assert!((fit.coverage - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(fit.label, FitLabel::Medium);
        assert_eq!(fit.rating, 0.5);
    }

    #[test]
    fn verdict_rule() {
        assert_eq!(Verdict::judge(3, 3), Verdict::Met);
        assert_eq!(Verdict::judge(1, 3), Verdict::Partial);
        assert_eq!(Verdict::judge(0, 3), Verdict::Missing);
        assert_eq!(Verdict::judge(0, 0), Verdict::Met);
    }

    #[test]
    fn thresholds() {
        assert_eq!(FitLabel::from_coverage(0.75), FitLabel::High);
        assert_eq!(FitLabel::from_coverage(0.7499), FitLabel::Medium);
        assert_eq!(FitLabel::from_coverage(0.4), FitLabel::Medium);
        assert_eq!(FitLabel::from_coverage(0.39), FitLabel::Low);
    }
}
