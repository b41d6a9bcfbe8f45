//! Synthetic job/profile fit domain: vocabulary, generators, the rule
//! oracle, prompt rendering, quality filtering and dataset assembly.

mod dataset;
mod gen;
mod oracle;
mod prompt;
mod vocab;

pub use dataset::{
    balanced_counts, check_record, label_histogram, oracle_record, oracle_records, prompt_parts,
    quality_filter, read_jsonl, read_records, stratified_sample, stratified_sample_counts,
    write_jsonl, write_records, Corpus, ExampleRecord, FilterOutcome, RejectReason, Source,
};
pub use gen::{
    gen_disjoint_profile, gen_job, gen_matched_profile, gen_profile, job_id, profile_id,
    GeneratorConfig, Importance, JobLine, JobPosting, MemberProfile, Requirement,
};
pub use oracle::{
    importance_weight, oracle_assess, Explanation, ExplanationLine, FitAssessment, FitLabel,
    Verdict, HIGH_THRESHOLD, MEDIUM_THRESHOLD,
};
pub use prompt::{
    explanation_tokens, extraction_target, pair_tokens, parse_explanation, parse_fit_label,
    render_prompt, render_prompt_tokens, tower_tokens, JobView, ParseFailure, ParsedExplanation,
    ParsedLine, PromptVariant, EXTRACTION_SECTIONS, SECTIONS,
};
pub use vocab::{Vocabulary, MAX_YEARS, NOISE_TEMPLATES, SKILL_NAMES, SPECIAL_WORDS};
