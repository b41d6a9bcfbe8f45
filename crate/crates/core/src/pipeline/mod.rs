//! Serving surface: job compression, fit classification, explanation,
//! benchmarking, configuration and run orchestration.

mod bench;
mod config;
mod run;
mod serve;

pub use bench::{
    bench, bench_report, percentile, BenchRequest, ModuleStats, BENCH_COLUMNS, MODULES,
};
pub use config::{
    BenchConfig, ClassifierConfig, CompressionMode, DataConfig, LabelSource, ModelShape, Optim,
    PipelineConfig,
};
pub use run::{
    balanced_set, classification_labels, classification_report_table, cls_examples, datagen,
    distill_student, mixed_cls_examples, run_paths, train_classifiers, train_summarizer,
    train_teacher, view_agreement, ClsRun, DataBundle, RunManifest, BENCH_FIRST,
    CLASSIFIER_VARIANTS, CLS_FIRST, CLS_HELDOUT_FIRST, DATA_FILES, HELDOUT_FIRST, SEED_FIRST,
};
pub use serve::{
    requirement_recall, rule_summary, serve_explanation, serve_fit, summarize_job, Compressor,
    ExplanationOutput, ExplanationStatus, ServeResult, Server, StageTiming, Summary,
};
