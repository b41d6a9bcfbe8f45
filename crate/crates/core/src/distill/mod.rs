//! Teacher SFT, white-box explanation distillation, teacher labelling,
//! classifier training, multi-stage paths and checkpoints.

mod checkpoint;
mod classifier;
mod labels;
mod optim;
mod path;
mod train;

pub use checkpoint::{
    config_digest, load_checkpoint, load_checkpoint_with_warnings, save_checkpoint, Checkpoint,
    ModelSpec, Provenance, FORMAT_MAJOR, FORMAT_MINOR, MAGIC,
};
pub use classifier::{
    classify_pair, distill_classifier, evaluate_classifier, predict_label, train_classifier,
    ClsEpoch, ClsExample,
};
pub use labels::{generate_labels, parse_rate, LabelMode, LabeledRecord};
pub use optim::{AdamW, ADAM_EPS, BETA1, BETA2};
pub use path::{
    path_report, run_path, DistillPath, EvalSet, PathOutcome, Stage, StageOutcome, StageTeacher,
};
pub use train::{
    corpus_loss, distill_explanation, distill_explanation_model, mean_kd, target_logits, train_sft,
    train_sft_model, EpochStats, TeacherTargets, TrainConfig, TrainHistory,
};
