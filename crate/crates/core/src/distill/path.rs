use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::checkpoint::{save_checkpoint, Checkpoint, Provenance};
use super::train::{distill_explanation_model, train_sft_model, TrainConfig, TrainHistory};
use crate::domain::ExampleRecord;
use crate::error::{Error, Result};
use crate::eval::{eval_explanations, ExplanationEval, Report, EXPLANATION_COLUMNS};
use crate::models::{LanguageModel, ModelConfig, ModelRole};

/// Teacher of one stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageTeacher {
    /// The path's initial teacher.
    Initial,
    /// The student of the preceding stage.
    Previous,
    /// No teacher: plain SFT on the reference targets.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub teacher: StageTeacher,
    pub student: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillPath {
    /// Label such as `single 4L->1L`.
    pub name: String,
    pub stages: Vec<Stage>,
}

impl DistillPath {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config(
                "stages",
                format!("path `{}` has no stages", self.name),
            ));
        }
        if self.stages[0].teacher == StageTeacher::Previous {
            return Err(Error::config(
                "stages",
                format!("first stage of `{}` has no previous stage", self.name),
            ));
        }
        for s in &self.stages {
            s.student.validate()?;
            s.train.validate()?;
        }
        Ok(())
    }

    /// `L4->L2->L1` style chain of layer counts, starting at `teacher`.
    pub fn chain(&self, teacher: &ModelConfig) -> String {
        let mut parts = vec![format!("{}L", teacher.num_layers)];
        parts.extend(
            self.stages
                .iter()
                .map(|s| format!("{}L", s.student.num_layers)),
        );
        parts.join("->")
    }
}

/// Per-stage outcome of a path.
#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub eval: ExplanationEval,
}

#[derive(Clone, Debug)]
pub struct PathOutcome {
    pub name: String,
    pub stages: Vec<StageOutcome>,
}

impl PathOutcome {
    pub fn final_stage(&self) -> &StageOutcome {
        self.stages.last().expect("validated paths have stages")
    }
}

/// Evaluation inputs shared by every path: prompts and the initial
/// teacher's greedy decodes of them.
pub struct EvalSet {
    pub prompts: Vec<Vec<u32>>,
    pub references: Vec<Vec<u32>>,
    pub max_new: usize,
}

impl EvalSet {
    pub fn from_teacher(
        teacher: &LanguageModel,
        prompts: Vec<Vec<u32>>,
        max_new: usize,
    ) -> Result<Self> {
        let references = prompts
            .iter()
            .map(|p| Ok(teacher.greedy_decode(p, max_new)?[p.len()..].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            prompts,
            references,
            max_new,
        })
    }
}

/// Runs the stages in order. Each stage checkpoint is saved under
/// `out_dir` (when given) as soon as it exists, so a failing stage leaves
/// the earlier ones on disk.
pub fn run_path(
    path: &DistillPath,
    teacher: &LanguageModel,
    train: &[ExampleRecord],
    kd_eval: &[ExampleRecord],
    eval: &EvalSet,
    out_dir: Option<&Path>,
) -> Result<PathOutcome> {
    path.validate()?;
    let mut stages: Vec<StageOutcome> = Vec::with_capacity(path.stages.len());
    let mut previous: Option<LanguageModel> = None;
    for (i, stage) in path.stages.iter().enumerate() {
        info!(
            "path `{}` stage {}: {} student",
            path.name,
            i + 1,
            stage.student.label()
        );
        let mut student = LanguageModel::init(stage.student.clone(), ModelRole::Student)?;
        let history = match stage.teacher {
            StageTeacher::None => train_sft_model(&mut student, train, &stage.train)?,
            StageTeacher::Initial => {
                distill_explanation_model(teacher, &mut student, train, kd_eval, &stage.train)?
            }
            StageTeacher::Previous => {
                let prev = previous.as_ref().expect("validated: previous stage exists");
                distill_explanation_model(prev, &mut student, train, kd_eval, &stage.train)?
            }
        };
        let provenance = Provenance {
            path: path.name.clone(),
            stage: i + 1,
            config_digest: stage.train.digest(),
            final_loss: history.final_loss(),
        };
        let checkpoint = Checkpoint::from_language_model(&student, provenance);
        if let Some(dir) = out_dir {
            save_checkpoint(&checkpoint, &dir.join(format!("stage{}.ckpt", i + 1)))?;
        }
        let scores = eval_explanations(&student, &eval.prompts, &eval.references, eval.max_new)?;
        stages.push(StageOutcome {
            checkpoint,
            history,
            eval: scores,
        });
        previous = Some(student);
    }
    Ok(PathOutcome {
        name: path.name.clone(),
        stages,
    })
}

/// One row per path: the final student's NLL and ROUGE F1s.
pub fn path_report(
    teacher: &ModelConfig,
    paths: &[(&DistillPath, &PathOutcome)],
) -> Result<Report> {
    let mut report = Report::new(&EXPLANATION_COLUMNS)?;
    for (path, outcome) in paths {
        let last = path.stages.last().expect("validated");
        let s = &outcome.final_stage().eval.scores;
        let divergence = match last.teacher {
            StageTeacher::None => "none".to_string(),
            _ => last.train.divergence.to_string(),
        };
        report.push_values([
            ("path", Value::from(path.name.clone())),
            ("teacher", Value::from(teacher.label())),
            ("student", Value::from(last.student.label())),
            ("divergence", Value::from(divergence)),
            ("nll", Value::from(s.mean_nll)),
            ("rouge1", Value::from(s.rouge1.f1)),
            ("rouge2", Value::from(s.rouge2.f1)),
            ("rougeL", Value::from(s.rouge_l.f1)),
        ])?;
    }
    Ok(report)
}
