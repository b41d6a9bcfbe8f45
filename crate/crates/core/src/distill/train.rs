use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{config_digest, Checkpoint, Provenance};
use super::optim::AdamW;
use crate::domain::ExampleRecord;
use crate::error::{Error, Result};
use crate::models::{LanguageModel, ModelConfig, ModelRole};
use crate::numerics::{Tape, Tensor};
use crate::objectives::{
    kd_loss_grad, sft_loss_grad, softmax_rows, DivergenceKind, LossReport, LossWeights,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_seq_len: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub divergence: DivergenceKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 4,
            batch_size: 8,
            weight_decay: 0.01,
            max_seq_len: 128,
            seed: 0,
            weights: LossWeights::default(),
            divergence: DivergenceKind::Fkl,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate or zero epochs are accepted as null runs.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(
                "learning_rate",
                format!("must be finite and nonnegative, got {}", self.learning_rate),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config(
                "weight_decay",
                format!("must be finite and nonnegative, got {}", self.weight_decay),
            ));
        }
        if self.max_seq_len < 2 {
            return Err(Error::config("max_seq_len", "must be at least 2"));
        }
        self.weights.validate()
    }

    pub fn digest(&self) -> String {
        config_digest(self)
    }
}

/// Metrics after one epoch; epoch 0 holds the values before training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of per-example training losses seen during the epoch (zeros for
    /// epoch 0).
    pub train: LossReport,
    /// Mean held-out kd loss against the teacher, when both are given.
    pub eval_kd: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// Per-epoch training losses, epoch 0 excluded.
    pub fn losses(&self) -> Vec<LossReport> {
        self.epochs
            .iter()
            .filter(|e| e.epoch > 0)
            .map(|e| e.train)
            .collect()
    }

    pub fn final_loss(&self) -> Option<LossReport> {
        self.losses().last().copied()
    }

    pub fn eval_kd(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.eval_kd).collect()
    }
}

/// Teacher probabilities for every target position of each record,
/// computed once under teacher forcing on the reference prefix.
pub struct TeacherTargets {
    probs: Vec<Tensor>,
}

impl TeacherTargets {
    pub fn compute(teacher: &LanguageModel, records: &[ExampleRecord]) -> Result<Self> {
        let probs = records
            .iter()
            .map(|r| Ok(softmax_rows(&target_logits(teacher, r)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { probs })
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.probs[i]
    }
}

fn check_record(record: &ExampleRecord, max_len: usize) -> Result<()> {
    if record.prompt_tokens.is_empty() || record.target_tokens.is_empty() {
        return Err(Error::InvalidInput(format!(
            "record {} has an empty prompt or target",
            record.id
        )));
    }
    if record.len() > max_len {
        return Err(Error::InvalidInput(format!(
            "record {} has {} tokens, max_seq_len is {max_len}",
            record.id,
            record.len()
        )));
    }
    Ok(())
}

/// Teacher-forced logits predicting each target token, `[T, vocab]`.
pub fn target_logits(model: &LanguageModel, record: &ExampleRecord) -> Result<Tensor> {
    let seq = record.sequence();
    model.logit_rows(
        &seq[..seq.len() - 1],
        record.prompt_tokens.len() - 1,
        record.target_tokens.len(),
    )
}

/// Per-example losses of `student` against `teacher` on `records`, and
/// their mean.
pub fn corpus_loss(
    teacher: &LanguageModel,
    student: &LanguageModel,
    records: &[ExampleRecord],
    weights: &LossWeights,
    kind: DivergenceKind,
) -> Result<(LossReport, Vec<LossReport>)> {
    weights.validate()?;
    let mut per = Vec::with_capacity(records.len());
    for r in records {
        let t = target_logits(teacher, r)?;
        let s = target_logits(student, r)?;
        let mask = vec![true; r.target_tokens.len()];
        per.push(crate::objectives::explanation_loss(
            &t,
            &s,
            &r.target_tokens,
            &mask,
            weights,
            kind,
        )?);
    }
    Ok((LossReport::mean(&per), per))
}

/// Mean kd loss of `student` on records whose teacher probabilities are
/// cached.
pub fn mean_kd(
    student: &LanguageModel,
    records: &[ExampleRecord],
    teacher: &TeacherTargets,
    kind: DivergenceKind,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let mut total = 0.0;
    for (i, r) in records.iter().enumerate() {
        let s = target_logits(student, r)?;
        total += kd_loss_grad(kind, teacher.get(i), &s, &vec![true; r.target_tokens.len()])?.0;
    }
    Ok(total / records.len() as f64)
}

struct Distillation<'t> {
    targets: &'t TeacherTargets,
    eval: Option<(&'t [ExampleRecord], &'t TeacherTargets)>,
}

/// Shared loop of SFT and white-box distillation.
fn train_lm(
    student: &mut LanguageModel,
    records: &[ExampleRecord],
    cfg: &TrainConfig,
    teacher: Option<Distillation<'_>>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let max_len = cfg.max_seq_len.min(student.config.max_seq_len);
    for r in records {
        check_record(r, max_len)?;
    }
    let (w_sft, w_kd) = match teacher {
        Some(_) => cfg.weights.normalized(),
        None => (1.0, 0.0),
    };
    let report_weights = match teacher {
        Some(_) => cfg.weights,
        None => LossWeights {
            lambda_sft: 1.0,
            lambda_kd: 0.0,
        },
    };
    let eval_kd = |student: &LanguageModel| -> Result<Option<f64>> {
        match &teacher {
            Some(Distillation {
                eval: Some((recs, probs)),
                ..
            }) if !recs.is_empty() => Ok(Some(mean_kd(student, recs, probs, cfg.divergence)?)),
            _ => Ok(None),
        }
    };
    let mut history = TrainHistory::default();
    history.epochs.push(EpochStats {
        epoch: 0,
        train: LossReport::default(),
        eval_kd: eval_kd(student)?,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(&student.params, cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..records.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut reports = Vec::with_capacity(records.len());
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut sum: Option<Vec<Tensor>> = None;
            for &i in batch {
                let r = &records[i];
                let mut tape = Tape::new();
                let seq = r.sequence();
                let t = r.target_tokens.len();
                let fwd = student.forward_on(
                    &mut tape,
                    &seq[..seq.len() - 1],
                    r.prompt_tokens.len() - 1,
                    t,
                )?;
                let logits = tape.value(fwd.logits).clone();
                let mask = vec![true; t];
                let (sft, mut grad) = sft_loss_grad(&logits, &r.target_tokens, &mask)?;
                let mut kd = 0.0;
                if let Some(d) = &teacher {
                    let (k, g) = kd_loss_grad(cfg.divergence, d.targets.get(i), &logits, &mask)?;
                    kd = k;
                    if w_kd > 0.0 {
                        for (a, b) in grad.data_mut().iter_mut().zip(g.data()) {
                            *a = w_sft * *a + w_kd * b;
                        }
                    } else if w_sft != 1.0 {
                        for a in grad.data_mut() {
                            *a *= w_sft;
                        }
                    }
                }
                let report = LossReport::new(&report_weights, sft, kd, t);
                if !report.combined.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        context: format!("in epoch {epoch}, batch {b}, record {}", r.id),
                    });
                }
                reports.push(report);
                let value = w_sft * sft + w_kd * kd;
                let loss = tape.attach_loss(fwd.logits, value, grad)?;
                let mut grads = tape.backward(loss)?;
                let g = student.params.collect_grads(&mut grads, &fwd.leaves);
                match &mut sum {
                    None => sum = Some(g),
                    Some(acc) => {
                        for (a, x) in acc.iter_mut().zip(&g) {
                            for (p, q) in a.data_mut().iter_mut().zip(x.data()) {
                                *p += q;
                            }
                        }
                    }
                }
            }
            let mut grads = sum.expect("nonempty batch");
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            opt.step(&mut student.params, &grads)?;
            debug!("epoch {epoch} batch {b} done");
        }
        let train = LossReport::mean(&reports);
        let kd_eval = eval_kd(student)?;
        info!(
            "epoch {epoch}: sft {:.4} kd {:.4} combined {:.4}{}",
            train.sft,
            train.kd,
            train.combined,
            kd_eval
                .map(|k| format!(" eval kd {k:.4}"))
                .unwrap_or_default()
        );
        history.epochs.push(EpochStats {
            epoch,
            train,
            eval_kd: kd_eval,
        });
    }
    Ok(history)
}

/// Supervised finetuning of a freshly initialized model.
pub fn train_sft(
    config: &ModelConfig,
    records: &[ExampleRecord],
    cfg: &TrainConfig,
    run: &str,
) -> Result<(Checkpoint, TrainHistory)> {
    let mut model = LanguageModel::init(config.clone(), ModelRole::Teacher)?;
    let history = train_sft_model(&mut model, records, cfg)?;
    let provenance = Provenance {
        path: run.to_string(),
        stage: 0,
        config_digest: cfg.digest(),
        final_loss: history.final_loss(),
    };
    Ok((Checkpoint::from_language_model(&model, provenance), history))
}

/// Supervised finetuning of an existing model in place.
pub fn train_sft_model(
    model: &mut LanguageModel,
    records: &[ExampleRecord],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    train_lm(model, records, cfg, None)
}

/// White-box distillation of `student` from a frozen `teacher`, in place.
/// `eval` records, when given, are scored with the kd loss before training
/// and after every epoch.
pub fn distill_explanation_model(
    teacher: &LanguageModel,
    student: &mut LanguageModel,
    records: &[ExampleRecord],
    eval: &[ExampleRecord],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    if teacher.config.vocab_size != student.config.vocab_size {
        return Err(Error::config(
            "vocab_size",
            format!(
                "teacher has {} tokens, student has {}",
                teacher.config.vocab_size, student.config.vocab_size
            ),
        ));
    }
    let max_len = cfg.max_seq_len.min(teacher.config.max_seq_len);
    for r in records.iter().chain(eval) {
        check_record(r, max_len)?;
    }
    let before = teacher.params.digest();
    let targets = TeacherTargets::compute(teacher, records)?;
    let eval_targets = TeacherTargets::compute(teacher, eval)?;
    let history = train_lm(
        student,
        records,
        cfg,
        Some(Distillation {
            targets: &targets,
            eval: Some((eval, &eval_targets)),
        }),
    )?;
    if teacher.params.digest() != before {
        return Err(Error::InvalidInput(
            "teacher parameters changed during distillation".into(),
        ));
    }
    Ok(history)
}

/// Distills a freshly initialized student described by `student_config`.
pub fn distill_explanation(
    teacher: &Checkpoint,
    student_config: &ModelConfig,
    records: &[ExampleRecord],
    eval: &[ExampleRecord],
    cfg: &TrainConfig,
    provenance: Provenance,
) -> Result<(Checkpoint, TrainHistory)> {
    let teacher = teacher.language_model()?;
    let mut student = LanguageModel::init(student_config.clone(), ModelRole::Student)?;
    let history = distill_explanation_model(&teacher, &mut student, records, eval, cfg)?;
    let provenance = Provenance {
        config_digest: cfg.digest(),
        final_loss: history.final_loss(),
        ..provenance
    };
    Ok((
        Checkpoint::from_language_model(&student, provenance),
        history,
    ))
}
