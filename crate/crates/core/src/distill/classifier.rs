use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Provenance};
use super::optim::AdamW;
use super::train::TrainConfig;
use crate::domain::{pair_tokens, tower_tokens, FitLabel, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::{classification_report, ClassificationReport};
use crate::models::{argmax, ClassifierSpec, EncoderClassifier, Structure};
use crate::numerics::{Tape, Tensor};
use crate::objectives::classification_loss_grad;

/// One classification example with every input rendering a classifier
/// structure may need.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClsExample {
    pub id: String,
    /// Joint `profile ... job ...` sequence for sequence classification.
    pub joint: Vec<u32>,
    /// Job tower input.
    pub job: Vec<u32>,
    /// Profile tower input.
    pub profile: Vec<u32>,
    pub label: FitLabel,
}

impl ClsExample {
    /// `job` and `profile` are the tokenized bodies (job text as chosen by
    /// the caller, e.g. compressed).
    pub fn new(
        vocab: &Vocabulary,
        id: impl Into<String>,
        job: &[u32],
        profile: &[u32],
        label: FitLabel,
    ) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            joint: pair_tokens(vocab, job, profile)?,
            job: tower_tokens(vocab, "job", job)?,
            profile: tower_tokens(vocab, "profile", profile)?,
            label,
        })
    }

    fn inputs(&self, structure: Structure) -> (&[u32], Option<&[u32]>) {
        match structure {
            Structure::SeqCls => (&self.joint, None),
            Structure::TwoTower(_) => (&self.job, Some(&self.profile)),
        }
    }
}

pub fn predict_label(model: &EncoderClassifier, example: &ClsExample) -> Result<FitLabel> {
    let (a, b) = example.inputs(model.spec.structure);
    FitLabel::from_index(argmax(&model.predict(a, b)?))
}

/// Label for a tokenized (compressed job, profile) pair.
pub fn classify_pair(
    model: &EncoderClassifier,
    vocab: &Vocabulary,
    job: &[u32],
    profile: &[u32],
) -> Result<FitLabel> {
    let probs = match model.spec.structure {
        Structure::SeqCls => model.predict(&pair_tokens(vocab, job, profile)?, None)?,
        Structure::TwoTower(_) => model.predict(
            &tower_tokens(vocab, "job", job)?,
            Some(&tower_tokens(vocab, "profile", profile)?),
        )?,
    };
    FitLabel::from_index(argmax(&probs))
}

pub fn evaluate_classifier(
    model: &EncoderClassifier,
    examples: &[ClsExample],
) -> Result<ClassificationReport> {
    let predictions = examples
        .iter()
        .map(|e| predict_label(model, e))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<FitLabel> = examples.iter().map(|e| e.label).collect();
    classification_report(&predictions, &labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClsEpoch {
    /// 0 is the initialized model.
    pub epoch: usize,
    pub train_loss: f64,
    pub accuracy: f64,
    pub weighted_f1: f64,
}

/// Cross-entropy training of `model` in place; held-out accuracy and
/// weighted F1 are recorded before training and after every epoch.
pub fn train_classifier(
    model: &mut EncoderClassifier,
    train: &[ClsExample],
    heldout: &[ClsExample],
    cfg: &TrainConfig,
) -> Result<Vec<ClsEpoch>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput(
            "classification training set is empty".into(),
        ));
    }
    if heldout.is_empty() {
        return Err(Error::InvalidInput(
            "classification held-out set is empty".into(),
        ));
    }
    let first = train[0].label;
    if train.iter().all(|e| e.label == first) {
        warn!("training set has a single class ({first}); F1 is degenerate");
    }
    let structure = model.spec.structure;
    let max_len = cfg.max_seq_len.min(model.spec.trunk.max_seq_len);
    for e in train.iter().chain(heldout) {
        let (a, b) = e.inputs(structure);
        let longest = a.len().max(b.map_or(0, <[u32]>::len));
        if longest > max_len {
            return Err(Error::InvalidInput(format!(
                "example {} has {longest} tokens, max_seq_len is {max_len}",
                e.id
            )));
        }
    }
    let mut opt = AdamW::new(&model.params, cfg.learning_rate, cfg.weight_decay);
    if model.spec.freeze_trunk {
        opt.freeze(0..model.head_offset());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let report = evaluate_classifier(model, heldout)?;
    let mut history = vec![ClsEpoch {
        epoch: 0,
        train_loss: 0.0,
        accuracy: report.accuracy,
        weighted_f1: report.weighted_f1,
    }];
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut sum: Option<Vec<Tensor>> = None;
            for &i in batch {
                let ex = &train[i];
                let (a, p) = ex.inputs(structure);
                let mut tape = Tape::new();
                let fwd = model.forward_on(&mut tape, a, p)?;
                let logits = tape.value(fwd.logits).data().to_vec();
                let (loss, grad) = classification_loss_grad(&logits, ex.label.index())?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        context: format!("in epoch {epoch}, batch {b}, example {}", ex.id),
                    });
                }
                total += loss;
                let node =
                    tape.attach_loss(fwd.logits, loss, Tensor::matrix(1, grad.len(), grad)?)?;
                let mut grads = tape.backward(node)?;
                let g = model.params.collect_grads(&mut grads, &fwd.leaves);
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
            opt.step(&mut model.params, &grads)?;
        }
        let report = evaluate_classifier(model, heldout)?;
        let train_loss = total / train.len() as f64;
        info!(
            "epoch {epoch}: loss {train_loss:.4} accuracy {:.4} weighted F1 {:.4}",
            report.accuracy, report.weighted_f1
        );
        history.push(ClsEpoch {
            epoch,
            train_loss,
            accuracy: report.accuracy,
            weighted_f1: report.weighted_f1,
        });
    }
    Ok(history)
}

/// Initializes a classifier from `spec` (optionally with a pretrained
/// trunk), trains it, and wraps the result in a checkpoint.
pub fn distill_classifier(
    spec: &ClassifierSpec,
    trunk: Option<&Checkpoint>,
    train: &[ClsExample],
    heldout: &[ClsExample],
    cfg: &TrainConfig,
    run: &str,
) -> Result<(Checkpoint, Vec<ClsEpoch>)> {
    let mut model = EncoderClassifier::init(spec.clone())?;
    if let Some(ckpt) = trunk {
        let lm = ckpt.language_model()?;
        model.load_trunk(&lm.params, &lm.config)?;
    }
    let history = train_classifier(&mut model, train, heldout, cfg)?;
    let provenance = Provenance {
        path: run.to_string(),
        stage: 0,
        config_digest: cfg.digest(),
        final_loss: None,
    };
    Ok((Checkpoint::from_classifier(&model, provenance), history))
}
