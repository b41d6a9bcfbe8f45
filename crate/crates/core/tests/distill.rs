use fitdistill::distill::{
    corpus_loss, distill_explanation_model, generate_labels, load_checkpoint, save_checkpoint,
    train_sft, train_sft_model, Checkpoint, LabelMode, Provenance, TrainConfig,
};
use fitdistill::domain::{
    oracle_records, Corpus, ExampleRecord, GeneratorConfig, JobView, Vocabulary,
};
use fitdistill::models::{LanguageModel, ModelConfig, ModelRole};
use fitdistill::objectives::{DivergenceKind, LossWeights};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup(count: usize) -> (Vocabulary, Corpus, Vec<ExampleRecord>) {
    let vocab = Vocabulary::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let corpus = Corpus::generate(&mut rng, &GeneratorConfig::default(), count, 0, 4).unwrap();
    let records = oracle_records(&vocab, &corpus, JobView::Compressed, 128).unwrap();
    (vocab, corpus, records)
}

fn config(vocab: &Vocabulary, layers: usize, dim: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        max_seq_len: 128,
        num_layers: layers,
        model_dim: dim,
        num_heads: 2,
        mlp_dim: 2 * dim,
        seed,
    }
}

fn train_cfg(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        epochs,
        batch_size: 4,
        max_seq_len: 128,
        ..TrainConfig::default()
    }
}

#[test]
fn memorizes_one_record() {
    let (vocab, _, records) = setup(1);
    let one = vec![records[0].clone(); 200];
    let cfg = TrainConfig {
        batch_size: 1,
        epochs: 1,
        learning_rate: 3e-3,
        ..train_cfg(1, 3e-3)
    };
    let (ckpt, history) = train_sft(&config(&vocab, 1, 16, 1), &one, &cfg, "overfit").unwrap();
    let model = ckpt.language_model().unwrap();
    let (report, _) = corpus_loss(
        &model,
        &model,
        &records[..1],
        &LossWeights::default(),
        DivergenceKind::Fkl,
    )
    .unwrap();
    assert!(report.sft < 0.05, "final sft loss {}", report.sft);
    assert_eq!(history.losses().len(), 1);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let (vocab, _, records) = setup(4);
    let cfg = config(&vocab, 1, 16, 2);
    let init = LanguageModel::init(cfg.clone(), ModelRole::Teacher).unwrap();
    let (ckpt, _) = train_sft(&cfg, &records, &train_cfg(2, 0.0), "null").unwrap();
    assert!(ckpt.params.bitwise_eq(&init.params));
}

#[test]
fn sft_is_deterministic_and_persists() {
    let (vocab, _, records) = setup(6);
    let cfg = config(&vocab, 1, 16, 3);
    let (a, _) = train_sft(&cfg, &records, &train_cfg(2, 1e-3), "run").unwrap();
    let (b, _) = train_sft(&cfg, &records, &train_cfg(2, 1e-3), "run").unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&a, &path).unwrap();
    assert!(load_checkpoint(&path).unwrap().params.bitwise_eq(&a.params));
}

#[test]
fn zero_kd_weight_matches_sft() {
    let (vocab, _, records) = setup(6);
    let teacher = LanguageModel::init(config(&vocab, 2, 16, 9), ModelRole::Teacher).unwrap();
    let cfg = train_cfg(2, 1e-3);
    let mut sft = LanguageModel::init(config(&vocab, 1, 16, 4), ModelRole::Student).unwrap();
    train_sft_model(&mut sft, &records, &cfg).unwrap();
    for lambda_sft in [1.0, 0.3] {
        let mut kd = LanguageModel::init(config(&vocab, 1, 16, 4), ModelRole::Student).unwrap();
        let cfg = TrainConfig {
            weights: LossWeights {
                lambda_sft,
                lambda_kd: 0.0,
            },
            ..cfg.clone()
        };
        distill_explanation_model(&teacher, &mut kd, &records, &records[..2], &cfg).unwrap();
        assert!(kd.params.bitwise_eq(&sft.params));
    }
}

#[test]
fn teacher_clone_has_zero_kd_and_teacher_is_untouched() {
    let (vocab, _, records) = setup(4);
    let teacher = LanguageModel::init(config(&vocab, 1, 16, 7), ModelRole::Teacher).unwrap();
    let digest = teacher.params.digest();
    for kind in DivergenceKind::ALL {
        let weights = LossWeights {
            lambda_sft: 0.0,
            lambda_kd: 1.0,
        };
        let (report, per) =
            corpus_loss(&teacher, &teacher.clone(), &records, &weights, kind).unwrap();
        assert!(report.kd < 1e-10, "{kind}: {}", report.kd);
        let mean: f64 = per.iter().map(|r| r.combined).sum::<f64>() / per.len() as f64;
        assert!((mean - report.combined).abs() < 1e-10);
    }
    let mut student = teacher.clone();
    let cfg = TrainConfig {
        divergence: DivergenceKind::Js,
        ..train_cfg(1, 1e-3)
    };
    let history =
        distill_explanation_model(&teacher, &mut student, &records, &records, &cfg).unwrap();
    assert!(history.epochs[0].eval_kd.unwrap() < 1e-10);
    assert_eq!(teacher.params.digest(), digest);
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let (vocab, _, records) = setup(2);
    let teacher = LanguageModel::init(config(&vocab, 1, 16, 1), ModelRole::Teacher).unwrap();
    let mut other = config(&vocab, 1, 16, 1);
    other.vocab_size += 1;
    let mut student = LanguageModel::init(other, ModelRole::Student).unwrap();
    assert!(
        distill_explanation_model(&teacher, &mut student, &records, &[], &train_cfg(1, 1e-3))
            .is_err()
    );
}

#[test]
fn labels_are_deterministic_and_rejections_are_kept() {
    let (vocab, corpus, _) = setup(3);
    let teacher = LanguageModel::init(config(&vocab, 1, 16, 1), ModelRole::Teacher).unwrap();
    let pairs = corpus.pairs.clone();
    let a = generate_labels(
        &teacher,
        &vocab,
        &corpus,
        &pairs,
        LabelMode::Explanation,
        JobView::Compressed,
    )
    .unwrap();
    let b = generate_labels(
        &teacher,
        &vocab,
        &corpus,
        &pairs,
        LabelMode::Explanation,
        JobView::Compressed,
    )
    .unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
    // An untrained model does not produce parseable explanations.
    assert!(a.iter().all(|l| l.rejected.is_some()));
    assert!(generate_labels(
        &teacher,
        &vocab,
        &corpus,
        &[],
        LabelMode::Classification,
        JobView::Full
    )
    .unwrap()
    .is_empty());
}

#[test]
fn checkpoint_provenance_survives() {
    let (vocab, _, _) = setup(1);
    let lm = LanguageModel::init(config(&vocab, 1, 8, 1), ModelRole::Student).unwrap();
    let c = Checkpoint::from_language_model(
        &lm,
        Provenance {
            path: "p".into(),
            stage: 2,
            ..Default::default()
        },
    );
    let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
    assert_eq!(back.provenance.stage, 2);
}
