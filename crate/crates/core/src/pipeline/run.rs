use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::{LabelSource, PipelineConfig};
use crate::distill::{
    distill_classifier, distill_explanation, evaluate_classifier, generate_labels, parse_rate,
    path_report, predict_label, run_path, train_sft, Checkpoint, ClsEpoch, ClsExample, DistillPath,
    EvalSet, LabelMode, PathOutcome, Provenance, TrainHistory,
};
use crate::domain::{
    balanced_counts, label_histogram, oracle_record, quality_filter, read_records,
    stratified_sample_counts, write_records, Corpus, ExampleRecord, FitLabel, GeneratorConfig,
    JobView, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{ClassificationReport, Report, CLASSIFICATION_COLUMNS};
use crate::models::{Interaction, LanguageModel, Pooling, Structure};
use crate::objectives::DivergenceKind;

/// First pair index of each split, so ids never collide across splits.
pub const SEED_FIRST: usize = 0;
pub const HELDOUT_FIRST: usize = 1_000_000;
pub const CLS_FIRST: usize = 2_000_000;
pub const CLS_HELDOUT_FIRST: usize = 3_000_000;
pub const BENCH_FIRST: usize = 4_000_000;

/// The four structure/pooling/interaction combinations compared in the
/// classification report.
pub const CLASSIFIER_VARIANTS: [(Structure, Pooling); 4] = [
    (Structure::SeqCls, Pooling::LastToken),
    (Structure::SeqCls, Pooling::Mean),
    (Structure::TwoTower(Interaction::Concat), Pooling::LastToken),
    (
        Structure::TwoTower(Interaction::DotProduct),
        Pooling::LastToken,
    ),
];

/// Every dataset a run uses.
#[derive(Clone, Debug, PartialEq)]
pub struct DataBundle {
    pub corpus: Corpus,
    /// Filtered, balanced oracle records for teacher SFT.
    pub seed: Vec<ExampleRecord>,
    /// Held-out explanation records (kd loss and ROUGE prompts).
    pub heldout: Vec<ExampleRecord>,
    /// Balanced oracle-labelled classification pairs.
    pub cls_train: Vec<ExampleRecord>,
    pub cls_heldout: Vec<ExampleRecord>,
}

pub const DATA_FILES: [&str; 5] = [
    "corpus.json",
    "seed.jsonl",
    "heldout.jsonl",
    "cls_train.jsonl",
    "cls_heldout.jsonl",
];

impl DataBundle {
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths: Vec<PathBuf> = DATA_FILES.iter().map(|f| dir.join(f)).collect();
        self.corpus.save(&paths[0])?;
        write_records(&paths[1], &self.seed)?;
        write_records(&paths[2], &self.heldout)?;
        write_records(&paths[3], &self.cls_train)?;
        write_records(&paths[4], &self.cls_heldout)?;
        Ok(paths)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let paths: Vec<PathBuf> = DATA_FILES.iter().map(|f| dir.join(f)).collect();
        if let Some(missing) = paths.iter().find(|p| !p.exists()) {
            return Err(Error::MissingFile(missing.clone()));
        }
        Ok(Self {
            corpus: Corpus::load(&paths[0])?,
            seed: read_records(&paths[1])?,
            heldout: read_records(&paths[2])?,
            cls_train: read_records(&paths[3])?,
            cls_heldout: read_records(&paths[4])?,
        })
    }

    pub fn kd_eval(&self, cfg: &PipelineConfig) -> &[ExampleRecord] {
        &self.heldout[..cfg.data.kd_eval_records.min(self.heldout.len())]
    }

    pub fn eval_prompts(&self, cfg: &PipelineConfig) -> Vec<Vec<u32>> {
        self.heldout
            .iter()
            .take(cfg.data.eval_records)
            .map(|r| r.prompt_tokens.clone())
            .collect()
    }
}

/// Generates pairs in chunks until the oracle-labelled, quality-filtered
/// pool holds `counts` of each label, then samples exactly that many.
/// Pairs whose record would exceed `max_seq_len` are skipped.
#[allow(clippy::too_many_arguments)]
pub fn balanced_set<R: Rng + ?Sized>(
    rng: &mut R,
    vocab: &Vocabulary,
    gen: &GeneratorConfig,
    counts: [usize; 3],
    first_id: usize,
    negative_every: usize,
    view: JobView,
    max_seq_len: usize,
) -> Result<(Corpus, Vec<ExampleRecord>)> {
    const MAX_CHUNKS: usize = 64;
    let total: usize = counts.iter().sum();
    let chunk = total.max(64);
    let mut corpus = Corpus::default();
    let mut pool = Vec::new();
    for c in 0..MAX_CHUNKS {
        let part = Corpus::generate(rng, gen, chunk, first_id + c * chunk, negative_every)?;
        let mut records = Vec::with_capacity(chunk);
        for (j, p) in &part.pairs {
            let r = oracle_record(vocab, part.job(j)?, part.profile(p)?, view, usize::MAX)?;
            if r.len() <= max_seq_len {
                records.push(r);
            }
        }
        let filtered = quality_filter(vocab, &records, &part)?;
        if !filtered.rejected.is_empty() {
            warn!(
                "{} oracle records rejected by the quality filter",
                filtered.rejected.len()
            );
        }
        pool.extend(filtered.kept);
        corpus.merge(part)?;
        let have = label_histogram(&pool);
        if have.iter().zip(&counts).all(|(h, c)| h >= c) {
            let chosen = stratified_sample_counts(&pool, counts, rng)?;
            return Ok((corpus.select(&chosen)?, chosen));
        }
    }
    // Let the sampler name the short category.
    let chosen = stratified_sample_counts(&pool, counts, rng)?;
    Ok((corpus.select(&chosen)?, chosen))
}

/// Builds every split from `cfg.seed`. The classification sets carry
/// explanation prompts too, rendered without a length limit.
pub fn datagen(cfg: &PipelineConfig) -> Result<DataBundle> {
    cfg.validate()?;
    let vocab = Vocabulary::new();
    let d = &cfg.data;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut corpus, seed) = balanced_set(
        &mut rng,
        &vocab,
        &cfg.generator,
        balanced_counts(d.seed_records),
        SEED_FIRST,
        d.negative_every,
        d.view,
        cfg.max_seq_len,
    )?;
    let heldout_count = d.kd_eval_records.max(d.eval_records);
    let mut heldout_corpus = Corpus::default();
    let mut heldout = Vec::with_capacity(heldout_count);
    let mut next = HELDOUT_FIRST;
    while heldout.len() < heldout_count {
        let part = Corpus::generate(&mut rng, &cfg.generator, 1, next, 0)?;
        next += 1;
        let (j, p) = &part.pairs[0];
        let r = oracle_record(&vocab, part.job(j)?, part.profile(p)?, d.view, usize::MAX)?;
        if r.len() <= cfg.max_seq_len {
            heldout.push(r);
            heldout_corpus.merge(part)?;
        }
    }
    let (cls_corpus, cls_train) = balanced_set(
        &mut rng,
        &vocab,
        &cfg.generator,
        balanced_counts(d.cls_records),
        CLS_FIRST,
        d.negative_every,
        JobView::Compressed,
        usize::MAX,
    )?;
    let (cls_held_corpus, cls_heldout) = balanced_set(
        &mut rng,
        &vocab,
        &cfg.generator,
        balanced_counts(d.cls_heldout),
        CLS_HELDOUT_FIRST,
        d.negative_every,
        JobView::Compressed,
        usize::MAX,
    )?;
    for part in [heldout_corpus, cls_corpus, cls_held_corpus] {
        corpus.merge(part)?;
    }
    info!(
        "datagen: seed {:?}, heldout {}, cls train {:?}, cls heldout {:?}",
        label_histogram(&seed),
        heldout.len(),
        label_histogram(&cls_train),
        label_histogram(&cls_heldout)
    );
    Ok(DataBundle {
        corpus,
        seed,
        heldout,
        cls_train,
        cls_heldout,
    })
}

/// SFT of the in-house teacher on the seed set.
pub fn train_teacher(
    cfg: &PipelineConfig,
    data: &DataBundle,
) -> Result<(Checkpoint, TrainHistory)> {
    let vocab = Vocabulary::new();
    train_sft(
        &cfg.teacher_config(vocab.len()),
        &data.seed,
        &cfg.teacher_train(),
        "teacher",
    )
}

/// One explanation student of `layers` layers distilled from `teacher`.
pub fn distill_student(
    cfg: &PipelineConfig,
    teacher: &Checkpoint,
    data: &DataBundle,
    layers: usize,
    divergence: DivergenceKind,
) -> Result<(Checkpoint, TrainHistory)> {
    let vocab = Vocabulary::new();
    let train = cfg.student_train(divergence);
    let provenance = Provenance {
        path: format!("{}L->{layers}L {divergence}", cfg.teacher.layers),
        stage: 1,
        config_digest: train.digest(),
        final_loss: None,
    };
    distill_explanation(
        teacher,
        &cfg.student_config(vocab.len(), layers),
        &data.seed,
        data.kd_eval(cfg),
        &train,
        provenance,
    )
}

/// Runs every configured path; stage checkpoints go to
/// `out_dir/<path index>/stageN.ckpt` when `out_dir` is given.
pub fn run_paths(
    cfg: &PipelineConfig,
    teacher: &LanguageModel,
    data: &DataBundle,
    out_dir: Option<&Path>,
) -> Result<(Vec<(DistillPath, PathOutcome)>, Report)> {
    let vocab = Vocabulary::new();
    let eval = EvalSet::from_teacher(teacher, data.eval_prompts(cfg), cfg.max_seq_len)?;
    let mut outcomes = Vec::new();
    for (i, path) in cfg.distill_paths(vocab.len()).into_iter().enumerate() {
        let dir = out_dir.map(|d| d.join(format!("path{}", i + 1)));
        if let Some(dir) = &dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let outcome = run_path(
            &path,
            teacher,
            &data.seed,
            data.kd_eval(cfg),
            &eval,
            dir.as_deref(),
        )?;
        outcomes.push((path, outcome));
    }
    let pairs: Vec<(&DistillPath, &PathOutcome)> = outcomes.iter().map(|(p, o)| (p, o)).collect();
    let report = path_report(&teacher.config, &pairs)?;
    Ok((outcomes, report))
}

/// Classifier examples for `records` with the job rendered in `view`.
pub fn cls_examples(
    vocab: &Vocabulary,
    corpus: &Corpus,
    records: &[ExampleRecord],
    view: JobView,
) -> Result<Vec<ClsExample>> {
    records
        .iter()
        .map(|r| {
            let (job, profile) = corpus.pair(r)?;
            ClsExample::new(
                vocab,
                r.id.clone(),
                &vocab.encode(&view.text(job))?,
                &profile.tokens(vocab)?,
                r.label,
            )
        })
        .collect()
}

/// As [`cls_examples`], but each example shows the full job with
/// probability `full_share` (seeded), else the compressed one.
pub fn mixed_cls_examples(
    vocab: &Vocabulary,
    corpus: &Corpus,
    records: &[ExampleRecord],
    full_share: f64,
    seed: u64,
) -> Result<Vec<ClsExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records
        .iter()
        .map(|r| {
            let view = if rng.gen_bool(full_share) {
                JobView::Full
            } else {
                JobView::Compressed
            };
            cls_examples(vocab, corpus, std::slice::from_ref(r), view).map(|mut v| v.remove(0))
        })
        .collect()
}

/// Classification training labels: the oracle's, or the teacher's decoded
/// `fit :` line. Records the teacher cannot label are dropped.
pub fn classification_labels(
    cfg: &PipelineConfig,
    data: &DataBundle,
    teacher: Option<&LanguageModel>,
) -> Result<Vec<ExampleRecord>> {
    match cfg.classifier.labels {
        LabelSource::Oracle => Ok(data.cls_train.clone()),
        LabelSource::Teacher => {
            let teacher = teacher.ok_or_else(|| {
                Error::config("cls.labels", "teacher labels need a teacher checkpoint")
            })?;
            let vocab = Vocabulary::new();
            let pairs = data
                .cls_train
                .iter()
                .map(|r| r.refs().map(|(j, p)| (j.to_string(), p.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let labels = generate_labels(
                teacher,
                &vocab,
                &data.corpus,
                &pairs,
                LabelMode::Classification,
                cfg.data.view,
            )?;
            info!(
                "teacher labelled {:.1}% of classification pairs",
                100.0 * parse_rate(&labels)
            );
            let kept: Vec<ExampleRecord> = labels
                .into_iter()
                .filter(|l| l.rejected.is_none())
                .map(|l| l.record)
                .collect();
            if kept.is_empty() {
                return Err(Error::InvalidInput(
                    "the teacher produced no parseable fit label".into(),
                ));
            }
            Ok(kept)
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClsRun {
    pub structure: Structure,
    pub pooling: Pooling,
    pub checkpoint: Checkpoint,
    pub history: Vec<ClsEpoch>,
    /// Held-out metrics on compressed jobs.
    pub report: ClassificationReport,
    /// Share of held-out pairs given the same label with compressed and
    /// full jobs.
    pub agreement: f64,
}

/// Share of examples on which `model` predicts the same label for both
/// renderings (same order, same pairs).
pub fn view_agreement(
    model: &crate::models::EncoderClassifier,
    a: &[ClsExample],
    b: &[ClsExample],
) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidInput(
            "agreement needs two equal, nonempty example sets".into(),
        ));
    }
    let mut same = 0;
    for (x, y) in a.iter().zip(b) {
        if predict_label(model, x)? == predict_label(model, y)? {
            same += 1;
        }
    }
    Ok(same as f64 / a.len() as f64)
}

/// Trains the configured classifier and, with `cls.ablation`, the other
/// three structure/pooling/interaction variants on the same labels.
pub fn train_classifiers(
    cfg: &PipelineConfig,
    data: &DataBundle,
    teacher: Option<&LanguageModel>,
) -> Result<(Vec<ClsRun>, Report)> {
    let vocab = Vocabulary::new();
    let c = &cfg.classifier;
    let labelled = classification_labels(cfg, data, teacher)?;
    let train = mixed_cls_examples(&vocab, &data.corpus, &labelled, c.full_share, cfg.seed)?;
    let heldout = cls_examples(&vocab, &data.corpus, &data.cls_heldout, JobView::Compressed)?;
    let heldout_full = cls_examples(&vocab, &data.corpus, &data.cls_heldout, JobView::Full)?;
    let mut variants = vec![(c.structure, c.pooling)];
    if c.ablation {
        variants.extend(
            CLASSIFIER_VARIANTS
                .iter()
                .copied()
                .filter(|v| *v != (c.structure, c.pooling)),
        );
    }
    let mut runs = Vec::new();
    for (structure, pooling) in variants {
        let spec = cfg.classifier_spec(vocab.len(), structure, pooling);
        let name = format!(
            "{} {} {}",
            structure.name(),
            pooling.name(),
            structure.interaction_name()
        );
        info!("classifier {name}");
        let (checkpoint, history) = distill_classifier(
            &spec,
            None,
            &train,
            &heldout,
            &cfg.classifier_train(),
            &name,
        )?;
        let model = checkpoint.classifier()?;
        let report = evaluate_classifier(&model, &heldout)?;
        let agreement = view_agreement(&model, &heldout, &heldout_full)?;
        runs.push(ClsRun {
            structure,
            pooling,
            checkpoint,
            history,
            report,
            agreement,
        });
    }
    let report = classification_report_table(&runs)?;
    Ok((runs, report))
}

pub fn classification_report_table(runs: &[ClsRun]) -> Result<Report> {
    let mut report = Report::new(&CLASSIFICATION_COLUMNS)?;
    for r in runs {
        let spec = &r.checkpoint.classifier()?.spec;
        report.push_values([
            ("backbone", Value::from(spec.trunk.label())),
            ("structure", Value::from(r.structure.name())),
            ("pooling", Value::from(r.pooling.name())),
            ("interaction", Value::from(r.structure.interaction_name())),
            ("accuracy", Value::from(r.report.accuracy)),
            ("weighted_f1", Value::from(r.report.weighted_f1)),
        ])?;
    }
    Ok(report)
}

/// SFT of the optional extraction model on (full job -> requirement lines).
pub fn train_summarizer(
    cfg: &PipelineConfig,
    data: &DataBundle,
) -> Result<(Checkpoint, TrainHistory)> {
    use crate::domain::{extraction_target, render_prompt_tokens, PromptVariant, Source};
    let vocab = Vocabulary::new();
    let mut records = Vec::new();
    for r in &data.seed {
        let (job, _) = data.corpus.pair(r)?;
        let target = extraction_target(&vocab, job)?;
        let limit = cfg.max_seq_len.saturating_sub(target.len());
        let Ok(prompt) = render_prompt_tokens(
            &vocab,
            &job.tokens(&vocab)?,
            None,
            PromptVariant::ExtractionOnly,
            limit,
        ) else {
            continue;
        };
        records.push(ExampleRecord {
            id: r.id.clone(),
            source: Source::Oracle,
            label: FitLabel::Low,
            coverage: 0.0,
            prompt_tokens: prompt,
            target_tokens: target,
        });
    }
    train_sft(
        &cfg.summarizer_config(vocab.len()),
        &records,
        &cfg.summarizer_train(),
        "summarizer",
    )
}

/// Run manifest written next to a command's artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::parse("manifest", e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
