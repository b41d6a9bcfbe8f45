use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distill::{config_digest, DistillPath, Stage, StageTeacher, TrainConfig};
use crate::domain::{GeneratorConfig, JobView};
use crate::error::{Error, Result};
use crate::models::{ClassifierSpec, Interaction, ModelConfig, Pooling, Structure};
use crate::objectives::{DivergenceKind, LossWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompressionMode {
    Rule,
    Model,
}

/// Where classifier training labels come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Teacher,
    Oracle,
}

/// Shape of one model family in the config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp: usize,
}

impl ModelShape {
    pub fn config(&self, vocab_size: usize, max_seq_len: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size,
            max_seq_len,
            num_layers: self.layers,
            model_dim: self.dim,
            num_heads: self.heads,
            mlp_dim: self.mlp,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Optim {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Unlabelled pairs generated for the seed set.
    pub pool: usize,
    pub seed_records: usize,
    pub kd_eval_records: usize,
    /// Prompts decoded for ROUGE evaluation.
    pub eval_records: usize,
    pub cls_records: usize,
    pub cls_heldout: usize,
    pub negative_every: usize,
    pub view: JobView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub shape: ModelShape,
    pub head_dim: usize,
    pub optim: Optim,
    pub structure: Structure,
    pub pooling: Pooling,
    pub freeze_trunk: bool,
    pub labels: LabelSource,
    /// Also train the other three structure/pooling/interaction variants.
    pub ablation: bool,
    /// Share of training examples rendered with the full job text.
    pub full_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub classification: usize,
    pub summarization: usize,
    pub explanation: usize,
    pub rounds: usize,
}

/// Everything a CLI run needs. Text form is flat `key = value` lines;
/// see [`PipelineConfig::to_text`] for the full key list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub max_seq_len: usize,
    pub generator: GeneratorConfig,
    pub data: DataConfig,
    pub teacher: ModelShape,
    pub teacher_optim: Optim,
    pub student: ModelShape,
    pub student_optim: Optim,
    pub weights: LossWeights,
    pub divergence: DivergenceKind,
    /// Student layer chains, e.g. `[[1], [2, 1]]`.
    pub paths: Vec<Vec<usize>>,
    pub summarizer: ModelShape,
    pub summarizer_optim: Optim,
    pub classifier: ClassifierConfig,
    pub compression: CompressionMode,
    pub summarizer_checkpoint: Option<PathBuf>,
    pub classifier_checkpoint: Option<PathBuf>,
    pub explainer_checkpoint: Option<PathBuf>,
    pub bench: BenchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            max_seq_len: 128,
            generator: GeneratorConfig::default(),
            data: DataConfig {
                pool: 2000,
                seed_records: 512,
                kd_eval_records: 64,
                eval_records: 32,
                cls_records: 3000,
                cls_heldout: 600,
                negative_every: 4,
                view: JobView::Compressed,
            },
            teacher: ModelShape {
                layers: 4,
                dim: 64,
                heads: 4,
                mlp: 256,
            },
            teacher_optim: Optim {
                lr: 1e-3,
                epochs: 4,
                batch: 8,
            },
            student: ModelShape {
                layers: 1,
                dim: 32,
                heads: 4,
                mlp: 128,
            },
            student_optim: Optim {
                lr: 4e-3,
                epochs: 8,
                batch: 8,
            },
            weights: LossWeights::default(),
            divergence: DivergenceKind::Fkl,
            paths: vec![vec![1], vec![2, 1]],
            summarizer: ModelShape {
                layers: 1,
                dim: 32,
                heads: 4,
                mlp: 128,
            },
            summarizer_optim: Optim {
                lr: 4e-3,
                epochs: 0,
                batch: 8,
            },
            classifier: ClassifierConfig {
                shape: ModelShape {
                    layers: 2,
                    dim: 32,
                    heads: 4,
                    mlp: 128,
                },
                head_dim: 32,
                optim: Optim {
                    lr: 1e-3,
                    epochs: 20,
                    batch: 16,
                },
                structure: Structure::SeqCls,
                pooling: Pooling::LastToken,
                freeze_trunk: false,
                labels: LabelSource::Oracle,
                ablation: true,
                full_share: 0.5,
            },
            compression: CompressionMode::Rule,
            summarizer_checkpoint: None,
            classifier_checkpoint: None,
            explainer_checkpoint: None,
            bench: BenchConfig {
                classification: 30,
                summarization: 4,
                explanation: 1,
                rounds: 3,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(
            key,
            format!("expected true or false, got `{value}`"),
        )),
    }
}

fn parse_paths(key: &str, value: &str) -> Result<Vec<Vec<usize>>> {
    value
        .split(';')
        .map(|chain| {
            chain
                .split(',')
                .map(|l| parse::<usize>(key, l.trim()))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

fn fmt_paths(paths: &[Vec<usize>]) -> String {
    paths
        .iter()
        .map(|c| c.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("; ")
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

fn structure_name(s: Structure) -> &'static str {
    match s {
        Structure::SeqCls => "seqcls",
        Structure::TwoTower(_) => "twotower",
    }
}

fn interaction_name(s: Structure) -> &'static str {
    match s {
        Structure::TwoTower(Interaction::DotProduct) => "dot",
        _ => "concat",
    }
}

impl PipelineConfig {
    /// `(key, value)` pairs in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let g = &self.generator;
        let d = &self.data;
        let c = &self.classifier;
        let shape = |p: &'static str, s: &ModelShape| -> Vec<(&'static str, String)> {
            let keys: [&'static str; 4] = match p {
                "teacher" => [
                    "teacher.layers",
                    "teacher.dim",
                    "teacher.heads",
                    "teacher.mlp",
                ],
                "student" => [
                    "student.layers",
                    "student.dim",
                    "student.heads",
                    "student.mlp",
                ],
                "summarizer" => [
                    "summarizer.layers",
                    "summarizer.dim",
                    "summarizer.heads",
                    "summarizer.mlp",
                ],
                _ => ["cls.layers", "cls.dim", "cls.heads", "cls.mlp"],
            };
            vec![
                (keys[0], s.layers.to_string()),
                (keys[1], s.dim.to_string()),
                (keys[2], s.heads.to_string()),
                (keys[3], s.mlp.to_string()),
            ]
        };
        let optim = |p: &'static str, o: &Optim| -> Vec<(&'static str, String)> {
            let keys: [&'static str; 3] = match p {
                "teacher" => ["teacher.lr", "teacher.epochs", "teacher.batch"],
                "student" => ["student.lr", "student.epochs", "student.batch"],
                "summarizer" => ["summarizer.lr", "summarizer.epochs", "summarizer.batch"],
                _ => ["cls.lr", "cls.epochs", "cls.batch"],
            };
            vec![
                (keys[0], o.lr.to_string()),
                (keys[1], o.epochs.to_string()),
                (keys[2], o.batch.to_string()),
            ]
        };
        let mut e = vec![
            ("seed", self.seed.to_string()),
            ("max_seq_len", self.max_seq_len.to_string()),
            ("gen.catalog_size", g.catalog_size.to_string()),
            ("gen.requirements_min", g.requirements.0.to_string()),
            ("gen.requirements_max", g.requirements.1.to_string()),
            ("gen.min_years_min", g.min_years.0.to_string()),
            ("gen.min_years_max", g.min_years.1.to_string()),
            ("gen.noise_min", g.noise_lines.0.to_string()),
            ("gen.noise_max", g.noise_lines.1.to_string()),
            ("gen.profile_skills_min", g.profile_skills.0.to_string()),
            ("gen.profile_skills_max", g.profile_skills.1.to_string()),
            ("gen.profile_years_min", g.profile_years.0.to_string()),
            ("gen.profile_years_max", g.profile_years.1.to_string()),
            ("gen.required_prob", g.required_prob.to_string()),
            ("data.pool", d.pool.to_string()),
            ("data.seed_records", d.seed_records.to_string()),
            ("data.kd_eval_records", d.kd_eval_records.to_string()),
            ("data.eval_records", d.eval_records.to_string()),
            ("data.cls_records", d.cls_records.to_string()),
            ("data.cls_heldout", d.cls_heldout.to_string()),
            ("data.negative_every", d.negative_every.to_string()),
            ("data.view", view_name(d.view).to_string()),
        ];
        e.extend(shape("teacher", &self.teacher));
        e.extend(optim("teacher", &self.teacher_optim));
        e.extend(shape("student", &self.student));
        e.extend(optim("student", &self.student_optim));
        e.extend([
            ("kd.lambda_sft", self.weights.lambda_sft.to_string()),
            ("kd.lambda_kd", self.weights.lambda_kd.to_string()),
            ("kd.divergence", self.divergence.to_string()),
            ("paths", fmt_paths(&self.paths)),
        ]);
        e.extend(shape("summarizer", &self.summarizer));
        e.extend(optim("summarizer", &self.summarizer_optim));
        e.extend(shape("cls", &c.shape));
        e.extend(optim("cls", &c.optim));
        e.extend([
            ("cls.head_dim", c.head_dim.to_string()),
            ("cls.structure", structure_name(c.structure).to_string()),
            ("cls.interaction", interaction_name(c.structure).to_string()),
            (
                "cls.pooling",
                if c.pooling == Pooling::Mean {
                    "mean"
                } else {
                    "last"
                }
                .to_string(),
            ),
            ("cls.freeze_trunk", c.freeze_trunk.to_string()),
            (
                "cls.labels",
                if c.labels == LabelSource::Oracle {
                    "oracle"
                } else {
                    "teacher"
                }
                .to_string(),
            ),
            ("cls.ablation", c.ablation.to_string()),
            ("cls.full_share", c.full_share.to_string()),
            (
                "compression",
                if self.compression == CompressionMode::Model {
                    "model"
                } else {
                    "rule"
                }
                .to_string(),
            ),
            (
                "summarizer.checkpoint",
                opt_path(&self.summarizer_checkpoint),
            ),
            (
                "classifier.checkpoint",
                opt_path(&self.classifier_checkpoint),
            ),
            ("explainer.checkpoint", opt_path(&self.explainer_checkpoint)),
            (
                "bench.classification",
                self.bench.classification.to_string(),
            ),
            ("bench.summarization", self.bench.summarization.to_string()),
            ("bench.explanation", self.bench.explanation.to_string()),
            ("bench.rounds", self.bench.rounds.to_string()),
        ]);
        e
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        let g = &mut self.generator;
        let d = &mut self.data;
        let c = &mut self.classifier;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "max_seq_len" => self.max_seq_len = parse(key, v)?,
            "gen.catalog_size" => g.catalog_size = parse(key, v)?,
            "gen.requirements_min" => g.requirements.0 = parse(key, v)?,
            "gen.requirements_max" => g.requirements.1 = parse(key, v)?,
            "gen.min_years_min" => g.min_years.0 = parse(key, v)?,
            "gen.min_years_max" => g.min_years.1 = parse(key, v)?,
            "gen.noise_min" => g.noise_lines.0 = parse(key, v)?,
            "gen.noise_max" => g.noise_lines.1 = parse(key, v)?,
            "gen.profile_skills_min" => g.profile_skills.0 = parse(key, v)?,
            "gen.profile_skills_max" => g.profile_skills.1 = parse(key, v)?,
            "gen.profile_years_min" => g.profile_years.0 = parse(key, v)?,
            "gen.profile_years_max" => g.profile_years.1 = parse(key, v)?,
            "gen.required_prob" => g.required_prob = parse(key, v)?,
            "data.pool" => d.pool = parse(key, v)?,
            "data.seed_records" => d.seed_records = parse(key, v)?,
            "data.kd_eval_records" => d.kd_eval_records = parse(key, v)?,
            "data.eval_records" => d.eval_records = parse(key, v)?,
            "data.cls_records" => d.cls_records = parse(key, v)?,
            "data.cls_heldout" => d.cls_heldout = parse(key, v)?,
            "data.negative_every" => d.negative_every = parse(key, v)?,
            "data.view" => d.view = parse_view(key, v)?,
            "teacher.layers" => self.teacher.layers = parse(key, v)?,
            "teacher.dim" => self.teacher.dim = parse(key, v)?,
            "teacher.heads" => self.teacher.heads = parse(key, v)?,
            "teacher.mlp" => self.teacher.mlp = parse(key, v)?,
            "teacher.lr" => self.teacher_optim.lr = parse(key, v)?,
            "teacher.epochs" => self.teacher_optim.epochs = parse(key, v)?,
            "teacher.batch" => self.teacher_optim.batch = parse(key, v)?,
            "student.layers" => self.student.layers = parse(key, v)?,
            "student.dim" => self.student.dim = parse(key, v)?,
            "student.heads" => self.student.heads = parse(key, v)?,
            "student.mlp" => self.student.mlp = parse(key, v)?,
            "student.lr" => self.student_optim.lr = parse(key, v)?,
            "student.epochs" => self.student_optim.epochs = parse(key, v)?,
            "student.batch" => self.student_optim.batch = parse(key, v)?,
            "kd.lambda_sft" => self.weights.lambda_sft = parse(key, v)?,
            "kd.lambda_kd" => self.weights.lambda_kd = parse(key, v)?,
            "kd.divergence" => self.divergence = parse(key, v)?,
            "paths" => self.paths = parse_paths(key, v)?,
            "summarizer.layers" => self.summarizer.layers = parse(key, v)?,
            "summarizer.dim" => self.summarizer.dim = parse(key, v)?,
            "summarizer.heads" => self.summarizer.heads = parse(key, v)?,
            "summarizer.mlp" => self.summarizer.mlp = parse(key, v)?,
            "summarizer.lr" => self.summarizer_optim.lr = parse(key, v)?,
            "summarizer.epochs" => self.summarizer_optim.epochs = parse(key, v)?,
            "summarizer.batch" => self.summarizer_optim.batch = parse(key, v)?,
            "cls.layers" => c.shape.layers = parse(key, v)?,
            "cls.dim" => c.shape.dim = parse(key, v)?,
            "cls.heads" => c.shape.heads = parse(key, v)?,
            "cls.mlp" => c.shape.mlp = parse(key, v)?,
            "cls.lr" => c.optim.lr = parse(key, v)?,
            "cls.epochs" => c.optim.epochs = parse(key, v)?,
            "cls.batch" => c.optim.batch = parse(key, v)?,
            "cls.head_dim" => c.head_dim = parse(key, v)?,
            "cls.structure" => {
                c.structure = match v {
                    "seqcls" => Structure::SeqCls,
                    "twotower" => Structure::TwoTower(match c.structure {
                        Structure::TwoTower(i) => i,
                        Structure::SeqCls => Interaction::Concat,
                    }),
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected seqcls or twotower, got `{v}`"),
                        ))
                    }
                }
            }
            "cls.interaction" => {
                let i = match v {
                    "concat" => Interaction::Concat,
                    "dot" => Interaction::DotProduct,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected concat or dot, got `{v}`"),
                        ))
                    }
                };
                if let Structure::TwoTower(_) = c.structure {
                    c.structure = Structure::TwoTower(i);
                }
            }
            "cls.pooling" => {
                c.pooling = match v {
                    "last" => Pooling::LastToken,
                    "mean" => Pooling::Mean,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected last or mean, got `{v}`"),
                        ))
                    }
                }
            }
            "cls.freeze_trunk" => c.freeze_trunk = parse_bool(key, v)?,
            "cls.labels" => {
                c.labels = match v {
                    "teacher" => LabelSource::Teacher,
                    "oracle" => LabelSource::Oracle,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected teacher or oracle, got `{v}`"),
                        ))
                    }
                }
            }
            "cls.ablation" => c.ablation = parse_bool(key, v)?,
            "cls.full_share" => c.full_share = parse(key, v)?,
            "compression" => {
                self.compression = match v {
                    "rule" => CompressionMode::Rule,
                    "model" => CompressionMode::Model,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected rule or model, got `{v}`"),
                        ))
                    }
                }
            }
            "summarizer.checkpoint" => {
                self.summarizer_checkpoint = (!v.is_empty()).then(|| PathBuf::from(v))
            }
            "classifier.checkpoint" => {
                self.classifier_checkpoint = (!v.is_empty()).then(|| PathBuf::from(v))
            }
            "explainer.checkpoint" => {
                self.explainer_checkpoint = (!v.is_empty()).then(|| PathBuf::from(v))
            }
            "bench.classification" => self.bench.classification = parse(key, v)?,
            "bench.summarization" => self.bench.summarization = parse(key, v)?,
            "bench.explanation" => self.bench.explanation = parse(key, v)?,
            "bench.rounds" => self.bench.rounds = parse(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::parse("config", format!("line {}: expected `key = value`", i + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Checkpoint paths it names must exist; a
    /// relative path is resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse_text(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.summarizer_checkpoint,
            &mut cfg.classifier_checkpoint,
            &mut cfg.explainer_checkpoint,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn digest(&self) -> String {
        config_digest(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.max_seq_len < 2 {
            return Err(Error::config("max_seq_len", "must be at least 2"));
        }
        if self.paths.is_empty() || self.paths.iter().any(Vec::is_empty) {
            return Err(Error::config(
                "paths",
                "every path needs at least one student",
            ));
        }
        if self.paths.iter().flatten().any(|&l| l == 0) {
            return Err(Error::config("paths", "layer counts must be positive"));
        }
        if !(0.0..=1.0).contains(&self.classifier.full_share) {
            return Err(Error::config("cls.full_share", "must lie in [0, 1]"));
        }
        if self.compression == CompressionMode::Model && self.summarizer_checkpoint.is_none() {
            return Err(Error::config(
                "compression",
                "model mode needs summarizer.checkpoint",
            ));
        }
        for (k, v) in [
            ("bench.rounds", self.bench.rounds),
            ("data.seed_records", self.data.seed_records),
        ] {
            if v == 0 {
                return Err(Error::config(k, "must be positive"));
            }
        }
        self.weights.validate()?;
        for t in [
            self.teacher_train(),
            self.student_train(self.divergence),
            self.classifier_train(),
        ] {
            t.validate()?;
        }
        Ok(())
    }

    pub fn teacher_config(&self, vocab_size: usize) -> ModelConfig {
        self.teacher.config(vocab_size, self.max_seq_len, self.seed)
    }

    /// Student of `layers` layers; the seed differs per depth.
    pub fn student_config(&self, vocab_size: usize, layers: usize) -> ModelConfig {
        let shape = ModelShape {
            layers,
            ..self.student.clone()
        };
        shape.config(
            vocab_size,
            self.max_seq_len,
            self.seed.wrapping_add(100 + layers as u64),
        )
    }

    pub fn summarizer_config(&self, vocab_size: usize) -> ModelConfig {
        self.summarizer
            .config(vocab_size, self.max_seq_len, self.seed.wrapping_add(1))
    }

    pub fn classifier_spec(
        &self,
        vocab_size: usize,
        structure: Structure,
        pooling: Pooling,
    ) -> ClassifierSpec {
        ClassifierSpec {
            trunk: self.classifier.shape.config(
                vocab_size,
                self.max_seq_len,
                self.seed.wrapping_add(2),
            ),
            structure,
            pooling,
            head_dim: self.classifier.head_dim,
            freeze_trunk: self.classifier.freeze_trunk,
        }
    }

    fn train(&self, o: &Optim, divergence: DivergenceKind) -> TrainConfig {
        TrainConfig {
            learning_rate: o.lr,
            epochs: o.epochs,
            batch_size: o.batch,
            weight_decay: 0.01,
            max_seq_len: self.max_seq_len,
            seed: self.seed,
            weights: self.weights,
            divergence,
        }
    }

    pub fn teacher_train(&self) -> TrainConfig {
        self.train(&self.teacher_optim, self.divergence)
    }

    pub fn student_train(&self, divergence: DivergenceKind) -> TrainConfig {
        self.train(&self.student_optim, divergence)
    }

    pub fn summarizer_train(&self) -> TrainConfig {
        self.train(&self.summarizer_optim, self.divergence)
    }

    pub fn classifier_train(&self) -> TrainConfig {
        self.train(&self.classifier.optim, self.divergence)
    }

    /// Distillation paths from the configured layer chains. The first
    /// stage learns from the initial teacher, later ones from the stage
    /// before.
    pub fn distill_paths(&self, vocab_size: usize) -> Vec<DistillPath> {
        self.paths
            .iter()
            .map(|chain| {
                let mut names = vec![format!("{}L", self.teacher.layers)];
                names.extend(chain.iter().map(|l| format!("{l}L")));
                let kind = if chain.len() == 1 {
                    "single".to_string()
                } else {
                    format!("{}-stage", chain.len())
                };
                DistillPath {
                    name: format!("{kind} {}", names.join("->")),
                    stages: chain
                        .iter()
                        .enumerate()
                        .map(|(i, &layers)| Stage {
                            teacher: if i == 0 {
                                StageTeacher::Initial
                            } else {
                                StageTeacher::Previous
                            },
                            student: self.student_config(vocab_size, layers),
                            train: self.student_train(self.divergence),
                        })
                        .collect(),
                }
            })
            .collect()
    }
}

fn view_name(v: JobView) -> &'static str {
    match v {
        JobView::Compressed => "compressed",
        JobView::Full => "full",
    }
}

fn parse_view(key: &str, v: &str) -> Result<JobView> {
    match v {
        "compressed" => Ok(JobView::Compressed),
        "full" => Ok(JobView::Full),
        _ => Err(Error::config(
            key,
            format!("expected compressed or full, got `{v}`"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = PipelineConfig::default();
        let back = PipelineConfig::parse_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_and_comments() {
        let cfg = PipelineConfig::parse_text(
            "# desk run\nseed = 3\ncls.structure = twotower\ncls.interaction = dot\npaths = 2,1\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(
            cfg.classifier.structure,
            Structure::TwoTower(Interaction::DotProduct)
        );
        assert_eq!(cfg.paths, vec![vec![2, 1]]);
        assert_eq!(cfg.distill_paths(100)[0].name, "2-stage 4L->2L->1L");
    }

    #[test]
    fn unknown_keys_fail() {
        let err = PipelineConfig::parse_text("teacher.depth = 3").unwrap_err();
        assert!(err.to_string().contains("teacher.depth"));
        assert!(PipelineConfig::parse_text("seed 3").is_err());
        assert!(PipelineConfig::parse_text("compression = model").is_err());
    }

    #[test]
    fn missing_checkpoint_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "classifier.checkpoint = nowhere.ckpt\n").unwrap();
        let err = PipelineConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("nowhere.ckpt"));
    }
}
