use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use fitdistill::distill::{load_checkpoint, save_checkpoint, Checkpoint};
use fitdistill::domain::{parse_explanation, Corpus, Vocabulary};
use fitdistill::eval::{emit_report, eval_explanations, strip_eos, Report};
use fitdistill::objectives::DivergenceKind;
use fitdistill::pipeline::{
    bench, bench_report, datagen, distill_student, run_paths, train_classifiers, train_summarizer,
    train_teacher, BenchRequest, CompressionMode, DataBundle, PipelineConfig, RunManifest, Server,
    BENCH_FIRST,
};

#[derive(Parser, Debug)]
#[command(
    name = "fitdistill",
    version,
    about = "Desk-scale fit classification and explanation distillation"
)]
struct Cli {
    /// Config file of `key = value` lines; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory for data, checkpoints and reports
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,

    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Machine,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the seed, held-out and classification datasets
    Datagen,
    /// SFT the teacher on the seed set
    TrainTeacher,
    /// Distill one explanation student from the teacher
    DistillExp {
        /// Teacher checkpoint (default: <out>/teacher.ckpt)
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Student layers (default: student.layers)
        #[arg(long)]
        layers: Option<usize>,
        /// FKL, JS, TVD or SKL (default: kd.divergence)
        #[arg(long)]
        divergence: Option<DivergenceKind>,
    },
    /// Train the fit classifier and its ablation variants
    DistillCls {
        /// Teacher checkpoint, needed for `cls.labels = teacher`
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// SFT the optional job-compression model
    TrainSummarizer,
    /// Run every configured distillation path and write the path report
    RunPath {
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Score an explanation checkpoint against the held-out oracle references
    Eval {
        /// Explanation checkpoint (default: <out>/student.ckpt)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Answer one request with the serving models
    Serve {
        /// Raw job text
        #[arg(long)]
        job: String,
        /// Profile text, e.g. `python 3 ; sql 5 ;`
        #[arg(long)]
        profile: String,
        /// Also decode an explanation
        #[arg(long)]
        explain: bool,
    },
    /// Replay the classification/summarization/explanation request mix
    Bench,
    /// Print every report in the run directory
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Datagen => "datagen",
            Command::TrainTeacher => "train-teacher",
            Command::DistillExp { .. } => "distill-exp",
            Command::DistillCls { .. } => "distill-cls",
            Command::TrainSummarizer => "train-summarizer",
            Command::RunPath { .. } => "run-path",
            Command::Eval { .. } => "eval",
            Command::Serve { .. } => "serve",
            Command::Bench => "bench",
            Command::Report => "report",
        }
    }
}

struct Ctx {
    cfg: PipelineConfig,
    out: PathBuf,
    format: Format,
    artifacts: Vec<PathBuf>,
}

impl Ctx {
    fn data(&self) -> Result<DataBundle> {
        DataBundle::load(&self.out.join("data")).context("loading datasets (run `datagen` first)")
    }

    fn checkpoint(&self, explicit: Option<&PathBuf>, default: &str) -> Result<Checkpoint> {
        let path = explicit.cloned().unwrap_or_else(|| self.out.join(default));
        load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))
    }

    fn save(&mut self, ckpt: &Checkpoint, name: &str) -> Result<()> {
        let path = self.out.join(name);
        save_checkpoint(ckpt, &path)?;
        self.artifacts.push(path);
        Ok(())
    }

    fn emit(&mut self, report: &Report, name: &str) -> Result<()> {
        let (table, machine) = emit_report(report, &self.out.join("reports").join(name))?;
        self.artifacts.extend([table, machine]);
        self.print(report);
        Ok(())
    }

    fn print(&self, report: &Report) {
        match self.format {
            Format::Table => print!("{}", report.to_table()),
            Format::Machine => print!("{}", report.to_jsonl()),
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn single_row(columns: &[&str], values: Vec<Value>) -> Result<Report> {
    let mut report = Report::new(columns)?;
    report.push_values(columns.iter().copied().zip(values))?;
    Ok(report)
}

fn server(ctx: &Ctx) -> Result<Server> {
    let mut cfg = ctx.cfg.clone();
    if cfg.classifier_checkpoint.is_none() {
        cfg.classifier_checkpoint = Some(ctx.out.join("classifier.ckpt"));
    }
    if cfg.explainer_checkpoint.is_none() {
        cfg.explainer_checkpoint = Some(ctx.out.join("student.ckpt"));
    }
    if cfg.compression == CompressionMode::Model && cfg.summarizer_checkpoint.is_none() {
        cfg.summarizer_checkpoint = Some(ctx.out.join("summarizer.ckpt"));
    }
    Server::load(&cfg).context("loading serving checkpoints")
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(&cli)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let mut ctx = Ctx {
        cfg,
        out: cli.out.clone(),
        format: cli.format,
        artifacts: Vec::new(),
    };
    let vocab = Vocabulary::new();
    match &cli.command {
        Command::Datagen => {
            let data = datagen(&ctx.cfg)?;
            ctx.artifacts.extend(data.save(&ctx.out.join("data"))?);
            let report = single_row(
                &["seed", "heldout", "cls_train", "cls_heldout", "jobs"],
                vec![
                    data.seed.len().into(),
                    data.heldout.len().into(),
                    data.cls_train.len().into(),
                    data.cls_heldout.len().into(),
                    data.corpus.jobs.len().into(),
                ],
            )?;
            ctx.print(&report);
        }
        Command::TrainTeacher => {
            let data = ctx.data()?;
            let (ckpt, history) = train_teacher(&ctx.cfg, &data)?;
            ctx.save(&ckpt, "teacher.ckpt")?;
            let last = history.final_loss().map_or(f64::NAN, |l| l.sft);
            ctx.print(&single_row(
                &["model", "epochs", "final_sft"],
                vec![
                    ckpt.language_model()?.config.label().into(),
                    ctx.cfg.teacher_optim.epochs.into(),
                    last.into(),
                ],
            )?);
        }
        Command::DistillExp {
            teacher,
            layers,
            divergence,
        } => {
            let teacher = ctx.checkpoint(teacher.as_ref(), "teacher.ckpt")?;
            let data = ctx.data()?;
            let layers = layers.unwrap_or(ctx.cfg.student.layers);
            let divergence = divergence.unwrap_or(ctx.cfg.divergence);
            let (ckpt, history) = distill_student(&ctx.cfg, &teacher, &data, layers, divergence)?;
            ctx.save(&ckpt, "student.ckpt")?;
            let mut report = Report::new(&["epoch", "sft", "kd", "combined", "eval_kd"])?;
            for e in &history.epochs {
                report.push_values([
                    ("epoch", Value::from(e.epoch)),
                    ("sft", Value::from(e.train.sft)),
                    ("kd", Value::from(e.train.kd)),
                    ("combined", Value::from(e.train.combined)),
                    ("eval_kd", e.eval_kd.map_or(Value::Null, Value::from)),
                ])?;
            }
            ctx.emit(&report, "distill_exp")?;
        }
        Command::DistillCls { teacher } => {
            let data = ctx.data()?;
            let teacher = match (&ctx.cfg.classifier.labels, teacher) {
                (fitdistill::pipeline::LabelSource::Teacher, t) => Some(
                    ctx.checkpoint(t.as_ref(), "teacher.ckpt")?
                        .language_model()?,
                ),
                _ => None,
            };
            let (runs, report) = train_classifiers(&ctx.cfg, &data, teacher.as_ref())?;
            ctx.save(&runs[0].checkpoint, "classifier.ckpt")?;
            for (i, r) in runs.iter().enumerate().skip(1) {
                ctx.save(&r.checkpoint, &format!("classifier_variant{i}.ckpt"))?;
            }
            let mut agreement =
                Report::new(&["structure", "pooling", "interaction", "view_agreement"])?;
            for r in &runs {
                agreement.push_values([
                    ("structure", Value::from(r.structure.name())),
                    ("pooling", Value::from(r.pooling.name())),
                    ("interaction", Value::from(r.structure.interaction_name())),
                    ("view_agreement", Value::from(r.agreement)),
                ])?;
            }
            ctx.emit(&report, "classification")?;
            ctx.emit(&agreement, "view_agreement")?;
        }
        Command::TrainSummarizer => {
            let data = ctx.data()?;
            let (ckpt, _) = train_summarizer(&ctx.cfg, &data)?;
            ctx.save(&ckpt, "summarizer.ckpt")?;
        }
        Command::RunPath { teacher } => {
            let teacher = ctx
                .checkpoint(teacher.as_ref(), "teacher.ckpt")?
                .language_model()?;
            let data = ctx.data()?;
            let dir = ctx.out.join("paths");
            let (outcomes, report) = run_paths(&ctx.cfg, &teacher, &data, Some(&dir))?;
            for (i, (_, o)) in outcomes.iter().enumerate() {
                for s in 0..o.stages.len() {
                    ctx.artifacts.push(
                        dir.join(format!("path{}", i + 1))
                            .join(format!("stage{}.ckpt", s + 1)),
                    );
                }
            }
            ctx.emit(&report, "paths")?;
        }
        Command::Eval { checkpoint } => {
            let model = ctx
                .checkpoint(checkpoint.as_ref(), "student.ckpt")?
                .language_model()?;
            let data = ctx.data()?;
            let n = ctx.cfg.data.eval_records.min(data.heldout.len());
            let prompts: Vec<Vec<u32>> = data.heldout[..n]
                .iter()
                .map(|r| r.prompt_tokens.clone())
                .collect();
            let refs: Vec<Vec<u32>> = data.heldout[..n]
                .iter()
                .map(|r| strip_eos(&r.target_tokens).to_vec())
                .collect();
            let eval = eval_explanations(&model, &prompts, &refs, ctx.cfg.max_seq_len)?;
            let parsed = eval
                .outputs
                .iter()
                .filter(|o| parse_explanation(&vocab, o).is_ok())
                .count();
            let s = &eval.scores;
            let report = single_row(
                &[
                    "model",
                    "examples",
                    "nll",
                    "rouge1",
                    "rouge2",
                    "rougeL",
                    "parse_rate",
                ],
                vec![
                    model.config.label().into(),
                    n.into(),
                    s.mean_nll.into(),
                    s.rouge1.f1.into(),
                    s.rouge2.f1.into(),
                    s.rouge_l.f1.into(),
                    (parsed as f64 / n.max(1) as f64).into(),
                ],
            )?;
            ctx.emit(&report, "eval")?;
        }
        Command::Serve {
            job,
            profile,
            explain,
        } => {
            let server = server(&ctx)?;
            let result = if *explain {
                server.explain(job, profile)?
            } else {
                server.fit(job, profile)?
            };
            match ctx.format {
                Format::Machine => println!("{}", serde_json::to_string(&result)?),
                Format::Table => {
                    println!(
                        "fit: {} (rating {:.4})",
                        result.fit.label, result.fit.rating
                    );
                    println!("compressed ratio: {:.4}", result.compressed_ratio);
                    if let Some(e) = &result.explanation {
                        println!("explanation ({:?}): {}", e.status, e.text);
                    }
                    for t in &result.timings {
                        println!("{}: {:.2} ms", t.stage, t.seconds * 1e3);
                    }
                }
            }
        }
        Command::Bench => {
            let server = server(&ctx)?;
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
            let corpus = Corpus::generate(&mut rng, &ctx.cfg.generator, 16, BENCH_FIRST, 0)?;
            let requests: Vec<BenchRequest> = corpus
                .pairs
                .iter()
                .map(|(j, p)| {
                    Ok(BenchRequest {
                        job: corpus.job(j)?.raw_text(),
                        profile: corpus.profile(p)?.raw_text(),
                    })
                })
                .collect::<fitdistill::Result<_>>()?;
            let rows = bench(&server, &requests, &ctx.cfg.bench)?;
            ctx.emit(&bench_report(&rows)?, "bench")?;
        }
        Command::Report => {
            let dir = ctx.out.join("reports");
            let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            entries.sort();
            if entries.is_empty() {
                bail!("no reports in {}", dir.display());
            }
            for path in entries {
                let report = read_report(&path)?;
                if ctx.format == Format::Table {
                    println!(
                        "== {}",
                        path.file_stem().unwrap_or_default().to_string_lossy()
                    );
                }
                ctx.print(&report);
            }
        }
    }
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        config_digest: ctx.cfg.digest(),
        seed: ctx.cfg.seed,
        artifacts: ctx
            .artifacts
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let dir = ctx.out.join("manifests");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    manifest.save(&dir.join(format!("{}.json", manifest.command)))?;
    info!(
        "{} finished in {:.1}s",
        manifest.command, manifest.wall_clock_seconds
    );
    Ok(())
}

/// A report file whose columns are taken from its first row.
fn read_report(path: &Path) -> Result<Report> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = text.lines().next().context("empty report")?;
    let row: serde_json::Map<String, Value> = serde_json::from_str(first)?;
    let columns: Vec<String> = row.keys().cloned().collect();
    Ok(Report::from_jsonl(&columns, &text)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
