use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use fitdistill::distill::{
    corpus_loss, distill_explanation, load_checkpoint, save_checkpoint, train_sft, Checkpoint,
    Provenance,
};
use fitdistill::domain::{
    gen_job, oracle_records, quality_filter, Corpus, FitLabel, GeneratorConfig, JobView, Vocabulary,
};
use fitdistill::eval::{classification_report, eval_explanations, lcs_len, rouge_l, rouge_n};
use fitdistill::models::{EncoderClassifier, LanguageModel, ModelRole};
use fitdistill::numerics::{relative_error, Tape, Tensor};
use fitdistill::objectives::{
    classification_loss, classification_loss_grad, divergence, kd_loss, kd_loss_grad, sft_loss,
    sft_loss_grad, softmax_rows, DivergenceKind, LossWeights,
};
use fitdistill::pipeline::{
    bench, datagen, distill_student, requirement_recall, run_paths, summarize_job,
    train_classifiers, train_teacher, BenchRequest, ClsRun, Compressor, DataBundle, PipelineConfig,
    Server,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Written straight to stdout so the lines show without `--nocapture`.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
    let _ = out.flush();
}

struct Check {
    pass: bool,
    detail: String,
}

impl Check {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Trained artifacts shared across criteria.
#[derive(Default)]
struct State {
    cfg: PipelineConfig,
    data: Option<DataBundle>,
    teacher: Option<Checkpoint>,
    cls_runs: Vec<ClsRun>,
    explainer: Option<LanguageModel>,
}

impl State {
    fn data(&self) -> &DataBundle {
        self.data.as_ref().expect("datasets were generated")
    }

    fn teacher(&self) -> LanguageModel {
        self.teacher
            .as_ref()
            .expect("teacher was trained")
            .language_model()
            .unwrap()
    }
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

fn c1_divergences(_: &mut State) -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let ln2 = std::f64::consts::LN_2;
    let mut worst = [0.0f64; 4];
    let mut failures = Vec::new();
    for case in 0..10_000 {
        let n = rng.gen_range(2..=64);
        let p = random_distribution(&mut rng, n);
        let q = random_distribution(&mut rng, n);
        let d = |k, a: &[f64], b: &[f64]| divergence(k, a, b).unwrap();
        let mut fwd = BTreeMap::new();
        for k in DivergenceKind::ALL {
            let pq = d(k, &p, &q);
            if pq < 0.0 {
                failures.push(format!("case {case}: {k} negative {pq}"));
            }
            let pp = d(k, &p, &p);
            worst[0] = worst[0].max(pp.abs());
            if pp.abs() >= 1e-10 {
                failures.push(format!("case {case}: {k}(p,p) = {pp}"));
            }
            fwd.insert(k.name(), (pq, d(k, &q, &p)));
        }
        let (js, js_r) = fwd["JS"];
        let (tvd, tvd_r) = fwd["TVD"];
        let (skl, skl_r) = fwd["SKL"];
        let (fkl, fkl_r) = fwd["FKL"];
        if js > ln2 + 1e-12 || tvd > 1.0 + 1e-12 {
            failures.push(format!("case {case}: bound violated js {js} tvd {tvd}"));
        }
        let asym = (js - js_r)
            .abs()
            .max((tvd - tvd_r).abs())
            .max((skl - skl_r).abs());
        worst[1] = worst[1].max(asym);
        let split = (skl - (fkl + fkl_r)).abs();
        worst[2] = worst[2].max(split);
        if asym > 1e-12 || split > 1e-12 {
            failures.push(format!(
                "case {case}: asymmetry {asym:e}, skl split {split:e}"
            ));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Check::new(
        failures.is_empty() && secs < 10.0,
        format!(
            "10000 pairs, max d(p,p) {:.1e}, max asymmetry {:.1e}, max |skl-fkl-rkl| {:.1e}, {secs:.2}s{}",
            worst[0],
            worst[1],
            worst[2],
            failures.first().map(|f| format!(", first failure: {f}")).unwrap_or_default()
        ),
    )
}

const FD_STEP: f64 = 1e-5;

/// Worst per-coordinate relative error between `grad` and central
/// differences of `f` at `x`.
fn fd_worst(f: impl Fn(&Tensor) -> f64, x: &Tensor, grad: &Tensor) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = f(&probe);
        probe.data_mut()[i] = orig - FD_STEP;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(grad.data()[i], numeric));
    }
    worst
}

fn random_logits(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-3.0..3.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// True when no teacher/student probability pair is within `margin`, so
/// the TVD kinks stay out of the finite-difference stencil.
fn tie_free(p: &Tensor, z: &Tensor, margin: f64) -> bool {
    let q = softmax_rows(z);
    p.data()
        .iter()
        .zip(q.data())
        .all(|(a, b)| (a - b).abs() > margin)
}

/// `count` coordinates of one parameter tensor: the largest-gradient one
/// plus random ones with nonnegligible gradient.
fn spot_coords(rng: &mut ChaCha8Rng, grad: &Tensor, count: usize) -> Vec<usize> {
    let g = grad.data();
    let mut best = 0;
    for i in 0..g.len() {
        if g[i].abs() > g[best].abs() {
            best = i;
        }
    }
    let mut out = vec![best];
    let eligible: Vec<usize> = (0..g.len()).filter(|&i| g[i].abs() > 1e-6).collect();
    out.extend(eligible.choose_multiple(rng, count.saturating_sub(1)));
    out
}

fn lm_spot_check(rng: &mut ChaCha8Rng, model: &LanguageModel, seq: &[u32], start: usize) -> f64 {
    let targets = &seq[start + 1..];
    let input = &seq[..seq.len() - 1];
    let len = targets.len();
    let mask = vec![true; len];
    let mut tape = Tape::new();
    let fwd = model.forward_on(&mut tape, input, start, len).unwrap();
    let logits = tape.value(fwd.logits).clone();
    let (value, g) = sft_loss_grad(&logits, targets, &mask).unwrap();
    let loss = tape.attach_loss(fwd.logits, value, g).unwrap();
    let mut grads = tape.backward(loss).unwrap();
    let analytic = model.params.collect_grads(&mut grads, &fwd.leaves);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, grad) in analytic.iter().enumerate() {
        for c in spot_coords(rng, grad, 3) {
            let orig = model.params.get(k).data()[c];
            let mut eval = |v: f64| {
                probe.params.get_mut(k).data_mut()[c] = v;
                sft_loss(
                    &probe.logit_rows(input, start, len).unwrap(),
                    targets,
                    &mask,
                )
                .unwrap()
            };
            let numeric = (eval(orig + FD_STEP) - eval(orig - FD_STEP)) / (2.0 * FD_STEP);
            probe.params.get_mut(k).data_mut()[c] = orig;
            worst = worst.max(relative_error(grad.data()[c], numeric));
        }
    }
    worst
}

fn cls_spot_check(
    rng: &mut ChaCha8Rng,
    model: &EncoderClassifier,
    job: &[u32],
    profile: Option<&[u32]>,
    label: usize,
) -> f64 {
    let mut tape = Tape::new();
    let fwd = model.forward_on(&mut tape, job, profile).unwrap();
    let logits = tape.value(fwd.logits).data().to_vec();
    let (value, g) = classification_loss_grad(&logits, label).unwrap();
    let g = Tensor::new(tape.value(fwd.logits).shape().to_vec(), g).unwrap();
    let loss = tape.attach_loss(fwd.logits, value, g).unwrap();
    let mut grads = tape.backward(loss).unwrap();
    let analytic = model.params.collect_grads(&mut grads, &fwd.leaves);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, grad) in analytic.iter().enumerate() {
        for c in spot_coords(rng, grad, 2) {
            let orig = model.params.get(k).data()[c];
            let mut eval = |v: f64| {
                probe.params.get_mut(k).data_mut()[c] = v;
                classification_loss(&probe.predict(job, profile).unwrap(), label).unwrap()
            };
            let numeric = (eval(orig + FD_STEP) - eval(orig - FD_STEP)) / (2.0 * FD_STEP);
            probe.params.get_mut(k).data_mut()[c] = orig;
            worst = worst.max(relative_error(grad.data()[c], numeric));
        }
    }
    worst
}

fn c2_gradients(state: &mut State) -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let mut bump = |name: &str, v: f64| {
        let e = worst.entry(name.to_string()).or_insert(0.0);
        *e = e.max(v);
    };
    for _ in 0..100 {
        let rows = rng.gen_range(1..=4);
        let cols = rng.gen_range(2..=12);
        let z = random_logits(&mut rng, rows, cols);
        let targets: Vec<u32> = (0..rows).map(|_| rng.gen_range(0..cols) as u32).collect();
        let mut mask: Vec<bool> = (0..rows).map(|_| rng.gen_bool(0.8)).collect();
        mask[0] = true;
        let (_, g) = sft_loss_grad(&z, &targets, &mask).unwrap();
        bump(
            "sft",
            fd_worst(|x| sft_loss(x, &targets, &mask).unwrap(), &z, &g),
        );

        let logits: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let label = rng.gen_range(0..3);
        let (_, g) = classification_loss_grad(&logits, label).unwrap();
        let x = Tensor::vector(logits);
        bump(
            "classification",
            fd_worst(
                |x| classification_loss(&fitdistill::numerics::softmax(x.data()), label).unwrap(),
                &x,
                &Tensor::vector(g),
            ),
        );

        for kind in DivergenceKind::ALL {
            let (teacher, z) = loop {
                let teacher = random_logits(&mut rng, rows, cols);
                let z = random_logits(&mut rng, rows, cols);
                if kind != DivergenceKind::Tvd || tie_free(&softmax_rows(&teacher), &z, 1e-3) {
                    break (teacher, z);
                }
            };
            let p = softmax_rows(&teacher);
            let (_, g) = kd_loss_grad(kind, &p, &z, &mask).unwrap();
            bump(
                &format!("kd/{kind}"),
                fd_worst(|x| kd_loss(kind, &teacher, x, &mask).unwrap(), &z, &g),
            );
        }
    }
    let loss_ok = worst.values().all(|&v| v <= 1e-4);

    let vocab = Vocabulary::new();
    let cfg = &state.cfg;
    let mut lm_cfg = cfg.student_config(vocab.len(), 2);
    lm_cfg.seed = 5;
    let lm = LanguageModel::init(lm_cfg, ModelRole::Student).unwrap();
    let record = &state.data().seed[0];
    let seq = record.sequence();
    let lm_err = lm_spot_check(&mut rng, &lm, &seq, record.prompt_tokens.len() - 1);

    let mut cls_err: f64 = 0.0;
    let ex = &fitdistill::pipeline::cls_examples(
        &vocab,
        &state.data().corpus,
        &state.data().cls_train[..1],
        JobView::Compressed,
    )
    .unwrap()[0];
    for (structure, pooling) in fitdistill::pipeline::CLASSIFIER_VARIANTS {
        let spec = cfg.classifier_spec(vocab.len(), structure, pooling);
        let model = EncoderClassifier::init(spec).unwrap();
        let (job, profile) = match structure {
            fitdistill::models::Structure::SeqCls => (ex.joint.as_slice(), None),
            _ => (ex.job.as_slice(), Some(ex.profile.as_slice())),
        };
        cls_err = cls_err.max(cls_spot_check(
            &mut rng,
            &model,
            job,
            profile,
            ex.label.index(),
        ));
    }
    let secs = t.elapsed().as_secs_f64();
    let summary: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    Check::new(
        loss_ok && lm_err <= 1e-3 && cls_err <= 1e-3 && secs < 120.0,
        format!(
            "100 cases each, worst rel err [{}], model spot checks lm {lm_err:.1e} cls {cls_err:.1e}, {secs:.1}s",
            summary.join(", ")
        ),
    )
}

fn c3_teacher_clone(state: &mut State) -> Check {
    let teacher = state.teacher();
    let clone = LanguageModel::from_params(
        teacher.config.clone(),
        teacher.params.clone(),
        ModelRole::Student,
    )
    .unwrap();
    let data = state.data();
    let records = data.kd_eval(&state.cfg);
    let weights = LossWeights {
        lambda_sft: 0.0,
        lambda_kd: 1.0,
    };
    let mut worst_kd: f64 = 0.0;
    for kind in DivergenceKind::ALL {
        let (report, _) = corpus_loss(&teacher, &clone, records, &weights, kind).unwrap();
        worst_kd = worst_kd.max(report.kd);
    }
    let prompts = data.eval_prompts(&state.cfg);
    let max_new = state.cfg.max_seq_len;
    let mut same = true;
    let mut references = Vec::new();
    for p in &prompts {
        let a = teacher.greedy_decode(p, max_new).unwrap();
        let b = clone.greedy_decode(p, max_new).unwrap();
        same &= a == b;
        references.push(a[p.len()..].to_vec());
    }
    let eval = eval_explanations(&clone, &prompts, &references, max_new).unwrap();
    let s = eval.scores;
    let rouge_one = s.rouge1.f1 == 1.0 && s.rouge2.f1 == 1.0 && s.rouge_l.f1 == 1.0;
    Check::new(
        worst_kd < 1e-10 && same && rouge_one,
        format!(
            "max kd {worst_kd:.1e}, identical decodes {same}, rouge f1 {}/{}/{}",
            s.rouge1.f1, s.rouge2.f1, s.rouge_l.f1
        ),
    )
}

fn c4_convergence(state: &mut State) -> Check {
    let t = Instant::now();
    let cfg = state.cfg.clone();
    let vocab = Vocabulary::new();
    let mut detail = vec![format!(
        "vocab {}, max_seq_len {}",
        vocab.len(),
        cfg.max_seq_len
    )];
    let mut pass = vocab.len() <= 512 && cfg.max_seq_len <= 256;
    let (teacher, _) = train_teacher(&cfg, state.data()).unwrap();
    detail.push(format!(
        "teacher {} on {} records",
        teacher.language_model().unwrap().config.label(),
        state.data().seed.len()
    ));
    pass &= state.data().seed.len() == 512;
    for kind in DivergenceKind::ALL {
        let (ckpt, history) =
            distill_student(&cfg, &teacher, state.data(), cfg.student.layers, kind).unwrap();
        let kd = history.eval_kd();
        let first = kd[0];
        let best_ratio = kd[1..].iter().fold(f64::INFINITY, |a, &b| a.min(b)) / first;
        pass &= kd.len() == cfg.student_optim.epochs + 1 && best_ratio <= 0.5;
        detail.push(format!("{kind} kd {first:.4} -> ratio {best_ratio:.3}"));
        if kind == cfg.divergence {
            state.explainer = Some(ckpt.language_model().unwrap());
        }
    }
    let student_cfg = cfg.student_config(vocab.len(), cfg.student.layers);
    let mut train = cfg.student_train(cfg.divergence);
    train.weights = LossWeights {
        lambda_sft: 1.0,
        lambda_kd: 0.0,
    };
    let provenance = Provenance {
        path: "sft check".into(),
        stage: 1,
        config_digest: train.digest(),
        final_loss: None,
    };
    let (kd0, kd0_hist) = distill_explanation(
        &teacher,
        &student_cfg,
        &state.data().seed,
        state.data().kd_eval(&cfg),
        &train,
        provenance,
    )
    .unwrap();
    let (sft, sft_hist) = train_sft(&student_cfg, &state.data().seed, &train, "sft check").unwrap();
    let bits = |h: &fitdistill::distill::TrainHistory| -> Vec<u64> {
        h.losses().iter().map(|l| l.sft.to_bits()).collect()
    };
    let identical = kd0.params.bitwise_eq(&sft.params) && bits(&kd0_hist) == bits(&sft_hist);
    pass &= identical;
    state.teacher = Some(teacher);
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 600.0;
    detail.push(format!(
        "lambda_kd=0 bit-identical to sft {identical}, {secs:.0}s"
    ));
    Check::new(pass, detail.join(", "))
}

fn c5_paths(state: &mut State) -> Check {
    let dir = tempfile::tempdir().unwrap();
    let teacher = state.teacher();
    let (outcomes, report) =
        run_paths(&state.cfg, &teacher, state.data(), Some(dir.path())).unwrap();
    let names: Vec<String> = outcomes.iter().map(|(p, _)| p.name.clone()).collect();
    let mut pass = report.rows().len() == 2
        && names
            .iter()
            .any(|n| n.starts_with("single") && n.ends_with("4L->1L"))
        && names
            .iter()
            .any(|n| n.starts_with("2-stage") && n.ends_with("4L->2L->1L"));
    let prompts = state.data().eval_prompts(&state.cfg);
    let max_new = state.cfg.max_seq_len;
    let references: Vec<Vec<u32>> = prompts
        .iter()
        .map(|p| teacher.greedy_decode(p, max_new).unwrap()[p.len()..].to_vec())
        .collect();
    let mut worst: f64 = 0.0;
    for (i, (path, _)) in outcomes.iter().enumerate() {
        let ckpt = dir
            .path()
            .join(format!("path{}", i + 1))
            .join(format!("stage{}.ckpt", path.stages.len()));
        let model = load_checkpoint(&ckpt).unwrap().language_model().unwrap();
        let s = eval_explanations(&model, &prompts, &references, max_new)
            .unwrap()
            .scores;
        for (col, v) in [
            ("rouge1", s.rouge1.f1),
            ("rouge2", s.rouge2.f1),
            ("rougeL", s.rouge_l.f1),
            ("nll", s.mean_nll),
        ] {
            let reported = report.numbers(col)[i].expect("numeric column");
            worst = worst.max((reported - v).abs());
        }
    }
    pass &= worst <= 1e-12;
    Check::new(
        pass,
        format!(
            "paths [{}], max |report - independent eval| {worst:.1e}",
            names.join("; ")
        ),
    )
}

fn brute_rouge_n(c: &[u8], r: &[u8], n: usize) -> (f64, f64, f64) {
    let grams = |s: &[u8]| -> Vec<Vec<u8>> {
        if s.len() < n {
            Vec::new()
        } else {
            (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
        }
    };
    let (cg, rg) = (grams(c), grams(r));
    let mut used = vec![false; rg.len()];
    let mut overlap = 0usize;
    for g in &cg {
        if let Some(j) = (0..rg.len()).find(|&j| !used[j] && rg[j] == *g) {
            used[j] = true;
            overlap += 1;
        }
    }
    prf(overlap, cg.len(), rg.len())
}

fn prf(overlap: usize, cand: usize, refs: usize) -> (f64, f64, f64) {
    let p = if cand == 0 {
        0.0
    } else {
        overlap as f64 / cand as f64
    };
    let r = if refs == 0 {
        0.0
    } else {
        overlap as f64 / refs as f64
    };
    let f = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    (p, r, f)
}

fn is_subsequence(sub: &[u8], of: &[u8]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

/// Longest subsequence of `a` found in `b`, by enumerating every subset.
fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<u8> = (0..a.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| a[i])
            .collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

fn c6_rouge(_: &mut State) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut mismatches = 0;
    for _ in 0..100 {
        let alphabet = rng.gen_range(2..=5u8);
        let seq = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            let len = rng.gen_range(0..=10);
            (0..len).map(|_| rng.gen_range(0..alphabet)).collect()
        };
        let (c, r) = (seq(&mut rng), seq(&mut rng));
        for n in [1, 2] {
            let got = rouge_n(&c, &r, n).unwrap();
            if (got.precision, got.recall, got.f1) != brute_rouge_n(&c, &r, n) {
                mismatches += 1;
            }
        }
        let lcs = brute_lcs(&c, &r);
        let got = rouge_l(&c, &r);
        if lcs_len(&c, &r) != lcs
            || (got.precision, got.recall, got.f1) != prf(lcs, c.len(), r.len())
        {
            mismatches += 1;
        }
    }
    let c: Vec<&str> = "the cat sat on mat".split(' ').collect();
    let r: Vec<&str> = "the cat is on the mat".split(' ').collect();
    let s = rouge_n(&c, &r, 1).unwrap();
    let round6 = |v: f64| (v * 1e6).round() / 1e6;
    let example =
        round6(s.precision) == 0.8 && round6(s.recall) == 0.666667 && round6(s.f1) == 0.727273;
    Check::new(
        mismatches == 0 && example,
        format!(
            "100 pairs, {mismatches} mismatches vs brute force; example P {:.6} R {:.6} F1 {:.6}",
            s.precision, s.recall, s.f1
        ),
    )
}

fn c7_classifier(state: &mut State) -> Check {
    use FitLabel::*;
    let hand = classification_report(&[High, Medium, Medium, Low], &[High, High, Medium, Low])
        .unwrap()
        .weighted_f1;
    let (runs, report) = train_classifiers(&state.cfg, state.data(), None).unwrap();
    let main = &runs[0];
    let variants = report.rows().len();
    let names: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "{} {} {}",
                r.structure.name(),
                r.pooling.name(),
                r.structure.interaction_name()
            )
        })
        .collect();
    let pass = state.data().cls_train.len() == 3000
        && main.structure == fitdistill::models::Structure::SeqCls
        && main.pooling == fitdistill::models::Pooling::LastToken
        && main.report.accuracy >= 0.90
        && main.report.weighted_f1 >= 0.88
        && hand == 0.75
        && variants == 4;
    let detail = format!(
        "{} train pairs, SeqCls Last accuracy {:.4} (>= 0.90) weighted F1 {:.4} (>= 0.88); hand example {hand}; report rows {variants}: {}",
        state.data().cls_train.len(),
        main.report.accuracy,
        main.report.weighted_f1,
        runs.iter()
            .zip(&names)
            .map(|(r, n)| format!("{n} {:.3}", r.report.accuracy))
            .collect::<Vec<_>>()
            .join(", ")
    );
    state.cls_runs = runs;
    Check::new(pass, detail)
}

fn c8_compression(state: &mut State) -> Check {
    let vocab = Vocabulary::new();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut min_recall: f64 = 1.0;
    let mut ratio = 0.0;
    for i in 0..1000 {
        let job = gen_job(&mut rng, &GeneratorConfig::default(), format!("job{i}")).unwrap();
        let s = summarize_job(&vocab, &job.raw_text(), &Compressor::Rule).unwrap();
        min_recall = min_recall.min(requirement_recall(&vocab, &job, &s.tokens));
        ratio += s.ratio / 1000.0;
    }
    let agreement = state.cls_runs.first().map(|r| r.agreement);
    Check::new(
        min_recall == 1.0 && ratio <= 0.30 && agreement.is_some_and(|a| a >= 0.95),
        format!(
            "1000 jobs, min skill recall {min_recall}, mean ratio {ratio:.4} (<= 0.30), compressed/full agreement {} (>= 0.95)",
            agreement.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into())
        ),
    )
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Files whose content is a wall-clock measurement.
fn timing_file(rel: &Path) -> bool {
    rel.starts_with("manifests") || rel.file_stem().is_some_and(|s| s == "bench")
}

fn cli(out: &Path, args: &[&str]) -> bool {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.cfg");
    Command::new(env!("CARGO_BIN_EXE_fitdistill"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn c9_determinism(state: &mut State) -> Check {
    let commands: [&[&str]; 8] = [
        &["datagen"],
        &["train-teacher"],
        &["distill-exp"],
        &["distill-cls"],
        &["train-summarizer"],
        &["run-path"],
        &["eval"],
        &["bench"],
    ];
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut ok = true;
    for dir in &runs {
        for args in commands {
            ok &= cli(dir.path(), args);
        }
    }
    let (a, b) = (tree(runs[0].path()), tree(runs[1].path()));
    let compared: Vec<&PathBuf> = a.keys().filter(|k| !timing_file(k)).collect();
    let differing: Vec<String> = compared
        .iter()
        .filter(|k| b.get(**k) != a.get(**k))
        .map(|k| k.display().to_string())
        .collect();
    let same_listing = a.keys().eq(b.keys());

    let ckpt = state.teacher.as_ref().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("teacher.ckpt");
    save_checkpoint(ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let round_trip =
        loaded.params.bitwise_eq(&ckpt.params) && loaded.to_bytes() == fs::read(&path).unwrap();

    let vocab = Vocabulary::new();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let corpus = Corpus::generate(&mut rng, &GeneratorConfig::default(), 300, 0, 4).unwrap();
    let records =
        oracle_records(&vocab, &corpus, JobView::Compressed, state.cfg.max_seq_len).unwrap();
    let once = quality_filter(&vocab, &records, &corpus).unwrap();
    let twice = quality_filter(&vocab, &once.kept, &corpus).unwrap();
    let filter_ok = once.kept == records && twice.kept == once.kept && twice.rejected.is_empty();

    Check::new(
        ok && same_listing && differing.is_empty() && !compared.is_empty() && round_trip && filter_ok,
        format!(
            "cli commands ok {ok}, {} files compared, {} differ{}, checkpoint round trip {round_trip}, quality filter keeps {}/{} and is idempotent {filter_ok}",
            compared.len(),
            differing.len(),
            differing.first().map(|d| format!(" (first {d})")).unwrap_or_default(),
            once.kept.len(),
            records.len()
        ),
    )
}

fn c10_bench(state: &mut State) -> Check {
    let Some(classifier) = state
        .cls_runs
        .first()
        .map(|r| r.checkpoint.classifier().unwrap())
    else {
        return Check::new(false, "no classifier trained");
    };
    let explainer = state.explainer.clone();
    let server = Server::new(Compressor::Rule, Some(classifier), explainer);
    let data = state.data();
    let requests: Vec<BenchRequest> = data
        .cls_heldout
        .iter()
        .take(16)
        .map(|r| {
            let (job, profile) = data.corpus.pair(r).unwrap();
            BenchRequest {
                job: job.raw_text(),
                profile: profile.raw_text(),
            }
        })
        .collect();
    let mix = &state.cfg.bench;
    let rows = bench(&server, &requests, mix).unwrap();
    let rel: HashMap<&str, f64> = rows
        .iter()
        .map(|r| (r.module.as_str(), r.relative))
        .collect();
    Check::new(
        (mix.classification, mix.summarization, mix.explanation) == (30, 4, 1)
            && rel["explanation"] == 1.0
            && rel["classification"] >= 10.0,
        format!(
            "mix {}:{}:{}, relative throughput classification {:.1}x summarization {:.1}x explanation {:.1}x",
            mix.classification,
            mix.summarization,
            mix.explanation,
            rel["classification"],
            rel["summarization"],
            rel["explanation"]
        ),
    )
}

type Criterion = fn(&mut State) -> Check;

#[test]
fn acceptance_criteria() {
    let mut state = State {
        cfg: PipelineConfig::default(),
        ..State::default()
    };
    let t = Instant::now();
    state.data = Some(datagen(&state.cfg).unwrap());
    emit(&format!(
        "datasets generated in {:.1}s",
        t.elapsed().as_secs_f64()
    ));
    let criteria: [(usize, &str, Criterion); 10] = [
        (1, "divergence suite", c1_divergences),
        (2, "gradient suite", c2_gradients),
        (4, "distillation convergence", c4_convergence),
        (3, "teacher clone", c3_teacher_clone),
        (5, "multi-stage paths", c5_paths),
        (6, "rouge oracles", c6_rouge),
        (7, "classifier learnability", c7_classifier),
        (8, "compression fidelity", c8_compression),
        (9, "determinism and persistence", c9_determinism),
        (10, "benchmark asymmetry", c10_bench),
    ];
    let mut results = Vec::new();
    for (id, name, run) in criteria {
        let t = Instant::now();
        let check = catch_unwind(AssertUnwindSafe(|| run(&mut state))).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Check::new(false, format!("panicked: {msg}"))
        });
        emit(&format!(
            "criterion {id:>2} {} {name}: {} [{:.1}s]",
            if check.pass { "PASS" } else { "FAIL" },
            check.detail,
            t.elapsed().as_secs_f64()
        ));
        results.push((id, check.pass));
    }
    results.sort();
    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
