//! Losses: token-level NLL, the four distillation divergences, the
//! combined explanation loss and the classification cross-entropy.
//!
//! Every logarithm floors its argument at [`PROB_FLOOR`]; where the floor is
//! active the corresponding derivative is zero. All logarithms are natural.
//! Gradients are returned with respect to the *student logits*, with the
//! softmax Jacobian already applied.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, softmax, softmax_into, Tensor};

pub const PROB_FLOOR: f64 = 1e-12;

/// Allowed deviation of a probability vector's total mass from 1.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[inline]
fn ln_floor(x: f64) -> f64 {
    x.max(PROB_FLOOR).ln()
}

/// `d/dx ln(max(x, ε))`
#[inline]
fn dln_floor(x: f64) -> f64 {
    if x > PROB_FLOOR {
        1.0 / x
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DivergenceKind {
    /// Forward KL, `Σ p ln(p/q)`.
    #[serde(rename = "FKL")]
    Fkl,
    /// Jensen–Shannon, `½KL(p‖m) + ½KL(q‖m)` with `m = (p+q)/2`.
    #[serde(rename = "JS")]
    Js,
    /// Total variation, `½ Σ |p − q|`.
    #[serde(rename = "TVD")]
    Tvd,
    /// Symmetric KL, `KL(p‖q) + KL(q‖p)`.
    #[serde(rename = "SKL")]
    Skl,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 4] = [
        DivergenceKind::Js,
        DivergenceKind::Fkl,
        DivergenceKind::Tvd,
        DivergenceKind::Skl,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DivergenceKind::Fkl => "FKL",
            DivergenceKind::Js => "JS",
            DivergenceKind::Tvd => "TVD",
            DivergenceKind::Skl => "SKL",
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FKL" => Ok(DivergenceKind::Fkl),
            "JS" | "JSD" => Ok(DivergenceKind::Js),
            "TVD" => Ok(DivergenceKind::Tvd),
            "SKL" => Ok(DivergenceKind::Skl),
            other => Err(Error::parse(
                "divergence",
                format!("unknown kind `{other}` (expected FKL, JS, TVD or SKL)"),
            )),
        }
    }
}

/// Trade-off between reference supervision and teacher guidance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_sft: f64,
    pub lambda_kd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_sft: 0.1,
            lambda_kd: 0.9,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_sft: f64, lambda_kd: f64) -> Result<Self> {
        let w = Self {
            lambda_sft,
            lambda_kd,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("lambda_sft", self.lambda_sft),
            ("lambda_kd", self.lambda_kd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(
                    field,
                    format!("must be a nonnegative finite number, got {v}"),
                ));
            }
        }
        if self.lambda_sft + self.lambda_kd <= 0.0 {
            return Err(Error::config("lambda_sft + lambda_kd", "must be positive"));
        }
        Ok(())
    }

    pub fn combine(&self, sft: f64, kd: f64) -> f64 {
        self.lambda_sft * sft + self.lambda_kd * kd
    }

    /// Weights rescaled to sum to one. Training steps on these so that
    /// `lambda_kd = 0` reduces exactly to plain SFT for any `lambda_sft`;
    /// the defaults (0.1, 0.9) are unchanged by the rescaling.
    pub fn normalized(&self) -> (f64, f64) {
        let total = self.lambda_sft + self.lambda_kd;
        (self.lambda_sft / total, self.lambda_kd / total)
    }
}

/// Loss components of one example or a corpus mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub sft: f64,
    pub kd: f64,
    pub combined: f64,
    pub token_count: usize,
}

impl LossReport {
    pub fn new(weights: &LossWeights, sft: f64, kd: f64, token_count: usize) -> Self {
        Self {
            sft,
            kd,
            combined: weights.combine(sft, kd),
            token_count,
        }
    }

    /// Mean of per-example reports; token counts are summed.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        if reports.is_empty() {
            return LossReport::default();
        }
        let n = reports.len() as f64;
        LossReport {
            sft: reports.iter().map(|r| r.sft).sum::<f64>() / n,
            kd: reports.iter().map(|r| r.kd).sum::<f64>() / n,
            combined: reports.iter().map(|r| r.combined).sum::<f64>() / n,
            token_count: reports.iter().map(|r| r.token_count).sum(),
        }
    }
}

fn check_rows(what: &str, logits: &Tensor, rows: usize) -> Result<usize> {
    if logits.rank() != 2 || logits.shape()[0] != rows {
        return Err(Error::InvalidInput(format!(
            "{what}: expected {rows} logit rows, got shape {:?}",
            logits.shape()
        )));
    }
    Ok(logits.shape()[1])
}

fn active_count(mask: &[bool]) -> Result<usize> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::InvalidInput("all positions are masked".into()));
    }
    Ok(n)
}

/// Mean over unmasked positions of `−ln softmax(logits)[target]`.
/// `mask[t] == true` marks position `t` as counted.
pub fn sft_loss(logits: &Tensor, targets: &[u32], mask: &[bool]) -> Result<f64> {
    Ok(sft_loss_grad(logits, targets, mask)?.0)
}

/// [`sft_loss`] and its gradient with respect to `logits`.
pub fn sft_loss_grad(logits: &Tensor, targets: &[u32], mask: &[bool]) -> Result<(f64, Tensor)> {
    if targets.len() != mask.len() {
        return Err(Error::InvalidInput(format!(
            "sft_loss: {} targets but {} mask flags",
            targets.len(),
            mask.len()
        )));
    }
    let vocab = check_rows("sft_loss", logits, targets.len())?;
    let n = active_count(mask)? as f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for (t, (&target, &on)) in targets.iter().zip(mask).enumerate() {
        if !on {
            continue;
        }
        let target = target as usize;
        if target >= vocab {
            return Err(Error::TokenOutOfVocab {
                token: target as u32,
                vocab_size: vocab,
            });
        }
        let row = logits.row(t);
        let nll = log_sum_exp(row) - row[target];
        let floor = -PROB_FLOOR.ln();
        if nll >= floor {
            total += floor;
            continue;
        }
        total += nll;
        let g = grad.row_mut(t);
        softmax_into(row, g);
        g[target] -= 1.0;
        g.iter_mut().for_each(|v| *v /= n);
    }
    Ok((total / n, grad))
}

/// Validates a probability vector.
fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidInput(format!("{name} is empty")));
    }
    if let Some(v) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidInput(format!("{name} has invalid mass {v}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "{name} sums to {total}, not 1"
        )));
    }
    Ok(())
}

/// `d(p, q)` for the given kind; `p` is the teacher, `q` the student.
pub fn divergence(kind: DivergenceKind, p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidInput(format!(
            "divergence: lengths {} and {} differ",
            p.len(),
            q.len()
        )));
    }
    check_distribution("p", p)?;
    check_distribution("q", q)?;
    Ok(divergence_value(kind, p, q))
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * (ln_floor(a) - ln_floor(b)))
        .sum()
}

pub(crate) fn divergence_value(kind: DivergenceKind, p: &[f64], q: &[f64]) -> f64 {
    match kind {
        DivergenceKind::Fkl => kl(p, q),
        DivergenceKind::Skl => kl(p, q) + kl(q, p),
        DivergenceKind::Tvd => 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>(),
        DivergenceKind::Js => {
            let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
            0.5 * kl(p, &m) + 0.5 * kl(q, &m)
        }
    }
}

/// `∂d/∂q_j` for each coordinate, written into `out`.
fn divergence_grad_q(kind: DivergenceKind, p: &[f64], q: &[f64], out: &mut [f64]) {
    for j in 0..p.len() {
        let (pj, qj) = (p[j], q[j]);
        out[j] = match kind {
            DivergenceKind::Fkl => -pj * dln_floor(qj),
            DivergenceKind::Skl => {
                let forward = -pj * dln_floor(qj);
                let reverse = ln_floor(qj) - ln_floor(pj) + qj * dln_floor(qj);
                forward + reverse
            }
            DivergenceKind::Tvd => {
                let d = qj - pj;
                if d > 0.0 {
                    0.5
                } else if d < 0.0 {
                    -0.5
                } else {
                    0.0
                }
            }
            DivergenceKind::Js => {
                let m = 0.5 * (pj + qj);
                let dm = dln_floor(m);
                // ½·∂KL(p‖m)/∂q + ½·∂KL(q‖m)/∂q with ∂m/∂q = ½.
                let from_p = -pj * dm * 0.5;
                let from_q = ln_floor(qj) - ln_floor(m) + qj * dln_floor(qj) - qj * dm * 0.5;
                0.5 * from_p + 0.5 * from_q
            }
        };
    }
}

/// Value of `d(p, softmax(z))` and its gradient with respect to `z`.
pub fn divergence_logit_grad(
    kind: DivergenceKind,
    p: &[f64],
    student_logits: &[f64],
) -> (f64, Vec<f64>) {
    let q = softmax(student_logits);
    let value = divergence_value(kind, p, &q);
    let mut g = vec![0.0; q.len()];
    divergence_grad_q(kind, p, &q, &mut g);
    let dot: f64 = q.iter().zip(&g).map(|(a, b)| a * b).sum();
    let grad = q.iter().zip(&g).map(|(qk, gk)| qk * (gk - dot)).collect();
    (value, grad)
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(logits.shape());
    for r in 0..logits.rows() {
        softmax_into(logits.row(r), out.row_mut(r));
    }
    out
}

/// Mean over unmasked positions of `d(softmax(teacher), softmax(student))`.
pub fn kd_loss(
    kind: DivergenceKind,
    teacher_logits: &Tensor,
    student_logits: &Tensor,
    mask: &[bool],
) -> Result<f64> {
    if teacher_logits.shape() != student_logits.shape() {
        return Err(Error::InvalidInput(format!(
            "kd_loss: teacher logits {:?} and student logits {:?} differ in shape",
            teacher_logits.shape(),
            student_logits.shape()
        )));
    }
    Ok(kd_loss_grad(kind, &softmax_rows(teacher_logits), student_logits, mask)?.0)
}

/// KD loss against precomputed teacher probabilities, with the gradient
/// with respect to the student logits. Teacher values are constants.
pub fn kd_loss_grad(
    kind: DivergenceKind,
    teacher_probs: &Tensor,
    student_logits: &Tensor,
    mask: &[bool],
) -> Result<(f64, Tensor)> {
    if teacher_probs.shape() != student_logits.shape() {
        return Err(Error::InvalidInput(format!(
            "kd_loss: teacher {:?} and student {:?} differ in shape",
            teacher_probs.shape(),
            student_logits.shape()
        )));
    }
    check_rows("kd_loss", student_logits, mask.len())?;
    let n = active_count(mask)? as f64;
    let mut grad = Tensor::zeros(student_logits.shape());
    let mut total = 0.0;
    for (t, &on) in mask.iter().enumerate() {
        if !on {
            continue;
        }
        let (v, g) = divergence_logit_grad(kind, teacher_probs.row(t), student_logits.row(t));
        total += v;
        for (dst, src) in grad.row_mut(t).iter_mut().zip(g) {
            *dst = src / n;
        }
    }
    Ok((total / n, grad))
}

/// Combined explanation loss `λ_sft·ℓ_sft + λ_kd·ℓ_kd` for one example.
pub fn explanation_loss(
    teacher_logits: &Tensor,
    student_logits: &Tensor,
    targets: &[u32],
    mask: &[bool],
    weights: &LossWeights,
    kind: DivergenceKind,
) -> Result<LossReport> {
    weights.validate()?;
    let sft = sft_loss(student_logits, targets, mask)?;
    let kd = kd_loss(kind, teacher_logits, student_logits, mask)?;
    Ok(LossReport::new(
        weights,
        sft,
        kd,
        mask.iter().filter(|&&m| m).count(),
    ))
}

/// `−ln ẑ[label]` for a category distribution.
pub fn classification_loss(zhat: &[f64], label: usize) -> Result<f64> {
    check_distribution("zhat", zhat)?;
    if label >= zhat.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} categories",
            zhat.len()
        )));
    }
    Ok(-ln_floor(zhat[label]))
}

/// Cross-entropy from head logits and its gradient `softmax(z) − onehot`.
pub fn classification_loss_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} categories",
            logits.len()
        )));
    }
    let nll = log_sum_exp(logits) - logits[label];
    let floor = -PROB_FLOOR.ln();
    if nll >= floor {
        return Ok((floor, vec![0.0; logits.len()]));
    }
    let mut g = softmax(logits);
    g[label] -= 1.0;
    Ok((nll, g))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn sft_perfect_and_uniform() {
        let targets = [2u32, 0, 1];
        let mut data = vec![0.0; 12];
        for (t, &y) in targets.iter().enumerate() {
            data[t * 4 + y as usize] = 50.0;
        }
        let logits = Tensor::matrix(3, 4, data).unwrap();
        assert!(sft_loss(&logits, &targets, &[true; 3]).unwrap() <= 1e-6);

        let uniform = Tensor::zeros(&[3, 4]);
        let l = sft_loss(&uniform, &targets, &[true; 3]).unwrap();
        assert!(close(l, 4f64.ln(), 1e-12));
    }

    #[test]
    fn sft_mean_of_two_positions() {
        // Position 0: p(target) = 1/2 over 2 equal logits among [0, 0, -inf-ish].
        // Build rows with exact probabilities 1/2 and 1/4.
        let big = -1e3;
        let logits = Tensor::matrix(2, 4, vec![0.0, 0.0, big, big, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let l = sft_loss(&logits, &[0, 3], &[true, true]).unwrap();
        assert!(close(l, 1.039_720_770_839_917_9, 1e-9), "{l}");
    }

    #[test]
    fn sft_all_masked_is_error() {
        let logits = Tensor::zeros(&[2, 3]);
        assert!(sft_loss(&logits, &[0, 1], &[false, false]).is_err());
    }

    #[test]
    fn masked_positions_are_ignored() {
        let logits = Tensor::matrix(2, 2, vec![0.0, 0.0, 5.0, -5.0]).unwrap();
        let a = sft_loss(&logits, &[0, 1], &[true, false]).unwrap();
        assert!(close(a, 2f64.ln(), 1e-12));
    }

    #[test]
    fn divergence_worked_examples() {
        for kind in DivergenceKind::ALL {
            let p = [0.2, 0.3, 0.5];
            assert!(divergence(kind, &p, &p).unwrap().abs() < 1e-10);
        }
        assert!(close(
            divergence(DivergenceKind::Tvd, &[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            1.0,
            1e-15
        ));
        assert!(close(
            divergence(DivergenceKind::Js, &[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            2f64.ln(),
            1e-12
        ));
        let fkl = divergence(DivergenceKind::Fkl, &[0.9, 0.1], &[0.6, 0.4]).unwrap();
        assert!(close(fkl, 0.226_289_161_185_358_9, 1e-9), "{fkl}");
    }

    #[test]
    fn divergence_rejects_bad_inputs() {
        assert!(divergence(DivergenceKind::Fkl, &[0.5, 0.5], &[1.0]).is_err());
        assert!(divergence(DivergenceKind::Fkl, &[1.5, -0.5], &[0.5, 0.5]).is_err());
        assert!(divergence(DivergenceKind::Fkl, &[0.5, 0.6], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn kd_identical_logits_is_zero() {
        let logits = Tensor::matrix(2, 3, vec![0.3, -1.0, 2.0, 1.0, 1.0, 0.0]).unwrap();
        for kind in DivergenceKind::ALL {
            assert!(
                kd_loss(kind, &logits, &logits, &[true, true])
                    .unwrap()
                    .abs()
                    < 1e-10
            );
        }
    }

    #[test]
    fn kd_matches_divergence_on_single_position() {
        let teacher = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let student = Tensor::matrix(1, 2, vec![3f64.ln(), 0.0]).unwrap();
        let kd = kd_loss(DivergenceKind::Fkl, &teacher, &student, &[true]).unwrap();
        let d = divergence(DivergenceKind::Fkl, &[0.5, 0.5], &[0.75, 0.25]).unwrap();
        assert!(close(kd, d, 1e-12));
    }

    #[test]
    fn kd_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 4]);
        assert!(kd_loss(DivergenceKind::Js, &a, &b, &[true, true]).is_err());
    }

    #[test]
    fn explanation_loss_combines_linearly() {
        let w = LossWeights::default();
        assert!(close(w.combine(2.0, 1.0), 1.1, 1e-12));
        let sft_only = LossWeights::new(0.1, 0.0).unwrap();
        let teacher = Tensor::matrix(1, 3, vec![1.0, 0.0, -1.0]).unwrap();
        let student = Tensor::matrix(1, 3, vec![0.0, 0.5, 0.0]).unwrap();
        let r = explanation_loss(
            &teacher,
            &student,
            &[1],
            &[true],
            &sft_only,
            DivergenceKind::Skl,
        )
        .unwrap();
        assert_eq!(r.combined, 0.1 * r.sft);
        let unit = LossWeights::new(1.0, 0.0).unwrap();
        let r = explanation_loss(
            &teacher,
            &student,
            &[1],
            &[true],
            &unit,
            DivergenceKind::Skl,
        )
        .unwrap();
        assert_eq!(r.combined, r.sft);
        assert_eq!(unit.normalized(), (1.0, 0.0));
        assert_eq!(LossWeights::new(0.1, 0.0).unwrap().normalized(), (1.0, 0.0));
        assert_eq!(LossWeights::default().normalized(), (0.1, 0.9));
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(0.0, 0.0).is_err());
        assert!(LossWeights::new(-0.1, 1.0).is_err());
    }

    #[test]
    fn classification_loss_examples() {
        assert!(classification_loss(&[0.0, 1.0, 0.0], 1).unwrap().abs() < 1e-10);
        let third = 1.0 / 3.0;
        assert!(close(
            classification_loss(&[third, third, third], 0).unwrap(),
            3f64.ln(),
            1e-12
        ));
        assert!(close(
            classification_loss(&[0.7, 0.2, 0.1], 1).unwrap(),
            1.609_437_912_434_100_3,
            1e-9
        ));
        assert!(classification_loss(&[0.7, 0.2, 0.2], 1).is_err());
    }

    #[test]
    fn divergence_kind_parses() {
        assert_eq!(
            "tvd".parse::<DivergenceKind>().unwrap(),
            DivergenceKind::Tvd
        );
        assert!("l2".parse::<DivergenceKind>().is_err());
    }
}
