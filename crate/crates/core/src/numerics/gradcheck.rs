use super::tape::{NodeId, Tape};
use super::{NumericsError, Tensor};

/// Relative error used by all gradient checks:
/// `|a − n| / max(1e-12, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-12, analytic.abs() + numeric.abs())
}

fn evaluate<F>(f: &F, x: &Tensor) -> Result<f64, NumericsError>
where
    F: for<'t> Fn(&mut Tape<'t>, NodeId) -> Result<NodeId, NumericsError>,
{
    let mut tape = Tape::new();
    let leaf = tape.constant(x.clone());
    let out = f(&mut tape, leaf)?;
    let v = tape.value(out);
    let value = v
        .item()
        .ok_or_else(|| NumericsError::NonScalarLoss(v.shape().to_vec()))?;
    if !value.is_finite() {
        return Err(NumericsError::NonFinite(format!(
            "function value {value} at check point"
        )));
    }
    Ok(value)
}

/// Analytic gradient of `f` at `x`, taken from the tape.
pub fn analytic_gradient<F>(f: &F, x: &Tensor) -> Result<Tensor, NumericsError>
where
    F: for<'t> Fn(&mut Tape<'t>, NodeId) -> Result<NodeId, NumericsError>,
{
    let mut tape = Tape::new();
    let leaf = tape.constant(x.clone());
    let out = f(&mut tape, leaf)?;
    let value = tape.value(out).item().unwrap_or(f64::NAN);
    if !value.is_finite() {
        return Err(NumericsError::NonFinite(format!(
            "function value {value} at check point"
        )));
    }
    Ok(tape.backward(out)?.get_or_zeros(leaf, x))
}

/// Max relative error between the tape gradient of `f` and central
/// differences with the given `step`, over every coordinate of `x`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64, NumericsError>
where
    F: for<'t> Fn(&mut Tape<'t>, NodeId) -> Result<NodeId, NumericsError>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    finite_difference_check_at(f, x, step, &coords)
}

/// Same as [`finite_difference_check`] restricted to `coords`.
pub fn finite_difference_check_at<F>(
    f: F,
    x: &Tensor,
    step: f64,
    coords: &[usize],
) -> Result<f64, NumericsError>
where
    F: for<'t> Fn(&mut Tape<'t>, NodeId) -> Result<NodeId, NumericsError>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(NumericsError::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    let analytic = analytic_gradient(&f, x)?;
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for &c in coords {
        if c >= x.len() {
            return Err(NumericsError::IndexOutOfRange {
                op: "finite-difference",
                index: c,
                bound: x.len(),
            });
        }
        let orig = probe.data()[c];
        probe.data_mut()[c] = orig + step;
        let plus = evaluate(&f, &probe)?;
        probe.data_mut()[c] = orig - step;
        let minus = evaluate(&f, &probe)?;
        probe.data_mut()[c] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(relative_error(analytic.data()[c], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.2, 4.0, 2.5]);
        let err = finite_difference_check(|t, x| t.sum(x), &x, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::vector(vec![1.0]);
        assert!(finite_difference_check(|t, x| t.sum(x), &x, 0.0).is_err());
    }

    #[test]
    fn rejects_non_finite_value() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let res = finite_difference_check(
            |t, x| {
                let s = t.sum(x)?;
                t.scale(s, f64::INFINITY)
            },
            &x,
            1e-5,
        );
        assert!(matches!(res, Err(NumericsError::NonFinite(_))));
    }
}
