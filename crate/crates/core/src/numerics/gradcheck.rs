use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Norms below this are treated as zero when forming relative errors.
const NORM_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradReport {
    /// `(parameter name, relative error)` in registration order.
    pub per_param: Vec<(String, f64)>,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)` with a small floor.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(NORM_FLOOR)
}

/// Compares reverse-mode gradients of `f` at `theta` against central
/// differences `(f(θ+h·eᵢ) − f(θ−h·eᵢ)) / 2h`, one coordinate at a time.
///
/// `f` records its computation on the tape from the given parameter
/// handles and returns the scalar loss node.
pub fn finite_difference_check<F>(
    f: F,
    theta: &[(String, Tensor<f64>)],
    h: f64,
    tol: f64,
) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .enumerate()
            .map(|(i, v)| tape.param(theta[i].0.clone(), v.clone()))
            .collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = theta.iter().map(|(n, v)| tape.param(n.clone(), v.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut values: Vec<Tensor<f64>> = theta.iter().map(|(_, v)| v.clone()).collect();
    let mut per_param = Vec::with_capacity(theta.len());
    for (p, (name, _)) in theta.iter().enumerate() {
        let mut numeric = vec![0.0; values[p].numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = values[p].data()[i];
            values[p].data_mut()[i] = orig + h;
            let up = eval(&values)?;
            values[p].data_mut()[i] = orig - h;
            let down = eval(&values)?;
            values[p].data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let analytic = grads.param(name).map(|g| g.data().to_vec()).unwrap_or_default();
        per_param.push((name.clone(), relative_error(&analytic, &numeric)));
    }
    let max_error = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradReport { per_param, max_error, tolerance: tol, pass: max_error < tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let theta = vec![("x".to_string(), Tensor::scalar(3.0))];
        let report = finite_difference_check(
            |t, v| t.mul(v[0], v[0]),
            &theta,
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn constant_function_passes() {
        let theta = vec![("x".to_string(), Tensor::matrix(2, 3, vec![0.1, 2.0, -1.0, 0.4, 0.4, 3.0]).unwrap())];
        let report = finite_difference_check(
            |t, v| {
                let s = t.softmax_rows(v[0]);
                Ok(t.sum(s))
            },
            &theta,
            DEFAULT_STEP,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        // analytic gradient of the rounding-free identity is fine; a broken
        // op is simulated by comparing against a shifted numeric vector.
        assert!(relative_error(&[1.0, 2.0], &[1.0, 2.5]) > 0.1);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }
}
