//! Central-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients below this magnitude are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, flat coordinate)` of the largest error.
    pub worst: Option<(usize, usize)>,
    /// Largest error per input tensor.
    pub per_input: Vec<f64>,
    pub coordinates: usize,
}

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares the tape gradient of a scalar-valued `f` with central
/// differences `(f(x + eps) - f(x - eps)) / (2 eps)` at every coordinate of
/// every input.
///
/// `f` receives the inputs as trainable leaves and must return a `[1]`
/// shaped value.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_inputs(f, inputs, eps, &vec![true; inputs.len()])
}

/// Like [`grad_check`] but only perturbs inputs with `check[i] == true`.
pub fn grad_check_inputs<F>(f: F, inputs: &[Tensor], eps: f64, check: &[bool]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let eval = |values: &[Tensor]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars = values
            .iter()
            .map(|t| tape.leaf(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        if tape.shape(out) != [1] {
            return Err(Error::shape(
                "grad_check",
                format!("function must be scalar-valued, got shape {:?}", tape.shape(out)),
            ));
        }
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = eval(inputs)?;
    let grads = tape.backward(out, &Tensor::scalar(1.0))?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        per_input: vec![0.0; inputs.len()],
        coordinates: 0,
    };
    let mut work = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        if !check.get(i).copied().unwrap_or(false) {
            continue;
        }
        let analytic = grads.get(*var).expect("leaf gradient").clone();
        for c in 0..inputs[i].len() {
            let orig = inputs[i].data()[c];
            work[i].data_mut()[c] = orig + eps;
            let plus = eval(&work)?;
            let fp = plus.0.value(plus.2).item();
            work[i].data_mut()[c] = orig - eps;
            let minus = eval(&work)?;
            let fm = minus.0.value(minus.2).item();
            work[i].data_mut()[c] = orig;

            let numeric = (fp - fm) / (2.0 * eps);
            let err = relative_error(analytic.data()[c], numeric);
            report.coordinates += 1;
            report.per_input[i] = report.per_input[i].max(err);
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((i, c));
            }
        }
    }
    Ok(report)
}
