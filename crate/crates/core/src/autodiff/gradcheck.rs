//! Central-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over every checked element of `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    /// `(parameter index, element index)` where the maximum was attained.
    pub worst: (usize, usize),
    pub elements_checked: usize,
}

/// Scalar-valued graph builder: receives one leaf per parameter, in order.
pub trait GraphFn: Fn(&mut Tape, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Tape, &[Var]) -> Result<Var>> GraphFn for F {}

fn evaluate<F: GraphFn>(f: &F, params: &[Tensor]) -> Result<(Tape, Vec<Var>, Var)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.param(p.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Usage(format!(
            "gradient check needs a scalar output, got shape {:?}",
            tape.value(out).shape()
        )));
    }
    Ok((tape, vars, out))
}

/// Compares reverse-mode gradients of `f` against central differences with step `h`.
pub fn grad_check<F: GraphFn>(f: F, params: &[Tensor], h: f64) -> Result<GradCheckReport> {
    let (tape, vars, out) = evaluate(&f, params)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.numel()))
        .collect();
    drop(tape);

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        elements_checked: 0,
    };
    for pi in 0..work.len() {
        for ei in 0..work[pi].numel() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let (t_plus, _, o_plus) = evaluate(&f, &work)?;
            let f_plus = t_plus.scalar(o_plus);
            work[pi].data_mut()[ei] = orig - h;
            let (t_minus, _, o_minus) = evaluate(&f, &work)?;
            let f_minus = t_minus.scalar(o_minus);
            work[pi].data_mut()[ei] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[pi][ei];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = (pi, ei);
            }
            report.elements_checked += 1;
        }
    }
    Ok(report)
}

/// Reverse-mode gradients of `f` at `params`, one vector per parameter.
pub fn analytic_gradients<F: GraphFn>(f: F, params: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let (tape, vars, out) = evaluate(&f, params)?;
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.numel()))
        .collect())
}
