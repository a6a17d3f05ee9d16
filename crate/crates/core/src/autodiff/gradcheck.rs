//! Finite-difference verification of analytic gradients.
//!
//! Numeric derivatives use the fourth-order central stencil
//! `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`. The plain central
//! difference at the same step is computed alongside it: away from kinks the
//! two agree to `O(h^2)`, so a large disagreement marks a coordinate whose
//! neighbourhood is not smooth.

use super::params::{collect_grads, zero_grads, Parameters};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::AdError;

/// Relative disagreement between the two stencils above which a coordinate
/// counts as sitting on a kink.
const KINK_RATIO: f64 = 1e-3;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// Some coordinate had a non-smooth neighbourhood within `2h`.
    pub kinked: bool,
}

impl FdReport {
    fn add(&mut self, analytic: f64, probe: [f64; 4], h: f64) {
        let [p2, p1, m1, m2] = probe;
        let central = (p1 - m1) / (2.0 * h);
        let fourth = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        self.max_rel_err = self.max_rel_err.max(rel_err(analytic, fourth));
        if rel_err(central, fourth) > KINK_RATIO {
            self.kinked = true;
        }
    }
}

/// Evaluates `value` at `orig + k·h` for `k = 2, 1, -1, -2`, using `set` to
/// move the coordinate, and restores it afterwards.
fn stencil<E>(
    orig: f64,
    h: f64,
    set: &mut dyn FnMut(f64),
    value: &mut dyn FnMut() -> Result<f64, E>,
) -> Result<[f64; 4], E> {
    let mut out = [0.0; 4];
    for (slot, k) in out.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
        set(orig + k * h);
        *slot = value()?;
    }
    set(orig);
    Ok(out)
}

fn eval_scalar<F, E>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64, E>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Maximum relative error between the analytic gradient of a scalar `f` at
/// `x` and a finite-difference estimate with step `eps`.
pub fn finite_diff_check<F, E>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, E>,
    E: From<AdError>,
{
    finite_diff_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)
}

/// As [`finite_diff_check`], over every element of several inputs.
pub fn finite_diff_check_many<F, E>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, E>,
    E: From<AdError>,
{
    Ok(finite_diff_report_many(f, inputs, eps)?.max_rel_err)
}

pub fn finite_diff_report_many<F, E>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<FdReport, E>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, E>,
    E: From<AdError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut report = FdReport::default();
    let probe = std::cell::RefCell::new(inputs.to_vec());
    for k in 0..inputs.len() {
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            let values = stencil(
                orig,
                eps,
                &mut |x| probe.borrow_mut()[k].data_mut()[i] = x,
                &mut || eval_scalar(&f, &probe.borrow()),
            )?;
            report.add(analytic[k][i], values, eps);
        }
    }
    Ok(report)
}

/// Checks gradients of `f` with respect to every parameter of `model`.
/// The model's values are restored before returning.
pub fn finite_diff_check_params<M, F, E>(model: &mut M, f: F, eps: f64) -> Result<f64, E>
where
    M: Parameters<f64>,
    F: Fn(&mut Tape<f64>, &M) -> Result<Var, E>,
    E: From<AdError>,
{
    Ok(finite_diff_report_params(model, f, eps)?.max_rel_err)
}

pub fn finite_diff_report_params<M, F, E>(model: &mut M, f: F, eps: f64) -> Result<FdReport, E>
where
    M: Parameters<f64>,
    F: Fn(&mut Tape<f64>, &M) -> Result<Var, E>,
    E: From<AdError>,
{
    zero_grads(model);
    let mut tape = Tape::new();
    let out = f(&mut tape, model)?;
    tape.backward(out)?;
    collect_grads(model, &tape)?;
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    model.visit("", &mut |_, t| {
        analytic.push(t.grad().map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
    });
    zero_grads(model);

    let mut report = FdReport::default();
    let cell = std::cell::RefCell::new(model);
    for (k, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = nudge(*cell.borrow_mut(), k, i, None);
            let values = stencil(
                orig,
                eps,
                &mut |x| {
                    nudge(*cell.borrow_mut(), k, i, Some(x));
                },
                &mut || -> Result<f64, E> {
                    let m = cell.borrow();
                    let mut tape = Tape::new();
                    let out = f(&mut tape, &**m)?;
                    Ok(tape.value(out).item())
                },
            )?;
            report.add(a, values, eps);
        }
    }
    Ok(report)
}

/// Reads (and optionally overwrites) element `i` of the `k`-th parameter.
fn nudge<M: Parameters<f64>>(model: &mut M, k: usize, i: usize, set: Option<f64>) -> f64 {
    let mut idx = 0;
    let mut old = f64::NAN;
    model.visit_mut("", &mut |_, t| {
        if idx == k {
            old = t.data()[i];
            if let Some(v) = set {
                t.data_mut()[i] = v;
            }
        }
        idx += 1;
    });
    old
}
