//! Central finite-difference verification of tape gradients.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors, so exact-zero gradients compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
    /// Label of the worst entry, e.g. `"x[3]"` or `"layer.w[12]"`.
    pub worst: String,
}

impl GradCheckReport {
    fn new(tol: f64) -> Self {
        GradCheckReport {
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            checked: 0,
            tol,
            passed: true,
            worst: String::new(),
        }
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.checked += 1;
        self.max_abs_err = self.max_abs_err.max(abs);
        if rel > self.max_rel_err || !rel.is_finite() {
            self.max_rel_err = if rel.is_finite() { rel } else { f64::INFINITY };
            self.worst = label();
        }
        self.passed = self.max_rel_err < self.tol;
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst.clone();
        }
        self.passed = self.max_rel_err < self.tol;
    }
}

fn scalar_of(v: Var<'_>) -> Result<f64> {
    if v.shape().iter().product::<usize>() != 1 {
        return Err(Error::Backward(format!("checked function must return a scalar, got {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Compares the tape gradient of scalar `f(x)` against central differences.
pub fn finite_diff_check<F>(f: F, x: &Tensor, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let xv = tape.var(x.clone());
    let out = f(&tape, xv)?;
    tape.backward(out)?;
    let analytic = xv.grad().map(|g| g.data).unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |t: Tensor| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.var(t);
        scalar_of(f(&tape, v)?)
    };
    let mut report = GradCheckReport::new(tol);
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data[i] += FD_STEP;
        let mut minus = x.clone();
        minus.data[i] -= FD_STEP;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * FD_STEP);
        report.record(|| format!("x[{i}]"), analytic[i], numeric);
    }
    Ok(report)
}

/// Same as [`finite_diff_check`] but over every trainable parameter entry of `store`.
/// `stride > 1` checks every `stride`-th entry of each parameter.
pub fn finite_diff_check_params<F>(store: &ParamStore, f: F, tol: f64, stride: usize) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let out = f(&tape, store)?;
    tape.backward(out)?;
    let grads = tape.param_grads(store);
    drop(tape);

    let mut work = store.clone();
    let mut eval = |id: ParamId, i: usize, delta: f64| -> Result<f64> {
        let orig = work.data(id)[i];
        work.data_mut(id)[i] = orig + delta;
        let tape = Tape::new();
        let v = scalar_of(f(&tape, &work)?);
        work.data_mut(id)[i] = orig;
        v
    };
    let mut report = GradCheckReport::new(tol);
    for id in store.ids() {
        if !store.is_trainable(id) {
            continue;
        }
        let g = grads.get(id);
        for i in (0..store.data(id).len()).step_by(stride.max(1)) {
            let numeric = (eval(id, i, FD_STEP)? - eval(id, i, -FD_STEP)?) / (2.0 * FD_STEP);
            let analytic = g.map_or(0.0, |g| g[i]);
            report.record(|| format!("{}[{i}]", store.name(id)), analytic, numeric);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        let x = Tensor::new(vec![5], vec![0.3, -0.7, 0.9, 0.1, -0.2]).unwrap();
        let r = finite_diff_check(|_, x| Ok(x.sum()), &x, 1e-8).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.max_rel_err < 1e-8);
    }

    #[test]
    fn wrong_backward_rule_is_caught() {
        // sin with a deliberately wrong derivative (+sin instead of cos)
        let x = Tensor::new(vec![3], vec![0.4, -0.8, 1.1]).unwrap();
        let r = finite_diff_check(
            |tape, x| {
                let v = x.value();
                let y: Vec<f64> = v.data.iter().map(|a| a.sin()).collect();
                let out = tape.custom(
                    &[x],
                    v.shape.clone(),
                    y,
                    Box::new(|ins, _, g| vec![ins[0].iter().zip(g).map(|(a, g)| a.sin() * g).collect()]),
                )?;
                Ok(out.sum())
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(!r.passed);
    }
}
