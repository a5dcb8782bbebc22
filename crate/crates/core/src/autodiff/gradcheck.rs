//! Central finite-difference gradient checks.

use super::graph::{Graph, Var};
use super::params::HasParams;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
    pub max_rel_error: f64,
    /// Flat element index where the maximum occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Elements left out because a perturbed evaluation crossed a kink (took a
    /// different branch of a piecewise op), where a finite difference does not
    /// estimate the derivative.
    pub skipped_nonsmooth: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        Self { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0, checked: 0, skipped_nonsmooth: 0 }
    }

    fn observe(&mut self, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        if err > self.max_rel_error || self.checked == 0 {
            self.max_rel_error = err;
            self.worst_index = index;
            self.analytic = analytic;
            self.numeric = numeric;
        }
        self.checked += 1;
    }

    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let mut out = if other.max_rel_error > self.max_rel_error { other } else { self };
        out.checked = self.checked + other.checked;
        out.skipped_nonsmooth = self.skipped_nonsmooth + other.skipped_nonsmooth;
        out
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn at_element(e: Error, index: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFinite { op: "finite_difference_check", index },
        e => e,
    }
}

/// Scalar value and branch fingerprint of one evaluation.
type Eval = (f64, Option<u64>);

/// Five-point central difference `(8(f(h/2) - f(-h/2)) - (f(h) - f(-h))) / 6h`,
/// whose truncation error is O(h^4) rather than the O(h^2) of the
/// three-point rule. `None` when any evaluation left the base point's branch.
fn five_point(mut f: impl FnMut(f64) -> Result<Eval>, h: f64, base: Option<u64>) -> Result<Option<f64>> {
    let mut values = [0.0; 4];
    for (v, offset) in values.iter_mut().zip([h, -h, h / 2.0, -h / 2.0]) {
        let (y, sig) = f(offset)?;
        if sig != base {
            return Ok(None);
        }
        *v = y;
    }
    let [p1, m1, p2, m2] = values;
    Ok(Some((8.0 * (p2 - m2) - (p1 - m1)) / (6.0 * h)))
}

fn scalar_of<T: Real>(g: &Graph<T>, v: Var, index: usize) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::NonScalarLoss(t.shape()));
    }
    let y = t.data()[0].to_f64();
    if !y.is_finite() {
        return Err(Error::NonFinite { op: "finite_difference_check", index });
    }
    Ok(y)
}

/// Checks the gradient of the scalar function `f` with respect to its input `x`.
///
/// `f` receives a fresh graph and the leaf holding `x`, and returns the
/// scalar output node.
pub fn finite_difference_check<T, F>(f: F, x: &Tensor<T>, step: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    assert!(step > 0.0, "step must be positive");
    let mut g = Graph::with_branch_tracking();
    let xv = g.input(x.clone());
    let y = f(&mut g, xv)?;
    scalar_of(&g, y, 0)?;
    let base = g.branch_signature();
    g.backward(y)?;
    let analytic = g.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |xp: Tensor<T>, index: usize| -> Result<Eval> {
        let mut g = Graph::with_branch_tracking();
        let xv = g.input(xp);
        let y = f(&mut g, xv).map_err(|e| at_element(e, index))?;
        Ok((scalar_of(&g, y, index)?, g.branch_signature()))
    };

    let mut report = GradCheckReport::empty();
    for i in 0..x.len() {
        let at = |offset: f64| {
            let mut xp = x.clone();
            xp.data_mut()[i] += T::from_f64(offset);
            eval(xp, i)
        };
        match five_point(at, step, base)? {
            Some(numeric) => report.observe(i, analytic.data()[i].to_f64(), numeric),
            None => report.skipped_nonsmooth += 1,
        }
    }
    Ok(report)
}

/// Checks the gradient of `f` with respect to every element of every
/// parameter of `model`. Returns one report per parameter, by name.
pub fn check_param_gradients<T, M, F>(model: &mut M, f: F, step: f64) -> Result<Vec<(String, GradCheckReport)>>
where
    T: Real,
    M: HasParams<T>,
    F: Fn(&M, &mut Graph<T>) -> Result<Var>,
{
    assert!(step > 0.0, "step must be positive");
    model.params_mut().zero_grads();
    let mut g = Graph::with_branch_tracking();
    let y = f(model, &mut g)?;
    scalar_of(&g, y, 0)?;
    let base = g.branch_signature();
    g.backward_into(y, model.params_mut())?;
    let analytic: Vec<Tensor<T>> = model.params().iter().map(|p| p.grad.clone()).collect();

    let eval = |m: &M, index: usize| -> Result<Eval> {
        let mut g = Graph::with_branch_tracking();
        let y = f(m, &mut g).map_err(|e| at_element(e, index))?;
        Ok((scalar_of(&g, y, index)?, g.branch_signature()))
    };

    let ids: Vec<_> = model.params().ids().collect();
    let mut reports = Vec::with_capacity(ids.len());
    for (pi, id) in ids.into_iter().enumerate() {
        let mut report = GradCheckReport::empty();
        for i in 0..analytic[pi].len() {
            let orig = model.params().get(id).value.data()[i];
            let mut at = |offset: f64| {
                model.params_mut().get_mut(id).value.data_mut()[i] = orig + T::from_f64(offset);
                let r = eval(model, i);
                model.params_mut().get_mut(id).value.data_mut()[i] = orig;
                r
            };
            match five_point(&mut at, step, base)? {
                Some(numeric) => report.observe(i, analytic[pi].data()[i].to_f64(), numeric),
                None => report.skipped_nonsmooth += 1,
            }
        }
        reports.push((model.params().get(id).name.clone(), report));
    }
    model.params_mut().zero_grads();
    Ok(reports)
}
