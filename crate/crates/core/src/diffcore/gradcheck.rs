//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so the checker stays independent
//! of the backward rules it validates.

use super::{Array, Grads, ParamStore};

/// Relative tolerance floor: differences below this are treated as exact.
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(parameter name, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err < rel_tol
    }
}

/// Error between an analytic and a numeric derivative: zero when the
/// absolute difference is under [`ABS_FLOOR`], relative otherwise.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Central difference of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &Array, h: f64, mut f: impl FnMut(&Array) -> f64) -> Array {
    let mut probe = x.clone();
    let mut out = Array::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Compares `analytic` with central differences of `loss` over every
/// parameter entry (or every `stride`-th entry, for large models).
pub fn check_params(
    store: &ParamStore,
    analytic: &Grads,
    h: f64,
    stride: usize,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> GradCheckReport {
    let mut probe = store.clone();
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    let mut counter = 0usize;
    for id in store.ids() {
        let dense = analytic.dense(id, store);
        for i in 0..store.get(id).len() {
            counter += 1;
            if (counter - 1) % stride.max(1) != 0 {
                continue;
            }
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + h;
            let up = loss(&probe);
            probe.get_mut(id).data_mut()[i] = orig - h;
            let down = loss(&probe);
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = dense.data()[i];
            let err = rel_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((store.name(id).to_string(), i, a, numeric));
                }
            }
        }
    }
    report
}
