use serde::Serialize;

use super::params::ParamStore;
use crate::error::{HgnError, Result};

/// Denominator floor for relative error, so coordinates whose true gradient is
/// (near) zero are judged on absolute error instead of dividing by ~0.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
    /// The worst coordinate plus every coordinate above tolerance.
    pub failures: Vec<CoordCheck>,
    pub worst: Option<CoordCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares the gradients already held in `store` against central differences
/// `(f(x+h) - f(x-h)) / 2h` of `loss`, coordinate by coordinate.
pub fn finite_diff_check<F>(store: &mut ParamStore, mut loss: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(HgnError::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let analytic: Vec<Vec<f64>> = store.grads().iter().map(|g| g.data().to_vec()).collect();
    let names = store.names().to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        tol,
        passed: true,
        failures: Vec::new(),
        worst: None,
    };
    for (p, name) in names.iter().enumerate() {
        for idx in 0..analytic[p].len() {
            let orig = store.values()[p].data()[idx];
            store.values_mut()[p].data_mut()[idx] = orig + h;
            let plus = loss(store);
            store.values_mut()[p].data_mut()[idx] = orig - h;
            let minus = loss(store);
            store.values_mut()[p].data_mut()[idx] = orig;
            let numeric = (plus? - minus?) / (2.0 * h);
            let a = analytic[p][idx];
            let entry = CoordCheck {
                param: name.clone(),
                index: idx,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            };
            report.checked += 1;
            if !(entry.rel_error <= tol) {
                report.passed = false;
                report.failures.push(entry.clone());
            }
            if report.worst.as_ref().map_or(true, |w| entry.rel_error > w.rel_error) {
                report.max_rel_error = entry.rel_error;
                report.worst = Some(entry);
            }
        }
    }
    Ok(report)
}
