//! Finite-difference verification of tape gradients with the five-point
//! central stencil, whose `O(h⁴)` truncation error lets the step stay large
//! enough that cancellation noise does not swamp small derivatives.

use super::param::ParamStore;
use super::tape::{Tape, Var};
use super::DiffError;

/// Denominator floor for the per-coordinate relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many evenly spaced coordinates per parameter.
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            tolerance: 1e-4,
            max_coords_per_param: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate of the worst disagreement.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: (f64, f64),
    pub coords_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares tape gradients of the scalar produced by `f` against central
/// differences, one parameter coordinate at a time.
///
/// `store` is perturbed in place and restored bit-exactly before returning.
pub fn finite_diff_check<F, E>(
    f: F,
    store: &mut ParamStore,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, E>,
    E: From<DiffError>,
{
    if cfg.step <= 0.0 || !cfg.step.is_finite() {
        return Err(DiffError::InvalidArgument(format!("step must be positive, got {}", cfg.step)).into());
    }
    let eval = |store: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(DiffError::NonFiniteObjective { value: v }.into());
        }
        Ok(v)
    };

    let grads = {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(DiffError::NonFiniteObjective { value: v }.into());
        }
        tape.backward(out)?
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        coords_checked: 0,
        tolerance: cfg.tolerance,
        passed: true,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let len = store.get(id).value().len();
        let coords: Vec<usize> = match cfg.max_coords_per_param {
            Some(m) if m < len => (0..m).map(|i| i * len / m).collect(),
            _ => (0..len).collect(),
        };
        for c in coords {
            let original = store.get(id).value().data()[c];
            let mut at = |k: f64| {
                store.get_mut(id).value_mut().data_mut()[c] = original + k * cfg.step;
                eval(store)
            };
            let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
            store.get_mut(id).value_mut().data_mut()[c] = original;
            let numeric = (8.0 * (p1? - m1?) - (p2? - m2?)) / (12.0 * cfg.step);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[c]);
            let err = relative_error(analytic, numeric);
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name().to_string(), c));
                report.worst_values = (analytic, numeric);
            }
        }
    }
    report.passed = report.max_rel_error <= cfg.tolerance;
    Ok(report)
}
