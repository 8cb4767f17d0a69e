//! Reverse-mode gradients versus central finite differences.

use serde::Serialize;

use crate::autodiff::params::ParamStore;
use crate::autodiff::tape::{Tape, Var};
use crate::error::Result;

/// Denominator floor for the relative error, so entries whose true gradient
/// is zero are judged on absolute error at this scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `d loss / d param` from [`Tape::backward`] with central
/// differences of step `step` for every element of every parameter in `store`.
///
/// `forward` must be deterministic: it is evaluated `2 · #elements + 1` times
/// and must build the loss from the parameter values currently in the store.
pub fn grad_check<F>(mut forward: F, store: &mut ParamStore, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    if store.is_empty() {
        return Ok(GradCheckReport::default());
    }
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = forward(&mut tape, store)?;
    tape.backward(loss, store)?;

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = forward(&mut tape, store)?;
        tape.value(loss).item()
    };

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let analytic = store.get(id).grad().clone();
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for k in 0..analytic.len() {
            let orig = store.get(id).value().data()[k];
            store.get_mut(id).value_mut().data_mut()[k] = orig + step;
            let up = eval(store)?;
            store.get_mut(id).value_mut().data_mut()[k] = orig - step;
            let down = eval(store)?;
            store.get_mut(id).value_mut().data_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[k];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        report.params.push(ParamCheck {
            name: store.get(id).name().to_string(),
            elements: analytic.len(),
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            passed: max_rel < tolerance,
        });
    }
    store.zero_grad();
    Ok(report)
}
