//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Denominator floor of the relative error, so gradients that are zero up to
/// rounding do not blow the ratio up.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:<32} rel {:.3e}  abs {:.3e}",
                p.name, p.max_rel_error, p.max_abs_error
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences `(f(θ + h) − f(θ − h)) / 2h`, element by element, for every
/// parameter in `store`. `f` must be deterministic.
pub fn finite_diff_check<T, F>(
    store: &mut ParamStore<T>,
    h: f64,
    tol: f64,
    f: F,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;

    let eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let v = f(&mut tape, store)?;
        Ok(tape.value(v).item()?.as_f64())
    };

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut params = Vec::with_capacity(ids.len());
    for id in ids {
        let name = store.param(id).name.clone();
        let analytic = grads.param(id).map(|g| g.data().to_vec());
        let n = store.value(id).len();
        let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
        for k in 0..n {
            let original = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = original + T::lit(h);
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[k] = original - T::lit(h);
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.as_ref().map_or(0.0, |g| g[k].as_f64());
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        params.push(ParamCheck {
            name,
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    Ok(GradCheckReport { tol, params })
}
