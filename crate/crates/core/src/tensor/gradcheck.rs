//! Central finite-difference checks of analytic gradients.

use super::{ParameterStore, Tape, Var};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute rather than relative
/// terms.
pub const DENOM_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the entry with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
    pub h: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    /// Parameters with at least one entry above tolerance.
    pub fn flagged(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| p.max_rel_error.is_nan() || p.max_rel_error >= self.tol)
            .map(|p| p.name.as_str())
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.flagged().is_empty()
    }

    pub fn entries_checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Compares analytic gradients to `(f(θ+h) − f(θ−h)) / 2h` for every
/// trainable entry of `store`. `f` builds a fresh tape and returns the scalar
/// loss node. The store is restored bit-exactly afterwards.
pub fn check_gradients<F>(f: F, store: &mut ParameterStore, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParameterStore) -> Result<(Tape, Var)>,
{
    let (mut tape, loss) = f(store)?;
    let base = tape.value(loss).item();
    tape.backward(loss)?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    for p in store.iter().filter(|p| p.trainable.is_trainable()) {
        let g = tape
            .params()
            .iter()
            .find(|(n, _)| n == &p.name)
            .and_then(|(_, v)| tape.grad(*v))
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; p.tensor.numel()]);
        analytic.push((p.name.clone(), g));
    }
    drop(tape);

    let eval = |store: &ParameterStore| -> Result<f64> {
        let (tape, loss) = f(store)?;
        Ok(tape.value(loss).item())
    };
    let again = eval(store)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Determinism {
            first: base,
            second: again,
        });
    }

    let mut report = GradCheckReport {
        params: Vec::new(),
        tol,
        h,
    };
    for (name, grad) in analytic {
        let indices = {
            let p = store.get(&name).expect("parameter listed above");
            p.trainable.trainable_indices(p.tensor.shape())
        };
        let mut check = ParamCheck {
            name: name.clone(),
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for idx in indices {
            let original = store.tensor(&name)?.data()[idx];
            store.tensor_mut(&name)?.data_mut()[idx] = original + h;
            let plus = eval(store);
            store.tensor_mut(&name)?.data_mut()[idx] = original - h;
            let minus = eval(store);
            store.tensor_mut(&name)?.data_mut()[idx] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let err = relative_error(grad[idx], numeric);
            if err > check.max_rel_error || err.is_nan() {
                check.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                check.worst_index = idx;
                check.analytic = grad[idx];
                check.numeric = numeric;
            }
            check.checked += 1;
        }
        report.params.push(check);
    }
    Ok(report)
}
