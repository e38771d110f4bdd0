//! Central finite-difference verification of reverse-mode gradients.

use std::collections::BTreeMap;

use super::params::ParamSet;
use super::tape::{Tape, Var};
use super::tensor::{Tensor, TensorError};

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct FdReport {
    /// Largest relative error over all parameter coordinates.
    pub max_rel_error: f64,
    /// Path and flat index of the worst coordinate, when any were checked.
    pub worst_coord: Option<(String, usize)>,
    /// Number of coordinates compared.
    pub checked: usize,
    /// The tolerance the check was run against.
    pub tol: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// Compare reverse-mode gradients of `f` against central finite differences
/// `(f(p+eps) - f(p-eps)) / (2 eps)`, coordinate by coordinate.
///
/// `f` builds a scalar loss on the supplied tape from the registered
/// parameter vars, and must be deterministic: freeze any randomness (noise
/// draws, dropout masks) before calling this. Relative errors use
/// denominators clamped at 1e-8. The check only reports; exceeding `tol`
/// does not produce an error.
pub fn finite_difference_check<E, F>(
    mut f: F,
    params: &ParamSet,
    eps: f64,
    tol: f64,
) -> Result<FdReport, E>
where
    E: From<TensorError>,
    F: FnMut(&mut Tape, &BTreeMap<String, Var>) -> Result<Var, E>,
{
    assert!(eps > 0.0, "finite_difference_check needs eps > 0");

    let eval = |f: &mut F, ps: &ParamSet| -> Result<f64, E> {
        let mut tape = Tape::new();
        let vars = tape.register_params(ps)?;
        let loss = f(&mut tape, &vars)?;
        tape.value(loss).item().map_err(E::from)
    };

    // Analytic gradients once.
    let mut tape = Tape::new();
    let vars = tape.register_params(params)?;
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss).map_err(E::from)?;

    let mut max_rel_error: f64 = 0.0;
    let mut worst_coord = None;
    let mut checked = 0;

    for (path, tensor) in params.iter() {
        let analytic = grads.get(path).expect("backward covers every param");
        for i in 0..tensor.len() {
            let mut perturbed = |delta: f64| -> Result<f64, E> {
                let mut ps = params.clone();
                let t = ps.get_mut(path).expect("path exists");
                let mut data = t.data().to_vec();
                data[i] += delta;
                *t = Tensor::new(t.shape().to_vec(), data).map_err(E::from)?;
                eval(&mut f, &ps)
            };
            let plus = perturbed(eps)?;
            let minus = perturbed(-eps)?;
            let fd = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let denom = a.abs().max(fd.abs()).max(1e-8);
            let rel = (a - fd).abs() / denom;
            checked += 1;
            if rel > max_rel_error {
                max_rel_error = rel;
                worst_coord = Some((path.to_string(), i));
            }
        }
    }

    Ok(FdReport {
        max_rel_error,
        worst_coord,
        checked,
        tol,
    })
}
