//! Finite-difference verification of reverse-mode gradients.

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::Mat;

/// Denominator floor for [`relative_error`]; below this magnitude the
/// comparison is effectively absolute.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

fn eval_inputs<F>(store: &ParamStore, inputs: &[Mat], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let vars = inputs
        .iter()
        .map(|m| tape.input(m.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    scalar_of(&tape, out)
}

fn scalar_of(tape: &Tape<'_>, out: Var) -> Result<f64> {
    if tape.shape(out) != (1, 1) {
        return Err(NnError::invalid(
            "grad_check",
            format!("function must be scalar, got {:?}", tape.shape(out)),
        ));
    }
    let v = tape.scalar(out);
    if !v.is_finite() {
        return Err(NnError::NonFinite { op: "grad_check" });
    }
    Ok(v)
}

/// Compares reverse-mode gradients of a scalar function of `inputs` against
/// central differences with step `step`, returning the largest
/// [`relative_error`] over every input coordinate.
pub fn grad_check<F>(inputs: &[Mat], step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    grad_check_with(&ParamStore::new(), inputs, step, f)
}

/// [`grad_check`] over input coordinates while `f` reads parameters from
/// `store`.
pub fn grad_check_with<F>(store: &ParamStore, inputs: &[Mat], step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let analytic: Vec<Mat> = {
        let mut tape = Tape::new(store);
        let vars = inputs
            .iter()
            .map(|m| tape.input(m.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        scalar_of(&tape, out)?;
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, m)| {
                grads
                    .wrt(v)
                    .cloned()
                    .unwrap_or_else(|| Mat::zeros(m.raw_dim()))
            })
            .collect()
    };

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for k in 0..inputs.len() {
        let (rows, cols) = (inputs[k].nrows(), inputs[k].ncols());
        for r in 0..rows {
            for c in 0..cols {
                let orig = inputs[k][[r, c]];
                probe[k][[r, c]] = orig + step;
                let up = eval_inputs(store, &probe, &f)?;
                probe[k][[r, c]] = orig - step;
                let down = eval_inputs(store, &probe, &f)?;
                probe[k][[r, c]] = orig;
                let numeric = (up - down) / (2.0 * step);
                worst = worst.max(relative_error(analytic[k][[r, c]], numeric));
            }
        }
    }
    Ok(worst)
}

/// Same comparison over parameter coordinates. At most `max_per_param`
/// evenly spaced coordinates are probed per parameter matrix.
pub fn grad_check_params<F>(
    store: &ParamStore,
    ids: &[ParamId],
    step: f64,
    max_per_param: usize,
    f: F,
) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let grads: Vec<Mat> = {
        let mut tape = Tape::new(store);
        let out = f(&mut tape)?;
        scalar_of(&tape, out)?;
        let g = tape.backward(out)?;
        ids.iter()
            .map(|&id| {
                g.param(id)
                    .cloned()
                    .unwrap_or_else(|| Mat::zeros(store.get(id).raw_dim()))
            })
            .collect()
    };

    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for (k, &id) in ids.iter().enumerate() {
        let n = store.get(id).len();
        let cols = store.get(id).ncols();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        for flat in (0..n).step_by(stride) {
            let (r, c) = (flat / cols, flat % cols);
            let orig = store.get(id)[[r, c]];
            probe.get_mut(id)[[r, c]] = orig + step;
            let up = {
                let mut tape = Tape::new(&probe);
                let out = f(&mut tape)?;
                scalar_of(&tape, out)?
            };
            probe.get_mut(id)[[r, c]] = orig - step;
            let down = {
                let mut tape = Tape::new(&probe);
                let out = f(&mut tape)?;
                scalar_of(&tape, out)?
            };
            probe.get_mut(id)[[r, c]] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(grads[k][[r, c]], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sum_of_squares_matches_analytic_gradient() {
        let x = array![[0.3, -1.2, 2.5], [0.7, 0.0, -0.4]];
        let err = grad_check(&[x], 1e-5, |t, v| {
            let sq = t.square(v[0])?;
            t.sum_all(sq)
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let x = array![[1.0, 2.0]];
        let err = grad_check(&[x], 1e-5, |t, v| {
            let z = t.scale(v[0], 0.0)?;
            let s = t.sum_all(z)?;
            t.affine(s, 1.0, 4.0)
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_scalar_functions_are_rejected() {
        let x = array![[1.0, 2.0]];
        assert!(grad_check(&[x], 1e-5, |_, v| Ok(v[0])).is_err());
    }
}
