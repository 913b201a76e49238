//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Bound, ParamStore, Tape, Var};
use crate::error::{invalid_arg, invalid_state, Result};
use crate::tensor::Tensor;

/// Gradients below this magnitude are compared absolutely.
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn scalar_value(tape: &Tape, y: Var) -> Result<f64> {
    let v = tape.value(y);
    if v.shape() != [1, 1] {
        return invalid_arg(format!("gradient check needs a scalar function, got {:?}", v.shape()));
    }
    Ok(v.item())
}

fn report(analytic: Vec<f64>, numeric: Vec<f64>, tol: f64) -> GradCheckReport {
    let rel_errors: Vec<f64> =
        analytic.iter().zip(&numeric).map(|(&a, &n)| rel_error(a, n)).collect();
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    GradCheckReport {
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    }
}

fn central(f_plus: f64, f_minus: f64, eps: f64) -> Result<f64> {
    if !(f_plus.is_finite() && f_minus.is_finite()) {
        return invalid_state("non-finite function value during gradient check");
    }
    Ok((f_plus - f_minus) / (2.0 * eps))
}

/// Compares the tape gradient of scalar `f` at `x` against central differences.
pub fn gradient_check<F>(f: F, x: &Tensor, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |x: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone())?;
        let y = f(&mut tape, xv)?;
        scalar_value(&tape, y)
    };
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone())?;
    let y = f(&mut tape, xv)?;
    scalar_value(&tape, y)?;
    let analytic = tape.backward(y)?.wrt(&tape, xv).into_data();

    let mut numeric = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.push(central(plus, minus, eps)?);
    }
    Ok(report(analytic, numeric, tol))
}

/// Gradient check of a scalar model loss with respect to its parameters.
///
/// At most `per_tensor` coordinates of each parameter tensor are probed,
/// chosen with `seed`; `None` probes every coordinate.
pub fn gradient_check_params<F>(
    f: F,
    store: &ParamStore,
    per_tensor: Option<usize>,
    seed: u64,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = tape.bind(s)?;
        let y = f(&mut tape, &bound)?;
        scalar_value(&tape, y)
    };
    let mut tape = Tape::new();
    let bound = tape.bind(store)?;
    let y = f(&mut tape, &bound)?;
    scalar_value(&tape, y)?;
    let grads = tape.backward(y)?.for_params(&tape, &bound);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (t, g) in grads.iter().enumerate() {
        let len = g.len();
        let coords: Vec<usize> = match per_tensor {
            Some(k) if k < len => {
                let mut c = sample(&mut rng, len, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };
        for i in coords {
            let orig = probe.tensors()[t].data()[i];
            probe.tensors_mut()[t].data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.tensors_mut()[t].data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.tensors_mut()[t].data_mut()[i] = orig;
            analytic.push(g.data()[i]);
            numeric.push(central(plus, minus, eps)?);
        }
    }
    Ok(report(analytic, numeric, tol))
}
