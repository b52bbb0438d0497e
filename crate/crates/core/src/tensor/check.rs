use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor of the relative error, so coordinates whose true
/// derivative is zero are judged by absolute error instead.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Maximum relative error between the reverse-mode gradient of a scalar
/// function and its central finite difference with the given step.
///
/// The error for each coordinate is
/// `|analytic - numeric| / max(|analytic|, |numeric|, GRAD_CHECK_FLOOR)`.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_with(f, x, step, GRAD_CHECK_FLOOR)
}

pub fn grad_check_with<F>(f: F, x: &Tensor<f64>, step: f64, floor: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::invalid(format!("grad_check: step must be positive, got {step}")));
    }
    let mut g = Graph::new();
    let xv = g.param(x.clone())?;
    let loss = f(&mut g, xv)?;
    g.backward(loss)?;
    let analytic = g.grad(xv).expect("leaf gradient populated by backward");

    let eval = |probe: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.input(probe)?;
        let l = f(&mut g, v)?;
        if g.value(l).len() != 1 {
            return Err(Error::invalid("grad_check: function is not scalar-valued"));
        }
        Ok(g.item(l))
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    Ok(worst)
}
