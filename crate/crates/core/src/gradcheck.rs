//! Central finite-difference checks of analytic gradients.
//!
//! Run these on `f64` graphs: the same code paths as training, without `f32`
//! rounding masking small gradients.

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-3;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-6)
}

/// Max over elements of `|analytic − numeric| / (|analytic| + 1e-6)` for the
/// scalar function `f` at `x`, with numeric = `(f(x+εe) − f(x−εe)) / 2ε`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<'_, T>, Var) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let y = f(&mut g, xv)?;
        let grads = g.backward(y)?;
        grads
            .wrt(xv)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.shape()))
    };
    let eval = |t: Tensor<T>| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.input(t);
        let y = f(&mut g, xv)?;
        Ok(g.value(y).item().as_f64())
    };
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += T::from_f64(eps);
        let mut minus = x.clone();
        minus.data_mut()[i] -= T::from_f64(eps);
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(rel_err(analytic.data()[i].as_f64(), numeric));
    }
    Ok(worst)
}

/// Same measure over every element of every trainable parameter in `store`.
/// `f` builds the scalar loss on a graph bound to the store it is given.
pub fn grad_check_params<T, F>(store: &ParamStore<T>, f: F, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<'_, T>) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::with_params(store);
        let y = f(&mut g)?;
        g.backward(y)?.into_param_grads(store)
    };
    let eval = |s: &ParamStore<T>| -> Result<f64> {
        let mut g = Graph::with_params(s);
        let y = f(&mut g)?;
        Ok(g.value(y).item().as_f64())
    };
    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for (id, analytic) in &grads {
        for i in 0..analytic.numel() {
            let orig = probe.value(*id).data()[i];
            probe.get_mut(*id).value.data_mut()[i] = orig + T::from_f64(eps);
            let up = eval(&probe)?;
            probe.get_mut(*id).value.data_mut()[i] = orig - T::from_f64(eps);
            let down = eval(&probe)?;
            probe.get_mut(*id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(analytic.data()[i].as_f64(), numeric));
        }
    }
    Ok(worst)
}
