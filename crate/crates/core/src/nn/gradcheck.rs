//! Central finite differences, used as the independent oracle for `backward`.

use super::params::{Grads, ParamId, ParamStore};
use super::Tensor;
use crate::error::{ensure, Error, Result};

/// `(f(x + eps·eᵢ) − f(x − eps·eᵢ)) / (2·eps)` for every coordinate `i`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    ensure!(eps > 0.0, "finite-difference step must be positive, got {eps}");
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Oracle(format!(
                "non-finite evaluation at coordinate {i} (f+ = {plus}, f- = {minus})"
            )));
        }
        out.push((plus - minus) / (2.0 * eps));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Finite-difference gradient of `loss(store)` with respect to one stored parameter.
pub fn finite_diff_param<F>(store: &mut ParamStore, id: ParamId, eps: f64, mut loss: F) -> Result<Vec<f64>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let x = store.value(id).clone();
    let g = finite_diff_grad(
        |probe| {
            store.set_values(id, probe.data())?;
            loss(store)
        },
        &x,
        eps,
    )?;
    store.set_values(id, x.data())?;
    Ok(g.into_data())
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference norm when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Compares analytic parameter gradients against finite differences for every
/// parameter named in `ids`; returns the worst relative error seen.
pub fn check_param_grads<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    analytic: &Grads,
    eps: f64,
    mut loss: F,
) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut worst = 0.0f64;
    for &id in ids {
        let numeric = finite_diff_param(store, id, eps, &mut loss)?;
        let zeros = vec![0.0; numeric.len()];
        let exact = analytic.get(id).unwrap_or(&zeros);
        worst = worst.max(relative_error(exact, &numeric));
    }
    Ok(worst)
}
