//! Central finite-difference check of reverse-mode gradients.

use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Gradient norms below this count as zero; central differences carry
/// noise of about `eps * |loss| / h`.
pub const ZERO_NORM: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` in the Euclidean
    /// norm over the tensor; 0 when both norms are below [`ZERO_NORM`].
    pub relative_error: f64,
    pub analytic_norm: f64,
}

fn to_scalar(g: &Graph, root: Var) -> Result<f64> {
    let v = g.value(root);
    if v.len() != 1 {
        return Err(Error::shape("gradcheck", format!("loss has {} entries, expected 1", v.len())));
    }
    Ok(v.data()[0])
}

/// Compares the autodiff gradient of the scalar `loss(store)` with central
/// differences of step `h` for every trainable tensor.
pub fn check_gradients(
    store: &ParamStore,
    h: f64,
    loss: impl Fn(&ParamStore) -> Result<(Graph, Var)>,
) -> Result<Vec<TensorCheck>> {
    let (g, root) = loss(store)?;
    to_scalar(&g, root)?;
    let grads = g.backward(root)?.param_grads(store);
    let mut work = store.clone();
    let mut out = Vec::new();
    for (id, grad) in store.ids().zip(grads) {
        let entry = store.entry(id);
        if !entry.trainable {
            continue;
        }
        let analytic = grad.map(|t| t.into_data()).unwrap_or_else(|| vec![0.0; entry.value.len()]);
        let mut numeric = vec![0.0; entry.value.len()];
        for (k, n) in numeric.iter_mut().enumerate() {
            let x0 = entry.value.data()[k];
            work.get_mut(id).data_mut()[k] = x0 + h;
            let (gp, rp) = loss(&work)?;
            let up = to_scalar(&gp, rp)?;
            work.get_mut(id).data_mut()[k] = x0 - h;
            let (gm, rm) = loss(&work)?;
            let down = to_scalar(&gm, rm)?;
            work.get_mut(id).data_mut()[k] = x0;
            *n = (up - down) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let (na, nn) = (norm(&analytic), norm(&numeric));
        let scale = na.max(nn);
        out.push(TensorCheck {
            name: entry.name.clone(),
            relative_error: if scale < ZERO_NORM { 0.0 } else { norm(&diff) / scale },
            analytic_norm: na,
        });
    }
    Ok(out)
}

/// Largest relative error of a check.
pub fn worst(checks: &[TensorCheck]) -> f64 {
    checks.iter().map(|c| c.relative_error).fold(0.0, f64::max)
}
