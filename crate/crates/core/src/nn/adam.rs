use std::collections::BTreeMap;

use super::scalar::Scalar;
use super::tensor::Tensor;
use super::NnError;

/// Adam hyperparameters. The optimizer itself is standard bias-corrected Adam.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates per named parameter plus the step counter.
pub struct AdamState<F> {
    pub t: u64,
    slots: BTreeMap<String, (Vec<F>, Vec<F>)>,
}

impl<F: Scalar> Default for AdamState<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> AdamState<F> {
    pub fn new() -> Self {
        Self { t: 0, slots: BTreeMap::new() }
    }
}

/// One bias-corrected Adam update over every named gradient. Parameters
/// without a gradient entry are left untouched.
pub fn adam_step<F: Scalar>(
    cfg: &AdamConfig,
    state: &mut AdamState<F>,
    params: &mut BTreeMap<String, Tensor<F>>,
    grads: &BTreeMap<String, Tensor<F>>,
) -> Result<(), NnError> {
    state.t += 1;
    let t = state.t;
    let b1 = F::from_double(cfg.beta1);
    let b2 = F::from_double(cfg.beta2);
    let lr = F::from_double(cfg.lr);
    let eps = F::from_double(cfg.eps);
    let bc1 = F::from_double(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = F::from_double(1.0 - cfg.beta2.powi(t as i32));
    for (name, grad) in grads {
        let param = params.get_mut(name).ok_or_else(|| {
            NnError::ShapeMismatch(format!("adam_step: gradient for unknown parameter `{name}`"))
        })?;
        if param.shape() != grad.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "adam_step: `{name}` param {:?} vs grad {:?}",
                param.shape(),
                grad.shape()
            )));
        }
        let n = param.numel();
        let (m, v) = state
            .slots
            .entry(name.clone())
            .or_insert_with(|| (vec![F::zero(); n], vec![F::zero(); n]));
        let p = param.data_mut();
        let g = grad.data();
        for i in 0..n {
            m[i] = b1 * m[i] + (F::one() - b1) * g[i];
            v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            if !p[i].is_finite() {
                return Err(NnError::NonFinite(format!("adam_step: parameter `{name}`")));
            }
        }
    }
    Ok(())
}
