use crate::error::{NnError, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// AdamW when set: decay is applied to the parameters, not folded into the gradient.
    pub decoupled: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn adam(lr: f64, weight_decay: f64) -> Self {
        Self { lr, weight_decay, decoupled: false, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self { decoupled: true, ..Self::adam(lr, weight_decay) }
    }

    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }
}

/// One ADAM/AdamW update of every parameter. `grads` must be aligned with the
/// store's iteration order. A non-finite gradient rejects the whole step.
pub fn adam_step(params: &mut ParamStore, grads: &[Vec<f64>], cfg: &AdamConfig) -> Result<()> {
    assert_eq!(grads.len(), params.len(), "contract violation: gradient count");
    for ((name, value, _), g) in params.entries_mut().zip(grads) {
        assert_eq!(g.len(), value.numel(), "contract violation: gradient extent for `{name}`");
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient(name.to_string()));
        }
    }
    for ((_, value, state), g) in params.entries_mut().zip(grads) {
        state.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
        let theta = value.data_mut();
        for i in 0..theta.len() {
            let mut gi = g[i];
            if cfg.decoupled {
                theta[i] -= cfg.lr * cfg.weight_decay * theta[i];
            } else {
                gi += cfg.weight_decay * theta[i];
            }
            state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * gi;
            state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = state.m[i] / bc1;
            let v_hat = state.v[i] / bc2;
            theta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
