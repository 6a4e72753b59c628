use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based), then zeroes the
/// gradients. Nothing is modified if any gradient is non-finite.
pub fn adam_step(params: &mut ParamSet, cfg: &AdamConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(Error::contract("adam_step: step index starts at 1"));
    }
    if let Some((name, _)) = params.iter().find(|(_, p)| !p.grad.all_finite()) {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    let t = t.min(i32::MAX as u64) as i32;
    let bias1 = 1.0 - (cfg.beta1 as f64).powi(t);
    let bias2 = 1.0 - (cfg.beta2 as f64).powi(t);
    let step = (cfg.lr as f64 / bias1) as f32;
    let bias2_sqrt = bias2.sqrt() as f32;

    for (_, p) in params.iter_mut() {
        let grads = p.grad.data();
        let m = p.first_moment.data_mut();
        for (m, &g) in m.iter_mut().zip(grads) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        }
        let v = p.second_moment.data_mut();
        for (v, &g) in v.iter_mut().zip(grads) {
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        }
        let (m, v) = (p.first_moment.data(), p.second_moment.data());
        for ((w, &m), &v) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            *w -= step * m / (v.sqrt() / bias2_sqrt + cfg.eps);
        }
        p.grad.fill(0.0);
    }
    Ok(())
}
