use super::{FitError, FitParams};
use crate::math::{pow, sqrt};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update of one parameter slice at step `t` (1-based).
pub fn adam_update(cfg: &AdamConfig, t: u64, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
    let c1 = 1.0 - pow(cfg.beta1, t as f64);
    let c2 = 1.0 - pow(cfg.beta2, t as f64);
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        p[i] -= cfg.lr * mh / (sqrt(vh) + cfg.eps);
    }
}

/// First and second moments shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: FitParams,
    pub v: FitParams,
}

impl AdamState {
    pub fn new(config: AdamConfig, like: &FitParams) -> Self {
        Self {
            config,
            step: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    pub fn apply(&mut self, params: &mut FitParams, grads: &FitParams) -> Result<(), FitError> {
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(FitError::ShapeMismatch);
        }
        self.step += 1;
        adam_update(
            &self.config,
            self.step,
            params.raw_canonical.values_mut(),
            grads.raw_canonical.values(),
            self.m.raw_canonical.values_mut(),
            self.v.raw_canonical.values_mut(),
        );
        adam_update(
            &self.config,
            self.step,
            params.delta_w.values_mut(),
            grads.delta_w.values(),
            self.m.delta_w.values_mut(),
            self.v.delta_w.values_mut(),
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameter() {
        let cfg = AdamConfig::default();
        let (mut p, mut m, mut v) = ([0.7], [0.0], [0.0]);
        adam_update(&cfg, 1, &mut p, &[0.0], &mut m, &mut v);
        assert_eq!(p[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig::default();
        let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
        adam_update(&cfg, 1, &mut p, &[0.5], &mut m, &mut v);
        assert!((p[0] + 1e-4).abs() < 1e-9);
    }

    #[test]
    fn two_steps_match_scalar_recursion() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let gs = [0.3, -1.2];
        let (mut p, mut m, mut v) = ([1.0], [0.0], [0.0]);
        for (i, g) in gs.iter().enumerate() {
            adam_update(&cfg, i as u64 + 1, &mut p, &[*g], &mut m, &mut v);
        }
        // hand-rolled
        let m1 = 0.1 * 0.3;
        let v1 = 0.001 * 0.09;
        let p1 = 1.0 - 0.1 * (m1 / 0.1) / ((v1 / 0.001f64).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1 * -1.2;
        let v2 = 0.999 * v1 + 0.001 * 1.44;
        let p2 = p1 - 0.1 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64 * 0.999)).sqrt() + 1e-8);
        assert!((p[0] - p2).abs() < 1e-12);
    }
}
