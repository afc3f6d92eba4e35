//! Adam with bias correction over the network's parameter set.

use serde::{Deserialize, Serialize};

use super::{NeuralError, Params};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 8e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Params,
    pub v: Params,
}

impl AdamState {
    pub fn new(d: usize) -> Self {
        AdamState {
            t: 0,
            m: Params::zeros(d),
            v: Params::zeros(d),
        }
    }

    /// One Adam update. Fails fast on non-finite gradients; parameters are
    /// untouched in that case.
    pub fn step(
        &mut self,
        params: &mut Params,
        grads: &Params,
        cfg: &AdamConfig,
    ) -> Result<(), NeuralError> {
        if !grads.all_finite() {
            return Err(NeuralError::NonFinite("gradients".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (((_, p), (_, g)), ((_, m), (_, v))) in params
            .named_slices_mut()
            .into_iter()
            .zip(grads.named_slices())
            .zip(
                self.m
                    .named_slices_mut()
                    .into_iter()
                    .zip(self.v.named_slices_mut()),
            )
        {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut net = crate::neural::QNetwork::new(4, 2, 7);
        let before = net.params.clone();
        let mut adam = AdamState::new(4);
        adam.step(&mut net.params, &Params::zeros(4), &AdamConfig::default())
            .unwrap();
        assert_eq!(net.params, before);
    }

    #[test]
    fn first_step_is_bias_corrected_unit_step() {
        // g = 1 at t = 1: m_hat = 1, v_hat = 1, update = -lr / (1 + eps).
        let mut params = Params::zeros(1);
        let mut grads = Params::zeros(1);
        for (_, g) in grads.named_slices_mut() {
            g.fill(1.0);
        }
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(1);
        adam.step(&mut params, &grads, &cfg).unwrap();
        for (_, p) in params.named_slices() {
            for &x in p {
                assert!((x - (-0.1)).abs() < 1e-8, "step was {x}");
            }
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut net = crate::neural::QNetwork::new(4, 2, 3);
            let mut adam = AdamState::new(4);
            let mut grads = Params::zeros(4);
            for step in 0..100u64 {
                for (_, g) in grads.named_slices_mut() {
                    for (i, x) in g.iter_mut().enumerate() {
                        *x = ((step as f64) * 0.01 - i as f64 * 0.003).sin();
                    }
                }
                adam.step(&mut net.params, &grads, &AdamConfig::default())
                    .unwrap();
            }
            net.params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradients_fail_fast() {
        let mut params = Params::zeros(2);
        let mut grads = Params::zeros(2);
        grads.embed_op_w.data[0] = f64::NAN;
        let mut adam = AdamState::new(2);
        let err = adam
            .step(&mut params, &grads, &AdamConfig::default())
            .unwrap_err();
        assert!(matches!(err, NeuralError::NonFinite(_)));
    }
}
