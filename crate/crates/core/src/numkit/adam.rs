use serde::{Deserialize, Serialize};

use super::{NumError, Tensor};

/// Hyperparameters of the Adam update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: `θ ← θ − lr·wd·θ` each step.
    pub weight_decay: f64,
    /// Proximal-free L1 shrink: `θ ← θ − lr·l1·sign(θ)` each step.
    pub l1_penalty: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, l1_penalty: 0.0 }
    }
}

/// First/second moment estimates for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let m: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self { config, step: 0, v: m.clone(), m }
    }

    /// One bias-corrected Adam update. `grads[i] == None` or
    /// `trainable[i] == false` leaves parameter `i` (and its moments) untouched.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Option<Vec<f64>>],
        trainable: Option<&[bool]>,
    ) -> Result<(), NumError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(NumError::Shape {
                op: "adam_step",
                detail: format!("{} params, {} grads, {} moments", params.len(), grads.len(), self.m.len()),
            });
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, weight_decay, l1_penalty } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, param) in params.iter_mut().enumerate() {
            if trainable.is_some_and(|t| !t[i]) {
                continue;
            }
            let Some(g) = &grads[i] else { continue };
            if g.len() != param.numel() {
                return Err(NumError::Shape { op: "adam_step", detail: format!("gradient {i} length") });
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, theta) in param.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let old = *theta;
                let mut next = old - lr * m_hat / (v_hat.sqrt() + eps);
                if weight_decay != 0.0 {
                    next -= lr * weight_decay * old;
                }
                if l1_penalty != 0.0 {
                    next -= lr * l1_penalty * sign(old);
                }
                *theta = next;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let mut params = vec![Tensor::new(vec![3], vec![0.5, -1.0, 0.0]).unwrap()];
        let before = params.clone();
        let mut st = AdamState::new(AdamConfig::default(), &params);
        for _ in 0..5 {
            st.step(&mut params, &[Some(vec![0.0; 3])], None).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g = 1 and v̂ = g² = 1 after bias correction, so Δθ = −lr/(1+eps).
        let mut params = vec![Tensor::scalar(0.0)];
        let mut st = AdamState::new(AdamConfig::default(), &params);
        st.step(&mut params, &[Some(vec![1.0])], None).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks_geometrically() {
        let cfg = AdamConfig { weight_decay: 5e-4, ..AdamConfig::default() };
        let mut params = vec![Tensor::scalar(2.0)];
        let mut st = AdamState::new(cfg, &params);
        let steps = 10;
        for _ in 0..steps {
            st.step(&mut params, &[Some(vec![0.0])], None).unwrap();
        }
        let expected = 2.0 * (1.0 - 1e-3 * 5e-4f64).powi(steps);
        assert!((params[0].data()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn l1_pulls_toward_zero_and_respects_freezing() {
        let cfg = AdamConfig { l1_penalty: 1e-3, ..AdamConfig::default() };
        let mut params = vec![Tensor::scalar(1.0), Tensor::scalar(-1.0), Tensor::scalar(3.0)];
        let mut st = AdamState::new(cfg, &params);
        let grads = vec![Some(vec![0.0]), Some(vec![0.0]), Some(vec![0.0])];
        st.step(&mut params, &grads, Some(&[true, true, false])).unwrap();
        assert!((params[0].data()[0] - (1.0 - 1e-6)).abs() < 1e-15);
        assert!((params[1].data()[0] + (1.0 - 1e-6)).abs() < 1e-15);
        assert_eq!(params[2].data()[0], 3.0);
    }
}
