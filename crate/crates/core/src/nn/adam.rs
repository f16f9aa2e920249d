//! Adam optimizer with bias correction, one moment pair per parameter slot.

use crate::error::{Error, Result};
use crate::nn::model::{ModelGrads, ModelParams};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .learnable_slots()
            .iter()
            .map(|s| vec![0.0; s.len()])
            .collect();
        AdamState {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One update over all slots: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelGrads, lr: f64) -> Result<()> {
        let mut slots = params.learnable_slots_mut();
        if slots.len() != grads.slots.len() || slots.len() != self.first_moment.len() {
            return Err(Error::ShapeMismatch("adam slot count".into()));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for ((p, g), (m, v)) in slots
            .iter_mut()
            .zip(grads.slots.iter())
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            if p.len() != g.len() {
                return Err(Error::ShapeMismatch("adam slot length".into()));
            }
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::NetConfig;

    fn tiny_params() -> ModelParams {
        ModelParams::zeros(NetConfig {
            input_size: 16,
            dropout_rate: 0.0,
        })
        .unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = tiny_params();
        let before = params.clone();
        let grads = ModelGrads::zeros_like(&params);
        let mut state = AdamState::new(&params);
        state.step(&mut params, &grads, 0.01).unwrap();
        assert_eq!(params, before);
        assert!(state.first_moment.iter().flatten().all(|&m| m == 0.0));
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_magnitude_approaches_lr() {
        let mut params = tiny_params();
        let mut grads = ModelGrads::zeros_like(&params);
        grads.slots[1][0] = 3.5; // conv1 bias, g >> eps
        let mut state = AdamState::new(&params);
        let lr = 0.01;
        state.step(&mut params, &grads, lr).unwrap();
        let delta = params.conv[0].bias[0].abs();
        assert!((delta - lr).abs() < 1e-6, "delta {delta}");
    }

    #[test]
    fn ten_step_trace_matches_scalar_reference() {
        // Independent scalar Adam, written from the update equations.
        let g_trace = [0.3, -0.1, 0.7, 0.7, -0.2, 0.05, 0.4, -0.9, 0.33, 0.12];
        let lr = 0.005;
        let (b1, b2, eps) = (ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON);
        let mut p_ref = 0.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (k, &g) in g_trace.iter().enumerate() {
            let t = (k + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powf(t));
            let v_hat = v / (1.0 - b2.powf(t));
            p_ref -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut params = tiny_params();
        let mut state = AdamState::new(&params);
        for &g in &g_trace {
            let mut grads = ModelGrads::zeros_like(&params);
            grads.slots[1][0] = g;
            state.step(&mut params, &grads, lr).unwrap();
        }
        let got = params.conv[0].bias[0];
        assert!((got - p_ref).abs() < 1e-12, "{got} vs {p_ref}");
    }

    #[test]
    fn shapes_closed_under_step() {
        let mut params = tiny_params();
        let grads = ModelGrads::zeros_like(&params);
        let mut state = AdamState::new(&params);
        let lens: Vec<usize> = params.learnable_slots().iter().map(|s| s.len()).collect();
        state.step(&mut params, &grads, 1e-3).unwrap();
        let after: Vec<usize> = params.learnable_slots().iter().map(|s| s.len()).collect();
        assert_eq!(lens, after);
    }
}
