//! Bias-corrected first-order optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One update step in place. Gradients must be finite and match the
    /// parameter length.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], hyper: &AdamParams) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam length mismatch: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::numeric("adam_step", format!("gradient {i} is {}", grads[i])));
        }
        self.t += 1;
        let bc1 = 1.0 - hyper.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hyper.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = hyper.beta1 * self.m[i] + (1.0 - hyper.beta1) * g;
            self.v[i] = hyper.beta2 * self.v[i] + (1.0 - hyper.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::numeric("adam_step", format!("parameter {i} became {}", params[i])));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_magnitude_is_lr_times_sign() {
        // With zero state, m-hat = g and v-hat = g^2, so the update is
        // lr * g / (|g| + eps) per coordinate.
        let hyper = AdamParams::with_lr(1e-2);
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![3.0, -0.7, 0.0002];
        let mut st = AdamState::new(3);
        let before = p.clone();
        st.step(&mut p, &g, &hyper).unwrap();
        for i in 0..3 {
            let want = hyper.lr * g[i] / (g[i].abs() + hyper.eps);
            let got = before[i] - p[i];
            assert!((got - want).abs() < 1e-12, "coord {i}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let hyper = AdamParams::with_lr(0.1);
        let mut p = vec![0.3, -0.4];
        let mut st = AdamState::new(2);
        st.step(&mut p, &[0.0, 0.0], &hyper).unwrap();
        assert_eq!(p, vec![0.3, -0.4]);
    }

    #[test]
    fn identical_calls_from_identical_state_agree_bitwise() {
        let hyper = AdamParams::with_lr(3e-3);
        let run = || {
            let mut p = vec![0.25, -1.5, 2.0];
            let mut st = AdamState::new(3);
            for k in 0..10 {
                let g: Vec<f64> = p.iter().map(|x| x * 0.3 + k as f64 * 0.01).collect();
                st.step(&mut p, &g, &hyper).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let hyper = AdamParams::with_lr(0.1);
        let mut p = vec![1.0];
        let mut st = AdamState::new(1);
        assert!(st.step(&mut p, &[f64::NAN], &hyper).is_err());
    }
}
