//! Adam with decoupled weight decay, plus an optional EMA of the weights.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(param_count: usize, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Bias-corrected moments for inspection (valid after at least one step).
    pub fn corrected_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        (
            self.m.iter().map(|&m| m / c1).collect(),
            self.v.iter().map(|&v| v / c2).collect(),
        )
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ContractViolation(format!(
                "optimizer built for {} params, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            if !g.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient {g} at parameter {i}"
                )));
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            // decoupled weight decay
            params[i] -= self.lr * self.weight_decay * params[i];
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Exponential moving average of a parameter vector.
#[derive(Debug, Clone)]
pub struct Ema {
    pub decay: f64,
    shadow: Vec<f64>,
}

impl Ema {
    pub fn new(params: &[f64], decay: f64) -> Self {
        Ema { decay, shadow: params.to_vec() }
    }

    pub fn update(&mut self, params: &[f64]) {
        for (s, &p) in self.shadow.iter_mut().zip(params) {
            *s = self.decay * *s + (1.0 - self.decay) * p;
        }
    }

    pub fn shadow(&self) -> &[f64] {
        &self.shadow
    }
}
