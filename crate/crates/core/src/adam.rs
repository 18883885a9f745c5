//! Adam over flat parameter vectors.

use thiserror::Error;

/// Signalled instead of applying an update when a gradient is NaN/inf.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("non-finite gradient at index {index}; update rejected")]
pub struct NonFiniteGradient {
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_len: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One descent step on `params` along `grads`.
    ///
    /// A non-finite gradient rejects the whole update (moments untouched) so a
    /// single bad batch cannot poison the accumulators.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NonFiniteGradient> {
        assert_eq!(params.len(), self.m.len(), "adam_step: parameter shape mismatch");
        assert_eq!(grads.len(), self.m.len(), "adam_step: gradient shape mismatch");
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NonFiniteGradient { index });
        }

        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
