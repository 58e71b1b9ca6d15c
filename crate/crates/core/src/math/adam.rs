//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamConfig<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Scalar> AdamConfig<T> {
    pub fn with_learning_rate(learning_rate: T) -> Self {
        AdamConfig {
            learning_rate,
            beta1: lit(0.9),
            beta2: lit(0.999),
            epsilon: lit(1e-8),
        }
    }
}

/// Per-parameter-block optimizer state (first/second moments and step count).
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    first_moment: Vec<T>,
    second_moment: Vec<T>,
    step: u64,
    config: AdamConfig<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig<T>) -> Self {
        AdamState {
            first_moment: vec![T::zero(); len],
            second_moment: vec![T::zero(); len],
            step: 0,
            config,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update applied in place.
    ///
    /// `block` names the parameter block in error messages.
    pub fn apply(&mut self, block: &str, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::dim(
                format!("adam block '{block}'"),
                self.first_moment.len(),
                grads.len(),
            ));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in block '{block}' at index {i}"
            )));
        }
        self.step += 1;
        let c = &self.config;
        let t = lit::<T>(self.step as f64);
        let bias1 = T::one() - c.beta1.powf(t);
        let bias2 = T::one() - c.beta2.powf(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = c.beta1 * self.first_moment[i] + (T::one() - c.beta1) * g;
            self.second_moment[i] =
                c.beta2 * self.second_moment[i] + (T::one() - c.beta2) * g * g;
            let m_hat = self.first_moment[i] / bias1;
            let v_hat = self.second_moment[i] / bias2;
            params[i] = params[i] - c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
        Ok(())
    }
}
