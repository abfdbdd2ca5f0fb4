use super::mlp::{Gradients, MlpParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Adam moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &MlpParams<T>) -> Self {
        Self::with_constants(
            params,
            T::lit(DEFAULT_BETA1),
            T::lit(DEFAULT_BETA2),
            T::lit(DEFAULT_EPS),
        )
    }

    pub fn with_constants(params: &MlpParams<T>, beta1: T, beta2: T, eps: T) -> Self {
        let zeros: Vec<Vec<T>> = params.tensors().map(|t| vec![T::zero(); t.len()]).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn second_moments(&self) -> impl Iterator<Item = &T> {
        self.second.iter().flatten()
    }

    /// One bias-corrected Adam descent step. Parameters are untouched on error.
    pub fn step(&mut self, params: &mut MlpParams<T>, grads: &Gradients<T>, lr: T) -> Result<()> {
        if !(lr > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient passed to Adam".into()));
        }
        let shapes_match = params
            .tensors()
            .zip(grads.tensors())
            .zip(&self.first)
            .all(|((p, g), m)| p.len() == g.len() && p.len() == m.len())
            && grads.tensors().count() == self.first.len()
            && params.tensors().count() == self.first.len();
        if !shapes_match {
            return Err(Error::Shape("Adam state, parameters and gradients disagree".into()));
        }

        self.step += 1;
        let t = self.step as i32;
        let one = T::one();
        let bias1 = one - self.beta1.powi(t);
        let bias2 = one - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (one - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (one - self.beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
