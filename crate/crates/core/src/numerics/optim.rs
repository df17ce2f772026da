use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamSet, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Holds first and second moment estimates for
/// every parameter of the set it was created for.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![T::zero(); p.value.numel()]).collect();
        Adam {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Restores optimizer state from saved moments.
    pub fn from_state(config: AdamConfig, m: Vec<Vec<T>>, v: Vec<Vec<T>>, t: u64) -> Self {
        Adam { config, m, v, t }
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// Applies one update using the stored gradients, then zeroes them.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<(), NumericsError> {
        if let Some((_, p)) = params.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(NumericsError::MissingGrad(p.name.clone()));
        }
        self.t += 1;
        let t = self.t as i32;
        let lr = T::lit(self.config.lr);
        let (b1, b2) = (T::lit(self.config.beta1), T::lit(self.config.beta2));
        let eps = T::lit(self.config.eps);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);

        for ((p, m), v) in params.iter_mut().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            let grad = p.grad.as_mut().expect("checked above");
            for (((w, g), mi), vi) in p.value.data_mut().iter_mut().zip(grad.iter_mut()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * *g;
                *vi = b2 * *vi + (T::one() - b2) * *g * *g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
                *g = T::zero();
            }
        }
        Ok(())
    }
}
