use crate::error::{NnError, Result};
use crate::param::ParamStore;

/// Bias-corrected Adam over every trainable, non-frozen parameter of a store.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// Applies one update with the accumulated gradients, then clears all
    /// gradients. A zero learning rate advances the moments but leaves values
    /// untouched; negative or non-finite rates are rejected.
    pub fn step(&self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(NnError::LearningRate(lr));
        }
        for p in store.iter_mut() {
            if p.is_trainable() && !p.frozen {
                p.step += 1;
                let t = p.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                let g = p.grad.data();
                let m = p.m.data_mut();
                for (mi, gi) in m.iter_mut().zip(g) {
                    *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                }
                let v = p.v.data_mut();
                for (vi, gi) in v.iter_mut().zip(g) {
                    *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                }
                if lr > 0.0 {
                    let (m, v) = (p.m.data(), p.v.data());
                    for ((w, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                        *w -= lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
                    }
                }
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }
}
