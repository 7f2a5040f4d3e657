use serde::{Deserialize, Serialize};

use super::store::ParameterStore;
use crate::error::{Error, Result};

/// Bias-corrected adaptive-moment optimizer with persistent moment state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently held in `store`.
    /// Frozen entries are skipped but keep their moment slots.
    pub fn step(&mut self, store: &mut ParameterStore, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(self.eps > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "invalid Adam settings betas=({}, {}) eps={}",
                self.beta1, self.beta2, self.eps
            )));
        }
        let entries = store.entries_mut();
        if self.m.len() != entries.len() {
            if !self.m.is_empty() {
                return Err(Error::Contract(format!(
                    "optimizer state covers {} parameters, store has {}",
                    self.m.len(),
                    entries.len()
                )));
            }
            self.m = entries.iter().map(|e| vec![0.0; e.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for ((e, m), v) in entries.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !e.trainable {
                continue;
            }
            let g = e.grad.data();
            let p = e.value.data_mut();
            for j in 0..p.len() {
                let gj = f64::from(g[j]);
                let mj = b1 * f64::from(m[j]) + (1.0 - b1) * gj;
                let vj = b2 * f64::from(v[j]) + (1.0 - b2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let upd = lr * (mj / bc1) / ((vj / bc2).sqrt() + self.eps);
                p[j] = (f64::from(p[j]) - upd) as f32;
            }
            if !e.value.is_finite() {
                return Err(Error::Numeric(format!("parameter `{}` became non-finite", e.name)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::DenseArray;

    fn single(value: f32, grad: f32) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("p", DenseArray::vector(vec![value]), true).unwrap();
        s.entries_mut()[0].grad = DenseArray::vector(vec![grad]);
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = single(1.0, 2.0);
        Adam::default().step(&mut s, 0.1).unwrap();
        assert!((s.get("p").unwrap().item() - 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_grad_is_a_no_op() {
        let mut s = single(1.0, 0.0);
        Adam::default().step(&mut s, 0.1).unwrap();
        assert_eq!(s.get("p").unwrap().item(), 1.0);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut s = single(0.0, -1.0);
        let mut opt = Adam::default();
        opt.step(&mut s, 0.01).unwrap();
        let a = s.get("p").unwrap().item();
        opt.step(&mut s, 0.01).unwrap();
        let b = s.get("p").unwrap().item();
        assert!(0.0 < a && a < b);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let mut s = single(1.0, 1.0);
        assert!(matches!(Adam::default().step(&mut s, 0.0), Err(Error::Config(_))));
    }
}
