use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Params, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction. Parameters without a gradient are skipped.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    state: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            t: 0,
            state: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients. Nothing changes if
    /// any gradient is non-finite.
    pub fn step(&mut self, model: &mut dyn Params) -> Result<()> {
        let mut bad = None;
        model.visit("", &mut |name, t| {
            if bad.is_none() && t.grad().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
                bad = Some(name.to_string());
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        self.t += 1;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let state = &mut self.state;
        model.visit_mut("", &mut |name, t| {
            let Some(g) = t.grad() else { return };
            let (m, v) = state
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let data: Vec<f64> = t
                .data()
                .iter()
                .zip(&g)
                .zip(m.iter_mut().zip(v.iter_mut()))
                .map(|((&p, &g), (m, v))| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    p - lr * (*m / bc1) / ((*v / bc2).sqrt() + eps)
                })
                .collect();
            *t = Tensor::parameter(t.shape(), data).expect("same shape");
        });
        Ok(())
    }
}
