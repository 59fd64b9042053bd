use serde::{Deserialize, Serialize};

use crate::model::{Grads, Model};

/// Adaptive moment estimation over the flattened parameter list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, num_params: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn update(&mut self, model: &mut Model, grads: &Grads) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut i = 0;
        for (params, g) in model.param_slices_mut().into_iter().zip(grads.slices()) {
            for (p, &g) in params.iter_mut().zip(g) {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[i] / c1;
                let v_hat = self.v[i] / c2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
                i += 1;
            }
        }
        debug_assert_eq!(i, self.m.len());
    }
}
