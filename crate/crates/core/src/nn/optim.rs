use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay; 0 gives plain Adam.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

pub struct Adam<S> {
    pub config: AdamConfig,
    m: Vec<Array2<S>>,
    v: Vec<Array2<S>>,
    step: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, _, p)| Array2::zeros(p.dim())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (S::c(c.beta1), S::c(c.beta2));
        let (one_b1, one_b2) = (S::c(1.0 - c.beta1), S::c(1.0 - c.beta2));
        let step_size = S::c(c.lr / bc1);
        let inv_bc2 = S::c(1.0 / bc2);
        let eps = S::c(c.eps);
        let decay = S::c(1.0 - c.lr * c.weight_decay);
        for (id, g) in grads.iter() {
            let i = id.index();
            let p = store.get_mut(id);
            if c.weight_decay > 0.0 {
                p.mapv_inplace(|x| x * decay);
            }
            Zip::from(p)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    *p = *p - step_size * *m / ((*v * inv_bc2).sqrt() + eps);
                });
        }
    }
}

/// Rescales gradients to at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm<S: Scalar>(grads: &mut Gradients<S>, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}
