use std::collections::{BTreeMap, HashMap};

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

/// Adaptive-moment gradient descent, no weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Adam { beta1, beta2, eps: 1e-8, step: 0, moments: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &HashMap<ParamId, Tensor>, lr: f64) {
        self.step_with(store, grads, |_| lr);
    }

    /// One update with a per-parameter learning rate.
    pub fn step_with(&mut self, store: &mut ParamStore, grads: &HashMap<ParamId, Tensor>, lr: impl Fn(ParamId) -> f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut ids: Vec<&ParamId> = grads.keys().collect();
        ids.sort();
        for &id in ids {
            if store.is_frozen(id) {
                continue;
            }
            let lr = lr(id);
            let g = grads[&id].data();
            let (m, v) = self.moments.entry(id).or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let p = store.value_mut(id).data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

pub fn global_norm(grads: &HashMap<ParamId, Tensor>) -> f64 {
    let mut ids: Vec<&ParamId> = grads.keys().collect();
    ids.sort();
    ids.iter().map(|id| grads[id].sum_sq()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut HashMap<ParamId, Tensor>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.values_mut().for_each(|g| g.scale_in_place(s));
    }
    norm
}
