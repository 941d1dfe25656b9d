//! Adam optimizer over a [`ParamStore`].

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::params::ParamStore;
use crate::tape::Grads;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 3e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub step_count: u64,
    pub first_moment: BTreeMap<String, ArrayD<f64>>,
    pub second_moment: BTreeMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, step_count: 0, first_moment: BTreeMap::new(), second_moment: BTreeMap::new() }
    }

    /// One update over every parameter present in `grads`. Parameters without
    /// a gradient this step are left untouched (their moments too).
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step_count += 1;
        let t = self.step_count;
        let c1 = 1.0 - self.cfg.beta1.powi(t as i32);
        let c2 = 1.0 - self.cfg.beta2.powi(t as i32);
        for (name, g) in grads {
            if !store.is_trainable(name) {
                continue;
            }
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            m.zip_mut_with(g, |mi, &gi| *mi = self.cfg.beta1 * *mi + (1.0 - self.cfg.beta1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = self.cfg.beta2 * *vi + (1.0 - self.cfg.beta2) * gi * gi);
            let p = store.get_mut(name);
            let lr = self.cfg.learning_rate;
            let eps = self.cfg.epsilon;
            ndarray::Zip::from(&mut *p).and(&*m).and(&*v).for_each(|pi, &mi, &vi| {
                let mhat = mi / c1;
                let vhat = vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }
}
