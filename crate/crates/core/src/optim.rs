//! AdamW with decoupled weight decay and a cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .iter()
            .map(|(_, p)| vec![0.0; p.value.numel()])
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update of every trainable parameter. Parameters without an entry
    /// in `grads` are treated as having zero gradient; frozen parameters are
    /// never touched.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[(ParamId, Vec<f64>)],
        lr: f64,
    ) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::invalid(format!(
                "optimizer built for {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        let mut by_id: Vec<Option<&[f64]>> = vec![None; store.len()];
        for (id, g) in grads {
            let p = store.get(*id);
            if g.len() != p.value.numel() {
                return Err(Error::shape(
                    "adamw",
                    format!(
                        "`{}`: gradient of length {} for {} values",
                        p.name,
                        g.len(),
                        p.value.numel()
                    ),
                ));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGrad(p.name.clone()));
            }
            by_id[id.index()] = Some(g);
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for id in store.trainable_ids() {
            let i = id.index();
            let g = by_id[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(id).value.data_mut();
            for k in 0..p.len() {
                let gk = g.map_or(0.0, |g| g[k]);
                p[k] -= lr * self.weight_decay * p[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total: usize,
}

impl CosineSchedule {
    pub fn new(lr_max: f64, lr_min: f64, total: usize) -> Result<Self> {
        if !(lr_max.is_finite() && lr_min.is_finite() && lr_min >= 0.0 && lr_max >= lr_min) {
            return Err(Error::invalid(format!(
                "bad learning-rate bounds {lr_max} / {lr_min}"
            )));
        }
        Ok(Self {
            lr_max,
            lr_min,
            total,
        })
    }

    pub fn lr(&self, step: usize) -> f64 {
        if self.total == 0 {
            return self.lr_max;
        }
        let t = step.min(self.total) as f64 / self.total as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}
