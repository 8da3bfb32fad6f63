use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid ADAM settings {self:?}")))
        }
    }
}

/// ADAM over a fixed subset of a parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    ids: Vec<ParamId>,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
    clip: Option<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore, ids: Vec<ParamId>, clip: Option<f64>) -> Self {
        let zeros: Vec<Array2<f64>> = ids.iter().map(|id| Array2::zeros(store.get(*id).shape())).collect();
        Adam { config, ids, m: zeros.clone(), v: zeros, step: 0, clip }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn moments(&self) -> (&[Array2<f64>], &[Array2<f64>]) {
        (&self.m, &self.v)
    }

    /// Global L2 norm of the gradients this optimizer owns.
    pub fn grad_norm(&self, store: &ParamStore) -> f64 {
        self.ids
            .iter()
            .filter_map(|id| store.get(*id).grad.as_ref())
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Missing gradients count as zero. Nothing changes if any gradient is
    /// non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for id in &self.ids {
            if let Some(g) = &store.get(*id).grad {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {}", store.name(*id))));
                }
            }
        }
        let scale = match self.clip {
            Some(c) => {
                let n = self.grad_norm(store);
                if n > c {
                    c / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, id) in self.ids.iter().enumerate() {
            let t = store.get_mut(*id);
            let grad = t.grad.take();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            match grad {
                Some(g) => {
                    Zip::from(&mut *m).and(&mut *v).and(&g).for_each(|m, v, &g| {
                        let g = g * scale;
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                    });
                }
                None => {
                    m.mapv_inplace(|x| beta1 * x);
                    v.mapv_inplace(|x| beta2 * x);
                }
            }
            Zip::from(&mut t.value).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            });
        }
        Ok(())
    }
}
