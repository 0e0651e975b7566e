//! AdamW with decoupled weight decay and optional global-norm clipping.

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Rescale gradients whose global L2 norm exceeds this; `None` disables.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            max_grad_norm: Some(1.0),
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.max_grad_norm.is_none_or(|n| n > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Per-parameter moments, indexed like the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<ArrayD<T>>,
    pub v: Vec<ArrayD<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<ArrayD<T>> = params
            .iter()
            .map(|(_, e)| ArrayD::zeros(e.value.raw_dim()))
            .collect();
        Ok(AdamW {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    /// Apply one update. Returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) -> f64 {
        let norm = grads.global_norm().to_f64_lossy();
        let clip = match self.config.max_grad_norm {
            Some(max) if norm > max => max / (norm + 1e-12),
            _ => 1.0,
        };
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let f = |x: f64| T::from_f64_lossy(x);
        let (b1, b2, eps, clip) = (f(c.beta1), f(c.beta2), f(c.eps), f(clip));
        let (one, step_size, decay) = (T::one(), f(c.lr / bc1), f(1.0 - c.lr * c.weight_decay));
        let inv_bc2 = f(1.0 / bc2);
        for (id, g) in grads.iter() {
            let i = id.0;
            if !params.entry(*id).trainable {
                continue;
            }
            let p = params.get_mut(*id);
            Zip::from(p)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    let g = g * clip;
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let denom = (*v * inv_bc2).sqrt() + eps;
                    *p = *p * decay - step_size * *m / denom;
                });
        }
        norm
    }
}
