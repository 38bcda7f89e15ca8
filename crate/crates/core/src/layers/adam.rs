use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamGrads, ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clipping threshold applied before each step.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// First and second moments for every table of one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut ParamGrads<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm().as_f64();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::lit(max_norm / norm));
    }
    norm
}

impl<T: Real> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update. Tables missing from `grads` are
    /// treated as having zero gradient. A non-finite gradient rejects the
    /// whole step and leaves parameters and moments untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>) -> Result<()> {
        for (key, g) in grads.iter() {
            if key.group == store.group() && !g.all_finite() {
                return Err(Error::NonFiniteGradient(store.name(*key).to_string()));
            }
        }
        let mut grads = grads.clone();
        grads.retain_group(store.group());
        if let Some(max) = self.config.clip_norm {
            clip_global_norm(&mut grads, max);
        }
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step_size = T::lit(c.lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.eps);
        let keys: Vec<_> = store.keys().collect();
        for key in keys {
            let i = key.index;
            let g = grads.get(key);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            match g {
                Some(g) => {
                    for ((mi, vi), &gi) in m.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                        *mi = b1 * *mi + one_b1 * gi;
                        *vi = b2 * *vi + one_b2 * gi * gi;
                    }
                }
                None => {
                    for (mi, vi) in m.iter_mut().zip(v.iter_mut()) {
                        *mi *= b1;
                        *vi *= b2;
                    }
                }
            }
            let p = store.get_mut(key).data_mut();
            for ((pi, &mi), &vi) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                *pi -= step_size * mi / ((vi * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
