use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::Gradients;
use crate::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale the gradient when its global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adam with bias-corrected moments over a fixed subset of parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    ids: Vec<ParamId>,
    first: Vec<Mat>,
    second: Vec<Mat>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, config: AdamConfig) -> Self {
        let first = ids
            .iter()
            .map(|&id| Mat::zeros(store.get(id).raw_dim()))
            .collect();
        let second = ids
            .iter()
            .map(|&id| Mat::zeros(store.get(id).raw_dim()))
            .collect();
        Self {
            config,
            ids,
            first,
            second,
            step: 0,
        }
    }

    /// Optimiser over every parameter in the store.
    pub fn for_all(store: &ParamStore, config: AdamConfig) -> Self {
        Self::new(store, store.ids().collect(), config)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    /// Applies one update. Parameters the gradient table does not reach are
    /// treated as having zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        let scale = match self.config.clip_norm {
            Some(max) => {
                let norm = grads.norm(&self.ids);
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for (k, &id) in self.ids.iter().enumerate() {
            let zero;
            let g = match grads.param(id) {
                Some(g) => g,
                None => {
                    // untouched and never updated: nothing to decay
                    if self.first[k].iter().all(|&v| v == 0.0)
                        && self.second[k].iter().all(|&v| v == 0.0)
                    {
                        continue;
                    }
                    zero = Mat::zeros(store.get(id).raw_dim());
                    &zero
                }
            };
            if g.raw_dim() != store.get(id).raw_dim() {
                let p = store.get(id);
                return Err(NnError::ShapeMismatch {
                    op: "adam",
                    lhs: (p.nrows(), p.ncols()),
                    rhs: (g.nrows(), g.ncols()),
                });
            }
            Self::apply(
                c,
                scale,
                (bias1, bias2),
                store.get_mut(id),
                &mut self.first[k],
                &mut self.second[k],
                g,
            );
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn apply(
        c: AdamConfig,
        scale: f64,
        (bias1, bias2): (f64, f64),
        param: &mut Mat,
        m: &mut Mat,
        v: &mut Mat,
        g: &Mat,
    ) {
        ndarray::Zip::from(param)
            .and(m)
            .and(v)
            .and(g)
            .for_each(|p, m, v, &g| {
                let g = g * scale;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= c.lr * m_hat / (v_hat.sqrt() + c.epsilon);
            });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[1.5, -2.0]]);
        let mut adam = Adam::for_all(&store, AdamConfig::with_lr(0.1));
        for _ in 0..10 {
            let grads = {
                let mut tape = Tape::new(&store);
                let w = tape.param(id);
                let z = tape.scale(w, 0.0).unwrap();
                let s = tape.sum_all(z).unwrap();
                tape.backward(s).unwrap()
            };
            adam.step(&mut store, &grads).unwrap();
        }
        assert_eq!(store.get(id), &array![[1.5, -2.0]]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[0.0, 0.0]]);
        let mut adam = Adam::for_all(&store, AdamConfig::with_lr(0.01));
        let grads = {
            let mut tape = Tape::new(&store);
            let w = tape.param(id);
            let c = tape.input(array![[3.0, -0.5]]).unwrap();
            let p = tape.mul(w, c).unwrap();
            let s = tape.sum_all(p).unwrap();
            tape.backward(s).unwrap()
        };
        adam.step(&mut store, &grads).unwrap();
        let w = store.get(id);
        assert!((w[[0, 0]] + 0.01).abs() < 1e-6);
        assert!((w[[0, 1]] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn minimises_a_scalar_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[0.0]]);
        let mut adam = Adam::for_all(&store, AdamConfig::with_lr(0.1));
        for _ in 0..200 {
            let grads = {
                let mut tape = Tape::new(&store);
                let w = tape.param(id);
                let d = tape.affine(w, 1.0, -3.0).unwrap();
                let sq = tape.square(d).unwrap();
                let s = tape.sum_all(sq).unwrap();
                tape.backward(s).unwrap()
            };
            adam.step(&mut store, &grads).unwrap();
        }
        assert!((store.get(id)[[0, 0]] - 3.0).abs() < 0.1);
    }
}
