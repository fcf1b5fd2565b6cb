use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; zero disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 10.0,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Grads,
    v: Grads,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        Self {
            cfg,
            m: params.zero_grads(),
            v: params.zero_grads(),
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) {
        self.step += 1;
        let c = self.cfg;
        let norm = grads.l2_norm();
        let clip = if c.clip_norm > 0.0 && norm > c.clip_norm {
            c.clip_norm / norm
        } else {
            1.0
        };
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id);
            let m = self.m.get_mut(id);
            let v = self.v.get_mut(id);
            let data = &mut params.tensor_mut(id).data;
            for i in 0..data.len() {
                let gi = g[i] * clip;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                data[i] -= c.learning_rate * mh / (vh.sqrt() + c.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Tensor;

    #[test]
    fn minimizes_a_quadratic() {
        let mut ps = ParamSet::default();
        let id = ps.add(
            "x",
            Tensor {
                rows: 2,
                cols: 1,
                data: vec![3.0, -2.0],
            },
        );
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.05,
                ..Default::default()
            },
            &ps,
        );
        for _ in 0..2000 {
            let mut g = ps.zero_grads();
            let x = ps.tensor(id).data.clone();
            g.get_mut(id)
                .copy_from_slice(&[2.0 * (x[0] - 1.0), 2.0 * (x[1] + 0.5)]);
            opt.step(&mut ps, &g);
        }
        let x = &ps.tensor(id).data;
        assert!(
            (x[0] - 1.0).abs() < 1e-3 && (x[1] + 0.5).abs() < 1e-3,
            "{x:?}"
        );
    }
}
