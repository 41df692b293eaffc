use serde::{Deserialize, Serialize};

use crate::field::FieldParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: FieldParams,
    v: FieldParams,
    t: u32,
}

impl Adam {
    pub fn new(params: &FieldParams, config: AdamConfig) -> Self {
        Adam {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut FieldParams, grads: &FieldParams, lr: f64) {
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{EncodingConfig, FieldArch};

    #[test]
    fn first_step_moves_by_lr() {
        let arch = FieldArch {
            trunk_depth: 1,
            trunk_width: 4,
            skip_layer: None,
            head_width: 4,
        };
        let enc = EncodingConfig {
            k_position: 1,
            k_direction: 1,
            ..Default::default()
        };
        let mut p = FieldParams::zeros(arch, &enc);
        let mut g = p.zeros_like();
        g.layers[0].bias[1] = -3.0;
        g.layers[0].bias[2] = 1e-3;
        let mut opt = Adam::new(&p, AdamConfig::default());
        opt.step(&mut p, &g, 0.01);
        assert!((p.layers[0].bias[1] - 0.01).abs() < 1e-9);
        assert!((p.layers[0].bias[2] + 0.01).abs() < 1e-6);
        assert_eq!(p.layers[0].bias[0], 0.0);
        assert_eq!(opt.steps_taken(), 1);
    }
}
