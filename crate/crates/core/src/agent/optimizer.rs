use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::agent::network::{Dense, QNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// SGD momentum.
    pub momentum: f64,
    /// Global gradient-norm clip; zero disables clipping.
    pub grad_clip: f64,
}

/// Scales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Dense], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.w.iter().chain(g.b.iter()).map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.w *= k;
            g.b *= k;
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub cfg: OptimizerConfig,
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, net: &QNetwork) -> Self {
        let zeros = |net: &QNetwork| -> Vec<Dense> {
            net.layers
                .iter()
                .map(|l| Dense {
                    w: ndarray::Array2::zeros(l.w.raw_dim()),
                    b: ndarray::Array1::zeros(l.b.raw_dim()),
                })
                .collect()
        };
        let v = if cfg.kind == OptimizerKind::Adam { zeros(net) } else { Vec::new() };
        Optimizer {
            cfg,
            m: zeros(net),
            v,
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut QNetwork, grads: &mut [Dense]) -> f64 {
        let norm = clip_global_norm(grads, self.cfg.grad_clip);
        self.t += 1;
        let lr = self.cfg.learning_rate;
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                let mu = self.cfg.momentum;
                for ((layer, g), m) in net.layers.iter_mut().zip(grads.iter()).zip(self.m.iter_mut()) {
                    Zip::from(&mut layer.w).and(&mut m.w).and(&g.w).for_each(|p, m, &g| {
                        *m = mu * *m + g;
                        *p -= lr * *m;
                    });
                    Zip::from(&mut layer.b).and(&mut m.b).and(&g.b).for_each(|p, m, &g| {
                        *m = mu * *m + g;
                        *p -= lr * *m;
                    });
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - BETA1.powi(self.t.min(i32::MAX as u64) as i32);
                let c2 = 1.0 - BETA2.powi(self.t.min(i32::MAX as u64) as i32);
                let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                };
                for (((layer, g), m), v) in net
                    .layers
                    .iter_mut()
                    .zip(grads.iter())
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    Zip::from(&mut layer.w)
                        .and(&mut m.w)
                        .and(&mut v.w)
                        .and(&g.w)
                        .for_each(|p, m, v, &g| update(p, m, v, g));
                    Zip::from(&mut layer.b)
                        .and(&mut m.b)
                        .and(&mut v.b)
                        .and(&g.b)
                        .for_each(|p, m, v, &g| update(p, m, v, g));
                }
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Dense {
            w: arr2(&[[3.0, 0.0]]),
            b: arr1(&[4.0]),
        }];
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((g[0].w[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((g[0].b[0] - 0.8).abs() < 1e-15);
    }
}
