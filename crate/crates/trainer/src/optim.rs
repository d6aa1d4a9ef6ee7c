use ascl_core::tensor::Tensor;

use crate::config::OptimizerConfig;

const ADAM_EPS: f64 = 1e-8;

/// First-order optimizer state for a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Adam {
        beta1: f64,
        beta2: f64,
        t: i32,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
    Sgd {
        momentum: f64,
        weight_decay: f64,
        velocity: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.numel()]).collect::<Vec<_>>();
        match cfg {
            OptimizerConfig::Adam { beta1, beta2 } => Optimizer::Adam {
                beta1,
                beta2,
                t: 0,
                m: zeros(),
                v: zeros(),
            },
            OptimizerConfig::Sgd { momentum, weight_decay } => Optimizer::Sgd {
                momentum,
                weight_decay,
                velocity: zeros(),
            },
        }
    }

    /// One update. With `lr == 0` the parameters are left untouched.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        match self {
            Optimizer::Adam { beta1, beta2, t, m, v } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let mj = &mut m[k][j];
                        let vj = &mut v[k][j];
                        *mj = *beta1 * *mj + (1.0 - *beta1) * gj;
                        *vj = *beta2 * *vj + (1.0 - *beta2) * gj * gj;
                        if lr != 0.0 {
                            *w -= lr * (*mj / c1) / ((*vj / c2).sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
            Optimizer::Sgd {
                momentum,
                weight_decay,
                velocity,
            } => {
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        let vj = &mut velocity[k][j];
                        *vj = *momentum * *vj + gj + *weight_decay * *w;
                        if lr != 0.0 {
                            *w -= lr * *vj;
                        }
                    }
                }
            }
        }
    }
}
