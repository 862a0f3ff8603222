//! Adam and RMSProp parameter updates.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::ParamStore;
use crate::{Result, SganError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Rmsprop { decay: f64, eps: f64 },
}

impl OptimizerKind {
    /// Adam with beta1 = 0.5, beta2 = 0.999, eps = 1e-8.
    pub fn default_adam() -> OptimizerKind {
        OptimizerKind::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// RMSProp with decay = 0.99, eps = 1e-8.
    pub fn default_rmsprop() -> OptimizerKind {
        OptimizerKind::Rmsprop {
            decay: 0.99,
            eps: 1e-8,
        }
    }
}

/// Per-network optimizer state. Moment buffers are shaped like the
/// parameter store and are zero at `step_count = 0`.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step_count: u64,
    pub first_moment: ParamStore,
    pub second_moment: ParamStore,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamStore) -> OptimizerState {
        OptimizerState {
            kind,
            lr,
            step_count: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }

    /// Apply one optimizer step in place. `grads` must be aligned with
    /// `params` and finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        if !grads.is_finite() {
            return Err(SganError::Config("non-finite gradients in optimizer step".into()));
        }
        self.step_count += 1;
        let t = self.step_count;
        match self.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(t as i32);
                let bc2 = 1.0 - beta2.powi(t as i32);
                for ((p, g), (m, v)) in params
                    .layers
                    .iter_mut()
                    .zip(grads.layers.iter())
                    .zip(
                        self.first_moment
                            .layers
                            .iter_mut()
                            .zip(self.second_moment.layers.iter_mut()),
                    )
                {
                    let it = p
                        .weight
                        .data_mut()
                        .iter_mut()
                        .zip(g.weight.data().iter())
                        .zip(
                            m.weight
                                .data_mut()
                                .iter_mut()
                                .zip(v.weight.data_mut().iter_mut()),
                        )
                        .chain(
                            p.bias
                                .iter_mut()
                                .zip(g.bias.iter())
                                .zip(m.bias.iter_mut().zip(v.bias.iter_mut())),
                        );
                    for ((pv, &gv), (mv, vv)) in it {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *pv -= self.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Rmsprop { decay, eps } => {
                for ((p, g), v) in params
                    .layers
                    .iter_mut()
                    .zip(grads.layers.iter())
                    .zip(self.second_moment.layers.iter_mut())
                {
                    let it = p
                        .weight
                        .data_mut()
                        .iter_mut()
                        .zip(g.weight.data().iter())
                        .zip(v.weight.data_mut().iter_mut())
                        .chain(p.bias.iter_mut().zip(g.bias.iter()).zip(v.bias.iter_mut()));
                    for ((pv, &gv), vv) in it {
                        *vv = decay * *vv + (1.0 - decay) * gv * gv;
                        *pv -= self.lr * gv / (vv.sqrt() + eps);
                    }
                }
            }
        }
        if !params.is_finite() {
            return Err(SganError::Config("non-finite parameters after optimizer step".into()));
        }
        Ok(())
    }

    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.step_count.to_le_bytes());
        h.update(self.first_moment.checksum());
        h.update(self.second_moment.checksum());
        h.finalize().into()
    }
}
