//! AdamW with decoupled weight decay, preceded by global-norm clipping.
//!
//! One optimizer step is: reject non-finite gradients, clip the global
//! norm to the threshold, then for every tensor update first and second
//! moments and apply the bias-corrected adaptive step plus the decoupled
//! decay `lr * wd * theta`. The epoch-boundary learning-rate schedule
//! (multiply by gamma) lives with the training loop, which calls
//! [`AdamW::set_lr`].

use ndarray::ArrayD;

use crate::error::ModelError;
use crate::tensor::{Grads, Params, Scalar};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

pub struct AdamW<S: Scalar> {
    lr: f64,
    pub weight_decay: f64,
    pub clip: f64,
    step: u64,
    m: Vec<ArrayD<S>>,
    v: Vec<ArrayD<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(params: &Params<S>, lr: f64, weight_decay: f64, clip: f64) -> AdamW<S> {
        assert!(lr > 0.0 && clip > 0.0 && weight_decay >= 0.0);
        AdamW {
            lr,
            weight_decay,
            clip,
            step: 0,
            m: params
                .tensors()
                .iter()
                .map(|t| ArrayD::zeros(t.raw_dim()))
                .collect(),
            v: params
                .tensors()
                .iter()
                .map(|t| ArrayD::zeros(t.raw_dim()))
                .collect(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        assert!(lr > 0.0);
        self.lr = lr;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. `grads` is consumed conceptually: it
    /// is rescaled by clipping. Returns the pre-clip global norm.
    pub fn step(
        &mut self,
        params: &mut Params<S>,
        grads: &mut Grads<S>,
    ) -> Result<f64, ModelError> {
        if grads.first_non_finite().is_some() {
            return Err(ModelError::NonFinite {
                what: "gradient",
                context: format!("optimizer step {}", self.step + 1),
            });
        }
        let norm = grads.global_norm();
        if norm > self.clip {
            grads.scale(S::from_f64c(self.clip / norm));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let b1 = S::from_f64c(BETA1);
        let b2 = S::from_f64c(BETA2);
        let one_m_b1 = S::from_f64c(1.0 - BETA1);
        let one_m_b2 = S::from_f64c(1.0 - BETA2);
        let eps = S::from_f64c(EPS);
        let lr_adapt = S::from_f64c(self.lr * bc2.sqrt() / bc1);
        let decay = S::from_f64c(1.0 - self.lr * self.weight_decay);

        for ((theta, g), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            azip_update(theta, g, m, v, b1, one_m_b1, b2, one_m_b2, eps, lr_adapt, decay);
        }
        Ok(norm)
    }
}

/// Elementwise AdamW update:
/// `theta = theta * (1 - lr*wd) - lr * sqrt(bc2)/bc1 * m / (sqrt(v) + eps)`
/// with the usual moment updates. Folding both bias corrections into the
/// step size avoids materializing m-hat and v-hat.
#[allow(clippy::too_many_arguments)]
fn azip_update<S: Scalar>(
    theta: &mut ArrayD<S>,
    g: &ArrayD<S>,
    m: &mut ArrayD<S>,
    v: &mut ArrayD<S>,
    b1: S,
    one_m_b1: S,
    b2: S,
    one_m_b2: S,
    eps: S,
    lr_adapt: S,
    decay: S,
) {
    ndarray::Zip::from(theta)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|th, &gv, mv, vv| {
            *mv = b1 * *mv + one_m_b1 * gv;
            *vv = b2 * *vv + one_m_b2 * gv * gv;
            *th = *th * decay - lr_adapt * *mv / (vv.sqrt() + eps);
        });
}
