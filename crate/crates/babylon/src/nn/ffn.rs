use ndarray::Array3;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Grads, Params, Scalar};

use super::{flat2, unflat, Linear};

/// Position-wise feed-forward block: `linear -> relu -> linear`.
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

/// Post-relu hidden activations; `h > 0` doubles as the relu mask.
pub struct FfnCache<S: Scalar> {
    pub x: Array3<S>,
    pub h: ndarray::Array2<S>,
}

impl FeedForward {
    pub fn new<S: Scalar>(
        params: &mut Params<S>,
        name: &str,
        d_model: usize,
        d_ffn: usize,
        rng: &mut ChaCha8Rng,
    ) -> FeedForward {
        FeedForward {
            w1: Linear::new(params, &format!("{name}.w1"), d_model, d_ffn, rng),
            w2: Linear::new(params, &format!("{name}.w2"), d_ffn, d_model, rng),
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        params: &Params<S>,
        x: &Array3<S>,
    ) -> (Array3<S>, FfnCache<S>) {
        let (t, b, _) = x.dim();
        let mut h = self.w1.forward2(params, flat2(x));
        h.mapv_inplace(|v| if v > S::zero() { v } else { S::zero() });
        let y = self.w2.forward2(params, h.view());
        (
            unflat(y, t, b),
            FfnCache { x: x.clone(), h },
        )
    }

    pub fn backward<S: Scalar>(
        &self,
        params: &Params<S>,
        grads: &mut Grads<S>,
        cache: &FfnCache<S>,
        dy: &Array3<S>,
    ) -> Array3<S> {
        let (t, b, _) = dy.dim();
        let mut dh = self.w2.backward2(params, grads, cache.h.view(), flat2(dy));
        dh.zip_mut_with(&cache.h, |d, &h| {
            if h <= S::zero() {
                *d = S::zero();
            }
        });
        let dx = self
            .w1
            .backward2(params, grads, flat2(&cache.x), dh.view());
        unflat(dx, t, b)
    }
}
