use ndarray::Array3;
use rand::Rng;

use crate::tensor::Scalar;

use super::Ctx;

/// Inverted dropout: kept activations are scaled by 1/(1-p) at train
/// time so eval needs no rescaling. Eval mode and p = 0 are identity and
/// cache no mask.
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Dropout {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        Dropout { p }
    }

    /// Mutates `x` in place; returns the keep mask (already scaled) when
    /// one was applied.
    pub fn forward<S: Scalar>(&self, ctx: &mut Ctx, x: &mut Array3<S>) -> Option<Array3<S>> {
        if !ctx.train || self.p == 0.0 {
            return None;
        }
        let scale = S::from_f64c(1.0 / (1.0 - self.p));
        let mask = Array3::from_shape_simple_fn(x.dim(), || {
            if ctx.rng.gen_range(0.0..1.0) < self.p {
                S::zero()
            } else {
                scale
            }
        });
        *x *= &mask;
        Some(mask)
    }

    pub fn backward<S: Scalar>(&self, mask: &Option<Array3<S>>, dy: &mut Array3<S>) {
        if let Some(mask) = mask {
            *dy *= mask;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_mode_is_identity() {
        let d = Dropout::new(0.5);
        let mut ctx = Ctx::eval();
        let mut x = Array3::<f32>::from_elem((2, 2, 2), 1.0);
        let mask = d.forward(&mut ctx, &mut x);
        assert!(mask.is_none());
        assert!(x.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn train_mode_zeroes_and_rescales() {
        let d = Dropout::new(0.5);
        let mut ctx = Ctx::train(9);
        let mut x = Array3::<f32>::from_elem((4, 8, 16), 1.0);
        let mask = d.forward(&mut ctx, &mut x).unwrap();
        let zeros = x.iter().filter(|&&v| v == 0.0).count();
        let kept = x.iter().filter(|&&v| (v - 2.0).abs() < 1e-6).count();
        assert_eq!(zeros + kept, x.len(), "values are only 0 or 1/(1-p)");
        assert!(zeros > 100 && zeros < 400, "roughly half dropped: {zeros}");
        // Backward applies the same mask.
        let mut dy = Array3::<f32>::from_elem((4, 8, 16), 1.0);
        d.backward(&Some(mask), &mut dy);
        assert_eq!(dy, x);
    }

    #[test]
    fn same_seed_gives_same_mask() {
        let d = Dropout::new(0.3);
        let mut a = Array3::<f32>::from_elem((3, 3, 3), 1.0);
        let mut b = a.clone();
        d.forward(&mut Ctx::train(42), &mut a);
        d.forward(&mut Ctx::train(42), &mut b);
        assert_eq!(a, b);
    }
}
