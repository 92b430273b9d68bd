use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{uniform_init, xavier_init, Grads, PRef, Params, Scalar};

use super::{flat2, unflat};

/// Affine map `y = x W^T + b` with `W: [d_out, d_in]`, `b: [d_out]`.
///
/// Storing the weight row-major per output unit makes the forward pass a
/// single GEMM against the transposed view and keeps the gradient GEMMs
/// free of copies.
pub struct Linear {
    pub w: PRef,
    pub b: PRef,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        params: &mut Params<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Linear {
        let w = params.add(format!("{name}.w"), xavier_init(d_out, d_in, rng));
        let b = params.add1(format!("{name}.b"), Array1::zeros(d_out));
        Linear { w, b, d_in, d_out }
    }

    /// Output head variant: weights drawn from a small fixed range so the
    /// initial logits sit near zero and the first loss lands at ln(V).
    pub fn new_small<S: Scalar>(
        params: &mut Params<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        limit: f64,
        rng: &mut ChaCha8Rng,
    ) -> Linear {
        let w = params.add(format!("{name}.w"), uniform_init(&[d_out, d_in], limit, rng));
        let b = params.add1(format!("{name}.b"), Array1::zeros(d_out));
        Linear { w, b, d_in, d_out }
    }

    pub fn forward2<S: Scalar>(&self, params: &Params<S>, x: ArrayView2<S>) -> Array2<S> {
        let mut y = x.dot(&params.m(self.w).t());
        y += &params.v(self.b);
        y
    }

    /// Backward over a 2-D batch. `x` is the forward input; returns `dx`.
    pub fn backward2<S: Scalar>(
        &self,
        params: &Params<S>,
        grads: &mut Grads<S>,
        x: ArrayView2<S>,
        dy: ArrayView2<S>,
    ) -> Array2<S> {
        let dx = dy.dot(&params.m(self.w));
        let mut dw = grads.m_mut(self.w);
        dw += &dy.t().dot(&x);
        let mut db = grads.v_mut(self.b);
        db += &dy.sum_axis(Axis(0));
        dx
    }

    pub fn forward3<S: Scalar>(&self, params: &Params<S>, x: &Array3<S>) -> Array3<S> {
        let (t, b, _) = x.dim();
        unflat(self.forward2(params, flat2(x)), t, b)
    }

    pub fn backward3<S: Scalar>(
        &self,
        params: &Params<S>,
        grads: &mut Grads<S>,
        x: &Array3<S>,
        dy: &Array3<S>,
    ) -> Array3<S> {
        let (t, b, _) = x.dim();
        unflat(self.backward2(params, grads, flat2(x), flat2(dy)), t, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};
    use rand::SeedableRng;

    fn fixture() -> (Params<f64>, Linear) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = Params::new();
        let lin = Linear::new(&mut params, "t", 3, 2, &mut rng);
        // Overwrite with known values for analytic checks.
        params
            .raw_mut(lin.w)
            .assign(&arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).into_dyn());
        params.raw_mut(lin.b).assign(&arr1(&[0.5, -0.5]).into_dyn());
        (params, lin)
    }

    #[test]
    fn forward_matches_hand_computation() {
        let (params, lin) = fixture();
        let x = arr2(&[[1.0, 0.0, -1.0]]);
        let y = lin.forward2(&params, x.view());
        // [1*1 + 0*2 + (-1)*3 + 0.5, 1*4 + 0*5 + (-1)*6 - 0.5]
        assert_eq!(y, arr2(&[[-1.5, -2.5]]));
    }

    #[test]
    fn backward_matches_hand_computation() {
        let (params, lin) = fixture();
        let mut grads = Grads::zeros_of(&params);
        let x = arr2(&[[1.0, 0.0, -1.0], [2.0, 1.0, 0.0]]);
        let dy = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let dx = lin.backward2(&params, &mut grads, x.view(), dy.view());
        // Each dy row selects one weight row.
        assert_eq!(dx, arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]));
        // dw = dy^T x: row 0 is x row 0, row 1 is x row 1.
        assert_eq!(
            grads.m(lin.w).to_owned(),
            arr2(&[[1.0, 0.0, -1.0], [2.0, 1.0, 0.0]])
        );
        assert_eq!(grads.v(lin.b).to_owned(), arr1(&[1.0, 1.0]));
    }

    #[test]
    fn three_dim_wrappers_match_flat_path() {
        let (params, lin) = fixture();
        let x = Array3::from_shape_fn((2, 2, 3), |(t, b, d)| (t + b + d) as f64 * 0.1);
        let y = lin.forward3(&params, &x);
        assert_eq!(y.dim(), (2, 2, 2));
        let flat = lin.forward2(&params, flat2(&x));
        assert_eq!(y[[1, 1, 0]], flat[[3, 0]]);
    }
}
