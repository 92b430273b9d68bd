use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};

use crate::tensor::{Grads, PRef, Params, Scalar};

use super::{flat2, unflat};

const EPS: f64 = 1e-5;

/// Layer normalization over the last dimension, with learned gain `g`
/// and bias `b` (initialized to ones and zeros).
pub struct LayerNorm {
    pub g: PRef,
    pub b: PRef,
    pub d: usize,
}

/// Backward needs the normalized activations and each row's 1/std.
pub struct NormCache<S: Scalar> {
    pub xhat: Array2<S>,
    pub inv_std: Array1<S>,
}

impl LayerNorm {
    pub fn new<S: Scalar>(params: &mut Params<S>, name: &str, d: usize) -> LayerNorm {
        let g = params.add1(format!("{name}.g"), Array1::from_elem(d, S::one()));
        let b = params.add1(format!("{name}.b"), Array1::zeros(d));
        LayerNorm { g, b, d }
    }

    pub fn forward2<S: Scalar>(
        &self,
        params: &Params<S>,
        x: ArrayView2<S>,
    ) -> (Array2<S>, NormCache<S>) {
        let n = x.dim().0;
        let d = S::from_f64c(self.d as f64);
        let eps = S::from_f64c(EPS);
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(n);
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<S>() / d;
            let s = S::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * s);
            *is = s;
        }
        let mut y = xhat.clone();
        y *= &params.v(self.g);
        y += &params.v(self.b);
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward2<S: Scalar>(
        &self,
        params: &Params<S>,
        grads: &mut Grads<S>,
        cache: &NormCache<S>,
        dy: ArrayView2<S>,
    ) -> Array2<S> {
        let d = S::from_f64c(self.d as f64);
        {
            let mut dg = grads.v_mut(self.g);
            dg += &(&dy * &cache.xhat).sum_axis(Axis(0));
            let mut db = grads.v_mut(self.b);
            db += &dy.sum_axis(Axis(0));
        }
        // dxhat = dy * g; per row:
        // dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
        let mut dxhat = dy.to_owned();
        dxhat *= &params.v(self.g);
        let mut dx = dxhat.clone();
        for ((mut dxr, dhr), (xr, &is)) in dx
            .rows_mut()
            .into_iter()
            .zip(dxhat.rows())
            .zip(cache.xhat.rows().into_iter().zip(cache.inv_std.iter()))
        {
            let m1 = dhr.sum() / d;
            let m2 = dhr.iter().zip(xr.iter()).map(|(&a, &b)| a * b).sum::<S>() / d;
            for ((dv, &hv), &xv) in dxr.iter_mut().zip(dhr.iter()).zip(xr.iter()) {
                *dv = is * (hv - m1 - xv * m2);
            }
        }
        dx
    }

    pub fn forward3<S: Scalar>(
        &self,
        params: &Params<S>,
        x: &Array3<S>,
    ) -> (Array3<S>, NormCache<S>) {
        let (t, b, _) = x.dim();
        let (y, cache) = self.forward2(params, flat2(x));
        (unflat(y, t, b), cache)
    }

    pub fn backward3<S: Scalar>(
        &self,
        params: &Params<S>,
        grads: &mut Grads<S>,
        cache: &NormCache<S>,
        dy: &Array3<S>,
    ) -> Array3<S> {
        let (t, b, _) = dy.dim();
        unflat(self.backward2(params, grads, cache, flat2(dy)), t, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn forward_normalizes_each_row() {
        let mut params: Params<f64> = Params::new();
        let ln = LayerNorm::new(&mut params, "n", 4);
        let x = arr2(&[[1.0, 2.0, 3.0, 4.0], [10.0, 10.0, 10.0, 10.0]]);
        let (y, _) = ln.forward2(&params, x.view());
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-9);
        }
        // Row 0: centered [-1.5,-0.5,0.5,1.5], var 1.25.
        let expect = -1.5 / (1.25f64 + 1e-5).sqrt();
        assert!((y[[0, 0]] - expect).abs() < 1e-9);
        // Constant row normalizes to zeros, kept finite by eps.
        assert!(y[[1, 0]].abs() < 1e-9);
    }

    #[test]
    fn backward_kills_constant_shifts() {
        // LayerNorm output ignores an additive constant on its input, so
        // each dx row sums to zero exactly, eps or not.
        let mut params: Params<f64> = Params::new();
        let ln = LayerNorm::new(&mut params, "n", 4);
        let mut grads = Grads::zeros_of(&params);
        let x = arr2(&[[0.3, -1.2, 2.0, 0.5]]);
        let (_, cache) = ln.forward2(&params, x.view());
        let dy = arr2(&[[1.0, -0.4, 0.2, 0.7]]);
        let dx = ln.backward2(&params, &mut grads, &cache, dy.view());
        assert!(dx.sum().abs() < 1e-9);
        assert_eq!(grads.v(ln.b).to_owned(), ndarray::arr1(&[1.0, -0.4, 0.2, 0.7]));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut params: Params<f64> = Params::new();
        let ln = LayerNorm::new(&mut params, "n", 3);
        params
            .raw_mut(ln.g)
            .assign(&ndarray::arr1(&[1.1, 0.8, -0.5]).into_dyn());
        params
            .raw_mut(ln.b)
            .assign(&ndarray::arr1(&[0.2, 0.0, -0.1]).into_dyn());
        let x = arr2(&[[0.3, -1.2, 2.0], [0.9, 0.9, -0.4]]);
        let r = arr2(&[[0.7, -0.2, 0.5], [1.3, 0.4, -0.8]]);

        let loss = |p: &Params<f64>, x: &Array2<f64>| -> f64 {
            let (y, _) = ln.forward2(p, x.view());
            y.iter().zip(r.iter()).map(|(&a, &b)| a * b).sum()
        };

        let mut grads = Grads::zeros_of(&params);
        let (_, cache) = ln.forward2(&params, x.view());
        let dx = ln.backward2(&params, &mut grads, &cache, r.view());

        let eps = 1e-6;
        for ti in 0..params.len() {
            for j in 0..params.tensors()[ti].len() {
                let orig = params.tensors()[ti].as_slice().unwrap()[j];
                params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig + eps;
                let up = loss(&params, &x);
                params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig - eps;
                let down = loss(&params, &x);
                params.tensors_mut()[ti].as_slice_mut().unwrap()[j] = orig;
                let fd = (up - down) / (2.0 * eps);
                let an = grads.tensors()[ti].as_slice().unwrap()[j];
                assert!(
                    (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                    "param {ti}[{j}]: fd {fd} vs analytic {an}"
                );
            }
        }
        let mut x2 = x.clone();
        for i in 0..2 {
            for j in 0..3 {
                let orig = x2[[i, j]];
                x2[[i, j]] = orig + eps;
                let up = loss(&params, &x2);
                x2[[i, j]] = orig - eps;
                let down = loss(&params, &x2);
                x2[[i, j]] = orig;
                let fd = (up - down) / (2.0 * eps);
                let an = dx[[i, j]];
                assert!(
                    (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                    "x[{i},{j}]: fd {fd} vs analytic {an}"
                );
            }
        }
    }
}
