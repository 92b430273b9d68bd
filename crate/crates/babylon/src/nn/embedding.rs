use ndarray::{Array2, Array3};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{uniform_init, Grads, PRef, Params, Scalar};

/// Token embedding table `[vocab, d]` over time-major id grids `[T, B]`.
///
/// With `scale` set the lookup is multiplied by sqrt(d); together with the
/// U(+-sqrt(3/d)) init this gives unit per-dimension variance, the scale
/// convention transformer sublayers expect.
pub struct Embedding {
    pub table: PRef,
    pub vocab: usize,
    pub d: usize,
    pub scale: bool,
}

impl Embedding {
    pub fn new<S: Scalar>(
        params: &mut Params<S>,
        name: &str,
        vocab: usize,
        d: usize,
        scale: bool,
        rng: &mut ChaCha8Rng,
    ) -> Embedding {
        let limit = (3.0 / d as f64).sqrt();
        let table = params.add(format!("{name}.table"), uniform_init(&[vocab, d], limit, rng));
        Embedding {
            table,
            vocab,
            d,
            scale,
        }
    }

    fn factor<S: Scalar>(&self) -> S {
        if self.scale {
            S::from_f64c((self.d as f64).sqrt())
        } else {
            S::one()
        }
    }

    pub fn forward<S: Scalar>(&self, params: &Params<S>, ids: &Array2<u32>) -> Array3<S> {
        let (t, b) = ids.dim();
        let table = params.m(self.table);
        let s = self.factor::<S>();
        let mut out = Array3::zeros((t, b, self.d));
        for ((ti, bi), &id) in ids.indexed_iter() {
            let row = table.row(id as usize);
            let mut dst = out.slice_mut(ndarray::s![ti, bi, ..]);
            dst.assign(&row);
            dst.mapv_inplace(|x| x * s);
        }
        out
    }

    /// Scatter-add of `dy` into the table rows named by `ids`.
    pub fn backward<S: Scalar>(
        &self,
        grads: &mut Grads<S>,
        ids: &Array2<u32>,
        dy: &Array3<S>,
    ) {
        let s = self.factor::<S>();
        let mut dtable = grads.m_mut(self.table);
        for ((ti, bi), &id) in ids.indexed_iter() {
            let src = dy.slice(ndarray::s![ti, bi, ..]);
            let mut row = dtable.row_mut(id as usize);
            row.zip_mut_with(&src, |a, &g| *a += g * s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;

    fn fixture(scale: bool) -> (Params<f64>, Embedding) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = Params::new();
        let emb = Embedding::new(&mut params, "e", 3, 4, scale, &mut rng);
        params.raw_mut(emb.table).assign(
            &arr2(&[
                [0.0, 0.0, 0.0, 0.0],
                [1.0, 2.0, 3.0, 4.0],
                [-1.0, -1.0, -1.0, -1.0],
            ])
            .into_dyn(),
        );
        (params, emb)
    }

    #[test]
    fn forward_gathers_rows() {
        let (params, emb) = fixture(false);
        let ids = arr2(&[[1u32, 2], [0, 1]]);
        let out = emb.forward(&params, &ids);
        assert_eq!(out[[0, 0, 1]], 2.0);
        assert_eq!(out[[0, 1, 0]], -1.0);
        assert_eq!(out[[1, 0, 3]], 0.0);
        assert_eq!(out[[1, 1, 3]], 4.0);
    }

    #[test]
    fn scale_multiplies_by_sqrt_d() {
        let (params, emb) = fixture(true);
        let ids = arr2(&[[1u32]]);
        let out = emb.forward(&params, &ids);
        assert!((out[[0, 0, 0]] - 2.0).abs() < 1e-12, "1 * sqrt(4)");
    }

    #[test]
    fn backward_accumulates_repeated_ids() {
        let (params, emb) = fixture(false);
        let mut grads = Grads::zeros_of(&params);
        let ids = arr2(&[[1u32, 1]]);
        let dy = Array3::from_elem((1, 2, 4), 0.5);
        emb.backward(&mut grads, &ids, &dy);
        // Both batch entries hit row 1.
        assert_eq!(grads.m(emb.table)[[1, 0]], 1.0);
        assert_eq!(grads.m(emb.table)[[0, 0]], 0.0);
        assert_eq!(grads.m(emb.table)[[2, 0]], 0.0);
    }
}
