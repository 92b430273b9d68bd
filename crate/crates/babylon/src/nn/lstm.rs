use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{xavier_init, Grads, PRef, Params, Scalar};

use super::flat2;

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

/// Single LSTM layer. Gate order inside the fused `[4H]` dimension is
/// `i, f, g, o`; one bias vector serves both projections and its forget
/// slice starts at 1 so early training does not flush the cell state.
pub struct Lstm {
    pub w_ih: PRef,
    pub w_hh: PRef,
    pub b: PRef,
    pub d_in: usize,
    pub d_h: usize,
}

/// Post-activation gates and cell states for every step.
pub struct LstmCache<S: Scalar> {
    pub gates: Array3<S>,
    pub c: Array3<S>,
}

impl Lstm {
    pub fn new<S: Scalar>(
        params: &mut Params<S>,
        name: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut ChaCha8Rng,
    ) -> Lstm {
        let w_ih = params.add(format!("{name}.w_ih"), xavier_init(4 * d_h, d_in, rng));
        let w_hh = params.add(format!("{name}.w_hh"), xavier_init(4 * d_h, d_h, rng));
        let mut bias = Array1::zeros(4 * d_h);
        bias.slice_mut(s![d_h..2 * d_h]).fill(S::one());
        let b = params.add1(format!("{name}.b"), bias);
        Lstm {
            w_ih,
            w_hh,
            b,
            d_in,
            d_h,
        }
    }

    /// Activates fused pre-activation gates in place and returns the new
    /// (h, c) rows. `a` is `[B, 4H]`.
    fn activate<S: Scalar>(
        &self,
        a: &mut ndarray::ArrayViewMut2<S>,
        c_prev: &Array2<S>,
    ) -> (Array2<S>, Array2<S>) {
        let h = self.d_h;
        for mut row in a.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if (2 * h..3 * h).contains(&j) {
                    v.tanh()
                } else {
                    sigmoid(*v)
                };
            }
        }
        let i = a.slice(s![.., 0..h]);
        let f = a.slice(s![.., h..2 * h]);
        let g = a.slice(s![.., 2 * h..3 * h]);
        let o = a.slice(s![.., 3 * h..4 * h]);
        let mut c = &f * c_prev;
        c += &(&i * &g);
        let mut hh = c.mapv(|x| x.tanh());
        hh *= &o;
        (hh, c)
    }

    /// Full-sequence forward over time-major `[T, B, D]`. The input
    /// projection runs as one GEMM for the whole sequence.
    pub fn forward<S: Scalar>(
        &self,
        params: &Params<S>,
        x: &Array3<S>,
        h0c0: Option<(&Array2<S>, &Array2<S>)>,
    ) -> (Array3<S>, LstmCache<S>) {
        let (t_len, b_sz, _) = x.dim();
        let w_hh = params.m(self.w_hh);
        let bias = params.v(self.b);

        let xw = flat2(x).dot(&params.m(self.w_ih).t());
        let mut gates = super::unflat(xw, t_len, b_sz);
        let mut c_seq = Array3::zeros((t_len, b_sz, self.d_h));
        let mut h_seq = Array3::zeros((t_len, b_sz, self.d_h));
        let (mut h_prev, mut c_prev) = match h0c0 {
            Some((h0, c0)) => (h0.clone(), c0.clone()),
            None => (
                Array2::zeros((b_sz, self.d_h)),
                Array2::zeros((b_sz, self.d_h)),
            ),
        };
        for t in 0..t_len {
            let hw = h_prev.dot(&w_hh.t());
            let mut a = gates.slice_mut(s![t, .., ..]);
            a += &hw;
            a += &bias;
            let (h, c) = self.activate(&mut a, &c_prev);
            h_seq.slice_mut(s![t, .., ..]).assign(&h);
            c_seq.slice_mut(s![t, .., ..]).assign(&c);
            h_prev = h;
            c_prev = c;
        }
        (h_seq, LstmCache { gates, c: c_seq })
    }

    /// One decode step: returns `(h, c, post-activation gates)`.
    pub fn step<S: Scalar>(
        &self,
        params: &Params<S>,
        x_t: ArrayView2<S>,
        h_prev: &Array2<S>,
        c_prev: &Array2<S>,
    ) -> (Array2<S>, Array2<S>, Array2<S>) {
        let mut a = x_t.dot(&params.m(self.w_ih).t());
        a += &h_prev.dot(&params.m(self.w_hh).t());
        a += &params.v(self.b);
        let (h, c) = self.activate(&mut a.view_mut(), c_prev);
        (h, c, a)
    }

    /// Backward for one step; mirrors [`Lstm::step`]. `dh` and `dc_in`
    /// are the gradients on this step's `h` and `c`.
    #[allow(clippy::too_many_arguments)]
    pub fn step_backward<S: Scalar>(
        &self,
        params: &Params<S>,
        grads: &mut Grads<S>,
        x_t: ArrayView2<S>,
        h_prev: &Array2<S>,
        c_prev: &Array2<S>,
        gates: &Array2<S>,
        c_new: &Array2<S>,
        dh: &Array2<S>,
        dc_in: &Array2<S>,
    ) -> (Array2<S>, Array2<S>, Array2<S>) {
        let (da, dc_prev) = self.gate_grads(gates, c_new, c_prev, dh, dc_in);
        {
            let mut dw_ih = grads.m_mut(self.w_ih);
            dw_ih += &da.t().dot(&x_t);
        }
        {
            let mut dw_hh = grads.m_mut(self.w_hh);
            dw_hh += &da.t().dot(h_prev);
        }
        {
            let mut db = grads.v_mut(self.b);
            db += &da.sum_axis(Axis(0));
        }
        let dx = da.dot(&params.m(self.w_ih));
        let dh_prev = da.dot(&params.m(self.w_hh));
        (dx, dh_prev, dc_prev)
    }

    /// Shared cell backward: from (dh, dc_in) to fused pre-activation
    /// gradients `da` and `dc_prev`.
    fn gate_grads<S: Scalar>(
        &self,
        gates: &Array2<S>,
        c_new: &Array2<S>,
        c_prev: &Array2<S>,
        dh: &Array2<S>,
        dc_in: &Array2<S>,
    ) -> (Array2<S>, Array2<S>) {
        let h = self.d_h;
        let i = gates.slice(s![.., 0..h]);
        let f = gates.slice(s![.., h..2 * h]);
        let g = gates.slice(s![.., 2 * h..3 * h]);
        let o = gates.slice(s![.., 3 * h..4 * h]);
        let tc = c_new.mapv(|x| x.tanh());

        let mut dc = dh * &o;
        dc.zip_mut_with(&tc, |d, &t| *d *= S::one() - t * t);
        dc += dc_in;

        let mut da = Array2::zeros((dh.dim().0, 4 * h));
        {
            let mut dai = da.slice_mut(s![.., 0..h]);
            dai.assign(&(&dc * &g));
            dai.zip_mut_with(&i, |d, &v| *d *= v * (S::one() - v));
        }
        {
            let mut daf = da.slice_mut(s![.., h..2 * h]);
            daf.assign(&(&dc * c_prev));
            daf.zip_mut_with(&f, |d, &v| *d *= v * (S::one() - v));
        }
        {
            let mut dag = da.slice_mut(s![.., 2 * h..3 * h]);
            dag.assign(&(&dc * &i));
            dag.zip_mut_with(&g, |d, &v| *d *= S::one() - v * v);
        }
        {
            let mut dao = da.slice_mut(s![.., 3 * h..4 * h]);
            dao.assign(&(dh * &tc));
            dao.zip_mut_with(&o, |d, &v| *d *= v * (S::one() - v));
        }
        let dc_prev = &dc * &f;
        (da, dc_prev)
    }

    /// Full-sequence backward. `extra_h` injects an additional `h`
    /// gradient at step `lens[b] - 1` of each column, which is how a
    /// consumer of per-sequence final states feeds its gradient back
    /// into padded batches. Returns `(dx, dh0, dc0)`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<S: Scalar>(
        &self,
        params: &Params<S>,
        grads: &mut Grads<S>,
        x: &Array3<S>,
        h_seq: &Array3<S>,
        cache: &LstmCache<S>,
        h0c0: Option<(&Array2<S>, &Array2<S>)>,
        dy: &Array3<S>,
        extra_h: Option<(&Array2<S>, &[usize])>,
    ) -> (Array3<S>, Array2<S>, Array2<S>) {
        let (t_len, b_sz, _) = x.dim();
        let zeros = Array2::zeros((b_sz, self.d_h));
        let (h0, c0) = match h0c0 {
            Some((h0, c0)) => (h0.clone(), c0.clone()),
            None => (zeros.clone(), zeros.clone()),
        };

        let mut da_all: Array3<S> = Array3::zeros((t_len, b_sz, 4 * self.d_h));
        let mut dh_next = Array2::zeros((b_sz, self.d_h));
        let mut dc_next = Array2::zeros((b_sz, self.d_h));
        let w_hh = params.m(self.w_hh);
        for t in (0..t_len).rev() {
            let mut dh = dy.slice(s![t, .., ..]).to_owned();
            dh += &dh_next;
            if let Some((extra, lens)) = extra_h {
                for (b, &len) in lens.iter().enumerate() {
                    if len == t + 1 {
                        let mut row = dh.row_mut(b);
                        row += &extra.row(b);
                    }
                }
            }
            let gates = cache.gates.slice(s![t, .., ..]).to_owned();
            let c_new = cache.c.slice(s![t, .., ..]).to_owned();
            let c_prev = if t == 0 {
                c0.clone()
            } else {
                cache.c.slice(s![t - 1, .., ..]).to_owned()
            };
            let (da, dc_prev) = self.gate_grads(&gates, &c_new, &c_prev, &dh, &dc_next);
            dh_next = da.dot(&w_hh);
            dc_next = dc_prev;
            da_all.slice_mut(s![t, .., ..]).assign(&da);
        }

        // Sequence-wide GEMMs for the parameter and input gradients.
        let da_flat = flat2(&da_all);
        {
            let mut dw_ih = grads.m_mut(self.w_ih);
            dw_ih += &da_flat.t().dot(&flat2(x));
        }
        {
            // h_prev sequence: h0 then h_seq[..T-1].
            let mut h_prev_seq = Array3::zeros((t_len, b_sz, self.d_h));
            h_prev_seq.slice_mut(s![0, .., ..]).assign(&h0);
            if t_len > 1 {
                h_prev_seq
                    .slice_mut(s![1.., .., ..])
                    .assign(&h_seq.slice(s![..t_len - 1, .., ..]));
            }
            let mut dw_hh = grads.m_mut(self.w_hh);
            dw_hh += &da_flat.t().dot(&flat2(&h_prev_seq));
        }
        {
            let mut db = grads.v_mut(self.b);
            db += &da_flat.sum_axis(Axis(0));
        }
        let dx = super::unflat(da_flat.dot(&params.m(self.w_ih)), t_len, b_sz);
        (dx, dh_next, dc_next)
    }
}

/// Reverses the first `lens[b]` steps of each batch column, leaving the
/// padded tail in place. Applying it twice restores the input, which is
/// what makes the backward-direction gradient path a mirror image.
pub fn reverse_padded<S: Scalar>(x: &Array3<S>, lens: &[usize]) -> Array3<S> {
    let (t_len, b_sz, _) = x.dim();
    assert_eq!(lens.len(), b_sz);
    let mut out = x.clone();
    for (b, &len) in lens.iter().enumerate() {
        assert!(len <= t_len, "length exceeds padded time dimension");
        for t in 0..len {
            out.slice_mut(s![t, b, ..])
                .assign(&x.slice(s![len - 1 - t, b, ..]));
        }
    }
    out
}

/// Gathers each column's final valid hidden state.
pub fn last_h<S: Scalar>(h_seq: &Array3<S>, lens: &[usize]) -> Array2<S> {
    let (_, b_sz, d) = h_seq.dim();
    let mut out = Array2::zeros((b_sz, d));
    for (b, &len) in lens.iter().enumerate() {
        assert!(len >= 1);
        out.row_mut(b).assign(&h_seq.slice(s![len - 1, b, ..]));
    }
    out
}

/// Bidirectional wrapper: forward and reversed passes concatenated on
/// the feature axis as `[T, B, 2H]`.
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

pub struct BiLstmCache<S: Scalar> {
    pub f_cache: LstmCache<S>,
    pub b_cache: LstmCache<S>,
    pub h_f: Array3<S>,
    pub h_b: Array3<S>,
    pub x_rev: Array3<S>,
}

impl BiLstm {
    pub fn new<S: Scalar>(
        params: &mut Params<S>,
        name: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut ChaCha8Rng,
    ) -> BiLstm {
        BiLstm {
            fwd: Lstm::new(params, &format!("{name}.fwd"), d_in, d_h, rng),
            bwd: Lstm::new(params, &format!("{name}.bwd"), d_in, d_h, rng),
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        params: &Params<S>,
        x: &Array3<S>,
        lens: &[usize],
    ) -> (Array3<S>, BiLstmCache<S>) {
        let (t_len, b_sz, _) = x.dim();
        let d_h = self.fwd.d_h;
        let (h_f, f_cache) = self.fwd.forward(params, x, None);
        let x_rev = reverse_padded(x, lens);
        let (h_b, b_cache) = self.bwd.forward(params, &x_rev, None);
        let h_b_out = reverse_padded(&h_b, lens);

        let mut out = Array3::zeros((t_len, b_sz, 2 * d_h));
        out.slice_mut(s![.., .., 0..d_h]).assign(&h_f);
        out.slice_mut(s![.., .., d_h..]).assign(&h_b_out);
        (
            out,
            BiLstmCache {
                f_cache,
                b_cache,
                h_f,
                h_b,
                x_rev,
            },
        )
    }

    pub fn backward<S: Scalar>(
        &self,
        params: &Params<S>,
        grads: &mut Grads<S>,
        x: &Array3<S>,
        cache: &BiLstmCache<S>,
        dy: &Array3<S>,
        lens: &[usize],
    ) -> Array3<S> {
        let d_h = self.fwd.d_h;
        let dy_f = dy.slice(s![.., .., 0..d_h]).to_owned();
        let dy_b = dy.slice(s![.., .., d_h..]).to_owned();

        let (mut dx, _, _) = self.fwd.backward(
            params,
            grads,
            x,
            &cache.h_f,
            &cache.f_cache,
            None,
            &dy_f,
            None,
        );
        let dy_b_rev = reverse_padded(&dy_b, lens);
        let (dx_b_rev, _, _) = self.bwd.backward(
            params,
            grads,
            &cache.x_rev,
            &cache.h_b,
            &cache.b_cache,
            None,
            &dy_b_rev,
            None,
        );
        dx += &reverse_padded(&dx_b_rev, lens);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_x(t: usize, b: usize, d: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_simple_fn((t, b, d), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params: Params<f64> = Params::new();
        let lstm = Lstm::new(&mut params, "l", 3, 4, &mut rng);
        let b = params.v(lstm.b);
        assert!(b.slice(s![4..8]).iter().all(|&v| v == 1.0));
        assert!(b.slice(s![0..4]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_loop_matches_sequence_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params: Params<f64> = Params::new();
        let lstm = Lstm::new(&mut params, "l", 3, 5, &mut rng);
        let x = random_x(4, 2, 3, 3);
        let (h_seq, cache) = lstm.forward(&params, &x, None);

        let mut h = Array2::zeros((2, 5));
        let mut c = Array2::zeros((2, 5));
        for t in 0..4 {
            let (h2, c2, gates) = lstm.step(&params, x.slice(s![t, .., ..]), &h, &c);
            h = h2;
            c = c2;
            for bi in 0..2 {
                for d in 0..5 {
                    assert!((h[[bi, d]] - h_seq[[t, bi, d]]).abs() < 1e-12);
                    assert!((c[[bi, d]] - cache.c[[t, bi, d]]).abs() < 1e-12);
                }
            }
            for (a, b) in gates.iter().zip(cache.gates.slice(s![t, .., ..]).iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sequence_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params: Params<f64> = Params::new();
        let lstm = Lstm::new(&mut params, "l", 3, 4, &mut rng);
        let x = random_x(3, 2, 3, 5);
        let r = random_x(3, 2, 4, 6);
        let extra = Array2::from_shape_fn((2, 4), |(b, d)| 0.1 * (b + d) as f64);
        let lens = [2usize, 3];

        let loss = |p: &Params<f64>, x: &Array3<f64>| -> f64 {
            let (h, _) = lstm.forward(p, x, None);
            let mut l: f64 = h.iter().zip(r.iter()).map(|(&a, &b)| a * b).sum();
            let hl = last_h(&h, &lens);
            l += hl.iter().zip(extra.iter()).map(|(&a, &b)| a * b).sum::<f64>();
            l
        };

        let mut grads = Grads::zeros_of(&params);
        let (h_seq, cache) = lstm.forward(&params, &x, None);
        let (dx, _, _) = lstm.backward(
            &params,
            &mut grads,
            &x,
            &h_seq,
            &cache,
            None,
            &r,
            Some((&extra, &lens)),
        );

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
        for t in 0..3 {
            for bi in 0..2 {
                for d in 0..3 {
                    let orig = x2[[t, bi, d]];
                    x2[[t, bi, d]] = orig + eps;
                    let up = loss(&params, &x2);
                    x2[[t, bi, d]] = orig - eps;
                    let down = loss(&params, &x2);
                    x2[[t, bi, d]] = orig;
                    let fd = (up - down) / (2.0 * eps);
                    let an = dx[[t, bi, d]];
                    assert!(
                        (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                        "x[{t},{bi},{d}]: fd {fd} vs analytic {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn reverse_padded_is_an_involution_and_keeps_pads() {
        let x = random_x(5, 2, 3, 7);
        let lens = [3usize, 5];
        let r = reverse_padded(&x, &lens);
        // Column 0: first three steps reversed, pads untouched.
        assert_eq!(r.slice(s![0, 0, ..]), x.slice(s![2, 0, ..]));
        assert_eq!(r.slice(s![2, 0, ..]), x.slice(s![0, 0, ..]));
        assert_eq!(r.slice(s![3, 0, ..]), x.slice(s![3, 0, ..]));
        assert_eq!(r.slice(s![4, 0, ..]), x.slice(s![4, 0, ..]));
        assert_eq!(r.slice(s![0, 1, ..]), x.slice(s![4, 1, ..]));
        let rr = reverse_padded(&r, &lens);
        assert_eq!(rr, x);
    }

    #[test]
    fn bilstm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params: Params<f64> = Params::new();
        let bi = BiLstm::new(&mut params, "bi", 2, 3, &mut rng);
        let x = random_x(4, 2, 2, 9);
        let lens = [3usize, 4];
        // Mask upstream gradient at pads, as real consumers do.
        let mut r = random_x(4, 2, 6, 10);
        r.slice_mut(s![3.., 0, ..]).fill(0.0);

        let loss = |p: &Params<f64>, x: &Array3<f64>| -> f64 {
            let (h, _) = bi.forward(p, x, &lens);
            h.iter().zip(r.iter()).map(|(&a, &b)| a * b).sum()
        };

        let mut grads = Grads::zeros_of(&params);
        let (h, cache) = bi.forward(&params, &x, &lens);
        assert_eq!(h.dim(), (4, 2, 6));
        let dx = bi.backward(&params, &mut grads, &x, &cache, &r, &lens);

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
        // Pad steps of the short column got zero input gradient.
        assert!(dx.slice(s![3, 0, ..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_consumers_leave_pad_gradients_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params: Params<f64> = Params::new();
        let lstm = Lstm::new(&mut params, "l", 2, 3, &mut rng);
        let x = random_x(5, 2, 2, 12);
        let lens = [2usize, 5];
        let (h_seq, cache) = lstm.forward(&params, &x, None);
        let mut dy = random_x(5, 2, 3, 13);
        for t in lens[0]..5 {
            dy.slice_mut(s![t, 0, ..]).fill(0.0);
        }
        let mut grads = Grads::zeros_of(&params);
        let (dx, _, _) =
            lstm.backward(&params, &mut grads, &x, &h_seq, &cache, None, &dy, None);
        for t in lens[0]..5 {
            assert!(
                dx.slice(s![t, 0, ..]).iter().all(|&v| v == 0.0),
                "pad step {t} leaked gradient"
            );
        }
        assert!(dx.slice(s![1, 0, ..]).iter().any(|&v| v != 0.0));
    }
}
