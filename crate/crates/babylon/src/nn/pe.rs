use ndarray::{Array2, Array3};

use crate::tensor::Scalar;

/// Sinusoidal position table: `pe[pos, 2i] = sin(pos / 10000^(2i/d))`,
/// `pe[pos, 2i+1] = cos` of the same angle. Computed in f64 so f32 and
/// f64 models agree to rounding.
pub fn sinusoidal_table<S: Scalar>(max_len: usize, d: usize) -> Array2<S> {
    Array2::from_shape_fn((max_len, d), |(pos, j)| {
        let i = (j / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
        S::from_f64c(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Adds `table[t]` to every batch column of `x[t]`. Position is the row
/// index of whatever sequence this is applied to, so applying it after
/// pooling indexes the pooled sequence, not the original timeline.
/// Additive, so gradients pass through untouched.
pub fn add_positional<S: Scalar>(x: &mut Array3<S>, table: &Array2<S>) {
    let (t, _, d) = x.dim();
    assert!(t <= table.dim().0, "sequence longer than position table");
    assert_eq!(d, table.dim().1);
    for (ti, mut step) in x.outer_iter_mut().enumerate() {
        let row = table.row(ti);
        for mut col in step.rows_mut() {
            col += &row;
        }
    }
}
