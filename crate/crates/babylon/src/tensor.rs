//! Minimal tensor substrate: a flat, named parameter store.
//!
//! Layers own integer handles ([`PRef`]) into one [`Params`] store instead
//! of owning arrays. Everything that must walk all parameters (gradient
//! accumulation, optimizer steps, clipping, checkpoints, finite-difference
//! checks) then works on a flat `Vec<ArrayD>` without knowing any layer's
//! shape, and insertion order gives a stable on-disk tensor order for
//! free.
//!
//! Generic over [`Scalar`] (`f32` for real runs, `f64` for gradient
//! checking).

use std::collections::HashMap;

use ndarray::{
    Array1, Array2, ArrayD, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2,
};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;

/// Element type for all tensors in the substrate.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ndarray::ScalarOperand
    + ndarray::LinalgScalar
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }

    fn to_f64c(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64c(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64c(self) -> f64 {
        self
    }
}

/// Handle to one named tensor in a [`Params`] store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PRef(usize);

/// Flat named parameter store. Names are unique; order is insertion
/// order and is the canonical serialization order.
#[derive(Debug, Clone)]
pub struct Params<S: Scalar> {
    names: Vec<String>,
    tensors: Vec<ArrayD<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> Params<S> {
    pub fn new() -> Params<S> {
        Params {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: ArrayD<S>) -> PRef {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let r = PRef(self.tensors.len());
        self.index.insert(name.clone(), r.0);
        self.names.push(name);
        self.tensors.push(tensor);
        r
    }

    pub fn add2(&mut self, name: impl Into<String>, tensor: Array2<S>) -> PRef {
        self.add(name, tensor.into_dyn())
    }

    pub fn add1(&mut self, name: impl Into<String>, tensor: Array1<S>) -> PRef {
        self.add(name, tensor.into_dyn())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total element count across all tensors.
    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn name(&self, r: PRef) -> &str {
        &self.names[r.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn by_name(&self, name: &str) -> Option<PRef> {
        self.index.get(name).copied().map(PRef)
    }

    pub fn raw(&self, r: PRef) -> &ArrayD<S> {
        &self.tensors[r.0]
    }

    pub fn raw_mut(&mut self, r: PRef) -> &mut ArrayD<S> {
        &mut self.tensors[r.0]
    }

    pub fn m(&self, r: PRef) -> ArrayView2<'_, S> {
        self.tensors[r.0]
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matrix-shaped parameter")
    }

    pub fn v(&self, r: PRef) -> ArrayView1<'_, S> {
        self.tensors[r.0]
            .view()
            .into_dimensionality::<Ix1>()
            .expect("vector-shaped parameter")
    }

    pub fn tensors(&self) -> &[ArrayD<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ArrayD<S>] {
        &mut self.tensors
    }

    /// Element-count subtotal for every name prefix ending at `.`; used
    /// for parameter breakdowns.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.names
            .iter()
            .zip(&self.tensors)
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Casts every tensor elementwise; names and order are preserved.
    pub fn cast<T: Scalar>(&self) -> Params<T> {
        Params {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| t.mapv(|x| T::from_f64c(x.to_f64c())))
                .collect(),
            index: self.index.clone(),
        }
    }
}

impl<S: Scalar> Default for Params<S> {
    fn default() -> Self {
        Params::new()
    }
}

/// Gradients mirroring a [`Params`] store, tensor for tensor.
#[derive(Debug, Clone)]
pub struct Grads<S: Scalar> {
    tensors: Vec<ArrayD<S>>,
}

impl<S: Scalar> Grads<S> {
    pub fn zeros_of(params: &Params<S>) -> Grads<S> {
        Grads {
            tensors: params
                .tensors
                .iter()
                .map(|t| ArrayD::zeros(t.raw_dim()))
                .collect(),
        }
    }

    pub fn raw(&self, r: PRef) -> &ArrayD<S> {
        &self.tensors[r.0]
    }

    pub fn m(&self, r: PRef) -> ArrayView2<'_, S> {
        self.tensors[r.0]
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matrix-shaped gradient")
    }

    pub fn v(&self, r: PRef) -> ArrayView1<'_, S> {
        self.tensors[r.0]
            .view()
            .into_dimensionality::<Ix1>()
            .expect("vector-shaped gradient")
    }

    pub fn m_mut(&mut self, r: PRef) -> ArrayViewMut2<'_, S> {
        self.tensors[r.0]
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("matrix-shaped gradient")
    }

    pub fn v_mut(&mut self, r: PRef) -> ArrayViewMut1<'_, S> {
        self.tensors[r.0]
            .view_mut()
            .into_dimensionality::<Ix1>()
            .expect("vector-shaped gradient")
    }

    pub fn raw_mut(&mut self, r: PRef) -> &mut ArrayD<S> {
        &mut self.tensors[r.0]
    }

    pub fn tensors(&self) -> &[ArrayD<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ArrayD<S>] {
        &mut self.tensors
    }

    /// Accumulates `other` into `self`. Used to fold per-chunk gradients
    /// in fixed chunk order.
    pub fn accumulate(&mut self, other: &Grads<S>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: S) {
        for t in &mut self.tensors {
            t.mapv_inplace(|x| x * factor);
        }
    }

    /// L2 norm over all elements of all tensors.
    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.iter().map(|&x| x.to_f64c() * x.to_f64c()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Index of the first tensor containing a non-finite value.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.tensors
            .iter()
            .position(|t| t.iter().any(|x| !x.is_finite()))
    }
}

/// Uniform init on [-limit, limit]. Draws in f64 so f32 and f64 stores
/// see identical values for the same rng stream.
pub fn uniform_init<S: Scalar, R: Rng>(shape: &[usize], limit: f64, rng: &mut R) -> ArrayD<S> {
    ArrayD::from_shape_simple_fn(shape, || {
        S::from_f64c(rng.gen_range(-limit..=limit))
    })
}

/// Xavier/Glorot uniform for a [fan_out, fan_in] matrix.
pub fn xavier_init<S: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> ArrayD<S> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    uniform_init::<S, R>(&[rows, cols], limit, rng)
}

/// Row-wise softmax in place, numerically stabilized by max subtraction.
pub fn softmax_rows_inplace<S: Scalar>(x: &mut ArrayViewMut2<'_, S>) {
    for mut row in x.rows_mut() {
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}
