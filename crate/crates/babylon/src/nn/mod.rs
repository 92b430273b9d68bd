//! Neural layers with hand-written forward and backward passes.
//!
//! Every layer follows one contract: `forward` takes parameter store plus
//! inputs and returns outputs with a cache of exactly the intermediates
//! the backward pass needs; `backward` takes the cache, accumulates
//! parameter gradients into a [`Grads`](crate::tensor::Grads) store, and
//! returns input gradients. Nothing here allocates global state, so
//! chunked data parallelism stays deterministic.
//!
//! Sequence tensors are time-major `[T, B, D]`.

mod attention;
mod dropout;
mod embedding;
mod ffn;
pub mod fidelity;
mod linear;
mod loss;
mod lstm;
mod norm;
mod pe;

pub use attention::{AttnCache, AttnMask, MaskKind, MultiHeadAttn};
pub use dropout::Dropout;
pub use embedding::Embedding;
pub use ffn::{FeedForward, FfnCache};
pub use linear::Linear;
pub use loss::softmax_xent;
pub use lstm::{last_h, reverse_padded, BiLstm, BiLstmCache, Lstm, LstmCache};
pub use norm::{LayerNorm, NormCache};
pub use pe::{add_positional, sinusoidal_table};

use ndarray::{Array2, Array3, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Scalar;

/// Execution context: eval is deterministic and dropout-free; train
/// carries a seeded stream for dropout masks. Chunked training seeds one
/// context per (step, chunk), so thread count never changes masks.
pub struct Ctx {
    pub train: bool,
    pub(crate) rng: ChaCha8Rng,
}

impl Ctx {
    pub fn eval() -> Ctx {
        Ctx {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(seed: u64) -> Ctx {
        Ctx {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Views a `[T, B, D]` tensor as `[T * B, D]` for flat matrix ops.
pub(crate) fn flat2<S: Scalar>(x: &Array3<S>) -> ArrayView2<'_, S> {
    let (t, b, d) = x.dim();
    x.view()
        .into_shape((t * b, d))
        .expect("time-major tensors are contiguous")
}

/// Reshapes a flat `[T * B, D]` matrix back to `[T, B, D]`.
pub(crate) fn unflat<S: Scalar>(x: Array2<S>, t: usize, b: usize) -> Array3<S> {
    let d = x.dim().1;
    x.into_shape((t, b, d))
        .expect("flat tensors are contiguous")
}
