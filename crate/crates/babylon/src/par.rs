//! Parallel execution helpers with a sequential fallback.
//!
//! Every data-parallel loop in the crate goes through these functions so
//! that the `parallel` feature is a pure throughput switch: results are
//! produced per index and collected in index order, which keeps output
//! byte-identical whether the work ran on one thread or many.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk width used when batching gradient work. Fixed regardless of
/// thread count so gradient reduction order never depends on parallelism.
pub const GRAD_CHUNK: usize = 32;

/// Maps `f` over `0..n`, in parallel when the feature is on and `par` is
/// set. Output order always matches index order.
pub fn map_indexed<T, F>(n: usize, par: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if par {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = par;
    (0..n).map(f).collect()
}

/// Maps `f` over the items of a slice, preserving order.
pub fn map_slice<'a, I, T, F>(items: &'a [I], par: bool, f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&'a I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if par {
        return items.par_iter().map(f).collect();
    }
    let _ = par;
    items.iter().map(f).collect()
}

/// True when the current thread is a worker inside a rayon pool. Used by
/// the bench harness to refuse measurements taken under parallelism.
pub fn inside_worker_pool() -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::current_thread_index().is_some()
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_preserves_order() {
        let seq = map_indexed(100, false, |i| i * i);
        let par = map_indexed(100, true, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
    }

    #[test]
    fn map_slice_preserves_order() {
        let items: Vec<u32> = (0..50).collect();
        let seq = map_slice(&items, false, |&x| x + 1);
        let par = map_slice(&items, true, |&x| x + 1);
        assert_eq!(seq, par);
    }

    #[test]
    #[cfg(feature = "parallel")]
    fn worker_pool_detection() {
        assert!(!inside_worker_pool());
        let seen: Vec<bool> = map_indexed(4, true, |_| inside_worker_pool());
        assert!(seen.iter().all(|&b| b));
    }
}
