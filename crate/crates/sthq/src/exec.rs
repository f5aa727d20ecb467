//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the hot batch loops run on a rayon
//! pool; without it they run sequentially. Reductions are chunked with a
//! fixed chunk size and folded in chunk order, so results are bit-identical
//! regardless of thread count or feature selection.
//!
//! `STHQ_THREADS` caps the pool size (0 or unset = rayon default).

/// Fixed reduction granularity. Changing this changes summation order and
/// therefore the low bits of accumulated results; keep it stable.
pub const CHUNK: usize = 1024;

#[cfg(feature = "parallel")]
mod pool {
    use std::sync::OnceLock;

    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

    pub fn get() -> &'static rayon::ThreadPool {
        POOL.get_or_init(|| {
            let threads = std::env::var("STHQ_THREADS")
                .ok()
                .and_then(|v| v.parse::<usize>().ok())
                .unwrap_or(0);
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("failed to build thread pool")
        })
    }
}

/// Map `f` over `0..n`, returning results in index order.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pool::get().install(|| (0..n).into_par_iter().map(&f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential twin of [`par_map`], always available (bench baseline).
pub fn seq_map<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Chunked reduction: `f` maps a chunk range to a partial, `merge` folds the
/// partials in chunk order. Deterministic for any thread count.
pub fn par_reduce_chunks<T, F, M>(n: usize, f: F, init: T, merge: M) -> T
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
    M: Fn(T, T) -> T,
{
    let ranges: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(CHUNK.max(1))
        .map(|s| s..(s + CHUNK).min(n))
        .collect();
    #[cfg(feature = "parallel")]
    let partials: Vec<T> = {
        use rayon::prelude::*;
        pool::get().install(|| ranges.into_par_iter().map(&f).collect())
    };
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<T> = ranges.into_iter().map(&f).collect();

    partials.into_iter().fold(init, merge)
}

/// Sequential twin of [`par_reduce_chunks`] with the identical chunking and
/// fold order.
pub fn seq_reduce_chunks<T, F, M>(n: usize, f: F, init: T, merge: M) -> T
where
    F: Fn(std::ops::Range<usize>) -> T,
    M: Fn(T, T) -> T,
{
    (0..n)
        .step_by(CHUNK.max(1))
        .map(|s| f(s..(s + CHUNK).min(n)))
        .fold(init, merge)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_and_seq_reduce_agree_bitwise() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64).sin() * 1e-3).collect();
        let sum = |r: std::ops::Range<usize>| xs[r].iter().sum::<f64>();
        let a = par_reduce_chunks(xs.len(), sum, 0.0, |x, y| x + y);
        let b = seq_reduce_chunks(xs.len(), sum, 0.0, |x, y| x + y);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn par_map_preserves_order() {
        let v = par_map(100, |i| i * i);
        assert_eq!(v, seq_map(100, |i| i * i));
    }
}
