// SPDX-License-Identifier: Apache-2.0
//! Data-parallel loop helpers.
//!
//! With the `parallel` feature the loops fan out over the rayon pool;
//! without it they run in order on the calling thread. Every helper hands
//! each index or chunk to exactly one closure call, and closures never share
//! an accumulator, so results are bit-identical in both builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Call `f(i)` for every `i` in `0..n`.
pub fn for_each_index<F>(n: usize, f: F)
where
    F: Fn(usize) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    (0..n).into_par_iter().for_each(f);
    #[cfg(not(feature = "parallel"))]
    (0..n).for_each(f);
}

/// Call `f(chunk_index, chunk)` for consecutive `chunk`-sized pieces of `out`.
pub fn for_each_chunk_mut<T, F>(out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Map `0..n` through `f`, keeping index order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..n).map(f).collect();
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

/// Run `f` with data-parallel loops confined to the calling thread. Used by
/// the benches to compare against the pooled path in one process.
pub fn run_serial<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("single-thread pool");
        pool.install(f)
    }
    #[cfg(not(feature = "parallel"))]
    f()
}
