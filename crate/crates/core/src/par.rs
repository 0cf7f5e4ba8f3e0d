//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper preserves index order in its output, so results are identical
//! whether or not the `parallel` feature is enabled. Reductions are always
//! performed by the caller over the ordered per-chunk results.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
thread_local! {
    static FORCE_SEQUENTIAL: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Run `f` with every helper called from this thread taking the sequential
/// path, even in a `parallel` build.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    #[cfg(feature = "parallel")]
    {
        let prev = FORCE_SEQUENTIAL.with(|c| c.replace(true));
        let out = f();
        FORCE_SEQUENTIAL.with(|c| c.set(prev));
        out
    }
    #[cfg(not(feature = "parallel"))]
    {
        f()
    }
}

#[cfg(feature = "parallel")]
fn use_pool() -> bool {
    !FORCE_SEQUENTIAL.with(|c| c.get())
}

/// Split `0..len` into consecutive ranges of at most `chunk` elements.
pub fn chunk_ranges(len: usize, chunk: usize) -> Vec<Range<usize>> {
    let chunk = chunk.max(1);
    (0..len.div_ceil(chunk))
        .map(|c| c * chunk..((c + 1) * chunk).min(len))
        .collect()
}

/// Map `f` over fixed-size chunks of `0..len`, returning results in chunk order.
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    let ranges = chunk_ranges(len, chunk);
    #[cfg(feature = "parallel")]
    if use_pool() {
        return ranges.into_par_iter().map(f).collect();
    }
    ranges.into_iter().map(f).collect()
}

/// Map `f` over `0..len`, returning results in index order.
pub fn map_indices<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if use_pool() {
        return (0..len).into_par_iter().map(f).collect();
    }
    (0..len).map(f).collect()
}

/// Apply `f` to every element of `items` together with its index.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if use_pool() {
        items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
        return;
    }
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Mutably map over paired slices, collecting in order.
pub fn zip_map_mut<A, B, T, F>(a: &mut [A], b: &mut [B], f: F) -> Vec<T>
where
    A: Send,
    B: Send,
    T: Send,
    F: Fn(usize, &mut A, &mut B) -> T + Sync + Send,
{
    assert_eq!(a.len(), b.len());
    #[cfg(feature = "parallel")]
    if use_pool() {
        return a
            .par_iter_mut()
            .zip(b.par_iter_mut())
            .enumerate()
            .map(|(i, (x, y))| f(i, x, y))
            .collect();
    }
    a.iter_mut()
        .zip(b.iter_mut())
        .enumerate()
        .map(|(i, (x, y))| f(i, x, y))
        .collect()
}

/// Whether this build dispatches work to the rayon pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_exactly() {
        let r = chunk_ranges(10, 4);
        assert_eq!(r, vec![0..4, 4..8, 8..10]);
        assert!(chunk_ranges(0, 4).is_empty());
    }

    #[test]
    fn order_preserved() {
        let v = map_indices(100, |i| i * 2);
        assert_eq!(v, (0..100).map(|i| i * 2).collect::<Vec<_>>());
        let sums = map_chunks(10, 3, |r| r.sum::<usize>());
        assert_eq!(sums, vec![3, 12, 21, 9]);
        assert_eq!(sequential(|| map_chunks(10, 3, |r| r.sum::<usize>())), sums);
    }
}
