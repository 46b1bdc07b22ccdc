//! Deterministic data parallelism.
//!
//! Work is split into a chunk layout that depends only on the item count, each
//! chunk is processed independently (in parallel when the `parallel` feature is
//! on), and partial results are merged along a fixed pairwise tree in chunk
//! order. Results are therefore identical for any worker count, including the
//! sequential fallback.

use std::ops::Range;

/// Chunk layout: at most `max_chunks` contiguous ranges covering 0..n.
pub fn chunk_ranges(n: usize, max_chunks: usize) -> Vec<Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let chunks = max_chunks.max(1).min(n);
    let base = n / chunks;
    let extra = n % chunks;
    let mut out = Vec::with_capacity(chunks);
    let mut start = 0;
    for c in 0..chunks {
        let len = base + usize::from(c < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Merge partials pairwise, adjacent-first, preserving chunk order.
pub fn tree_merge<T>(mut items: Vec<T>, merge: impl Fn(T, T) -> T) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(merge(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

/// Map chunks in parallel (feature-gated), merge deterministically.
pub fn run_chunked<T, W, M>(n: usize, max_chunks: usize, worker: W, merge: M) -> Option<T>
where
    T: Send,
    W: Fn(usize, Range<usize>) -> T + Sync,
    M: Fn(T, T) -> T,
{
    let ranges = chunk_ranges(n, max_chunks);
    let partials = map_chunks(ranges, &worker);
    tree_merge(partials, merge)
}

/// Always-sequential variant with the same chunk layout and merge order;
/// benches compare this against the parallel path.
pub fn run_chunked_serial<T, W, M>(n: usize, max_chunks: usize, worker: W, merge: M) -> Option<T>
where
    W: Fn(usize, Range<usize>) -> T,
    M: Fn(T, T) -> T,
{
    let ranges = chunk_ranges(n, max_chunks);
    let partials: Vec<T> = ranges
        .into_iter()
        .enumerate()
        .map(|(i, r)| worker(i, r))
        .collect();
    tree_merge(partials, merge)
}

#[cfg(feature = "parallel")]
fn map_chunks<T, W>(ranges: Vec<Range<usize>>, worker: &W) -> Vec<T>
where
    T: Send,
    W: Fn(usize, Range<usize>) -> T + Sync,
{
    use rayon::prelude::*;
    ranges
        .into_par_iter()
        .enumerate()
        .map(|(i, r)| worker(i, r))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn map_chunks<T, W>(ranges: Vec<Range<usize>>, worker: &W) -> Vec<T>
where
    W: Fn(usize, Range<usize>) -> T + Sync,
{
    ranges
        .into_iter()
        .enumerate()
        .map(|(i, r)| worker(i, r))
        .collect()
}

/// Parallel map over independent indices, order-preserving.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
