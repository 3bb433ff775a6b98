//! Data-parallel map helpers with a deterministic sequential fallback.
//!
//! With the `parallel` feature (default) the maps run on rayon; without
//! it they degrade to plain iteration. Results are always collected in
//! input order and reduced sequentially by the callers, so the feature
//! flag never changes a single output bit.

/// Fixed shard count for batched reductions. Work is split into this
/// many index-contiguous chunks regardless of how many threads exist,
/// which pins the floating-point accumulation order.
pub const REDUCE_SHARDS: usize = 8;

#[cfg(feature = "parallel")]
pub fn par_map<T: Sync, R: Send, F: Fn(&T) -> R + Sync + Send>(items: &[T], f: F) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, R, F: Fn(&T) -> R>(items: &[T], f: F) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Parallel map over `0..n` by index.
#[cfg(feature = "parallel")]
pub fn par_map_idx<R: Send, F: Fn(usize) -> R + Sync + Send>(n: usize, f: F) -> Vec<R> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map_idx<R, F: Fn(usize) -> R>(n: usize, f: F) -> Vec<R> {
    (0..n).map(f).collect()
}

/// Always-sequential variants, kept for the benchmark suite so the two
/// paths can be compared inside one binary.
pub fn seq_map<T, R, F: Fn(&T) -> R>(items: &[T], f: F) -> Vec<R> {
    items.iter().map(f).collect()
}

pub fn seq_map_idx<R, F: Fn(usize) -> R>(n: usize, f: F) -> Vec<R> {
    (0..n).map(f).collect()
}

/// Splits `0..n` into [`REDUCE_SHARDS`] contiguous index ranges.
pub fn shard_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    let shards = REDUCE_SHARDS.min(n.max(1));
    let base = n / shards;
    let rem = n % shards;
    let mut out = Vec::with_capacity(shards);
    let mut start = 0;
    for s in 0..shards {
        let len = base + usize::from(s < rem);
        out.push(start..start + len);
        start += len;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shards_cover_range_in_order() {
        for n in [0usize, 1, 7, 8, 9, 100] {
            let ranges = shard_ranges(n);
            let flat: Vec<usize> = ranges.iter().cloned().flatten().collect();
            assert_eq!(flat, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn par_matches_seq() {
        let items: Vec<u64> = (0..1000).collect();
        let p = par_map(&items, |x| x * 3 + 1);
        let s = seq_map(&items, |x| x * 3 + 1);
        assert_eq!(p, s);
    }
}
