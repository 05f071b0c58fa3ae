//! Chunked execution helpers.
//!
//! Work is always split at fixed chunk boundaries and partial results are
//! combined in index order, so outputs are bit-identical across thread
//! counts and with the `parallel` feature disabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Column-chunk width used by Gram construction and batched solves.
pub(crate) const COL_CHUNK: usize = 512;

/// Apply `f(offset, chunk)` to consecutive `chunk_len` slices of `data`.
pub(crate) fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i * chunk_len, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, c) in data.chunks_mut(chunk_len).enumerate() {
            f(i * chunk_len, c);
        }
    }
}

/// Map `f` over `[0, len)` split into `chunk_len` ranges; results come back
/// in range order.
pub(crate) fn map_chunks<R, F>(len: usize, chunk_len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(std::ops::Range<usize>) -> R + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    let ranges: Vec<_> = (0..len)
        .step_by(chunk_len)
        .map(|start| start..(start + chunk_len).min(len))
        .collect();
    #[cfg(feature = "parallel")]
    {
        ranges.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(f).collect()
    }
}

/// Map `f` over items, preserving order.
pub(crate) fn map_items<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_offsets_cover_everything() {
        let mut v = vec![0usize; 1000];
        for_each_chunk_mut(&mut v, 64, |offset, chunk| {
            for (i, x) in chunk.iter_mut().enumerate() {
                *x = offset + i;
            }
        });
        for (i, x) in v.iter().enumerate() {
            assert_eq!(*x, i);
        }
    }

    #[test]
    fn map_chunks_in_order() {
        let parts = map_chunks(10, 3, |r| (r.start, r.end));
        assert_eq!(parts, vec![(0, 3), (3, 6), (6, 9), (9, 10)]);
    }
}
