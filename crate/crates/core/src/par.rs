//! Data-parallel helpers. Work is split into fixed-size chunks whose results are
//! returned in index order, so any reduction the caller performs over them is
//! bit-identical between sequential and parallel execution.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Samples per work unit for batched forward/backward passes.
pub const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, otherwise
    /// runs sequentially.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// `f(i)` for `i in 0..n`, in order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Applies `f` to consecutive `[start, end)` ranges of length `chunk` (the
/// last may be shorter), returning the per-range results in order.
pub fn map_chunks<T, F>(exec: Execution, n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let count = n.div_ceil(chunk);
    map_indexed(exec, count, |c| {
        let start = c * chunk;
        f(start, (start + chunk).min(n))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        for exec in [Execution::Sequential, Execution::Parallel] {
            let ranges = map_chunks(exec, 37, 16, |s, e| (s, e));
            assert_eq!(ranges, vec![(0, 16), (16, 32), (32, 37)]);
            assert!(map_chunks(exec, 0, 16, |s, e| (s, e)).is_empty());
        }
    }

    #[test]
    fn float_reduction_matches_across_modes() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin() * 1e3).collect();
        let sum = |exec| {
            map_chunks(exec, xs.len(), 7, |s, e| xs[s..e].iter().sum::<f64>())
                .into_iter()
                .sum::<f64>()
        };
        assert_eq!(sum(Execution::Sequential).to_bits(), sum(Execution::Parallel).to_bits());
    }
}
