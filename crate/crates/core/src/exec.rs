//! Execution layer: data-parallel map with a sequential fallback.
//!
//! All per-question and per-passage loops in this crate are pure and
//! order-preserving, so they can run on rayon without changing results.
//! With the `parallel` feature (default) [`map_slice`] dispatches to
//! `par_iter`; without it, to a plain iterator. [`map_slice_seq`] is always
//! compiled so benchmarks can compare both paths in one build.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, preserving order. Parallel when the `parallel`
/// feature is enabled, sequential otherwise.
pub fn map_slice<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Sequential reference implementation of [`map_slice`].
pub fn map_slice_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Bounds the global worker pool to `jobs` threads. `0` keeps the library
/// default (one worker per logical CPU). Call once, before any parallel work.
///
/// Without the `parallel` feature this only logs when a bound other than
/// 0 or 1 is requested.
pub fn configure_jobs(jobs: usize) -> crate::Result<()> {
    #[cfg(feature = "parallel")]
    {
        if jobs == 0 {
            return Ok(());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| crate::Error::InvalidConfig(format!("thread pool: {e}")))
    }
    #[cfg(not(feature = "parallel"))]
    {
        if jobs > 1 {
            log::warn!("built without the `parallel` feature; --jobs {jobs} ignored");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_and_preserve_order() {
        let items: Vec<u64> = (0..997).collect();
        let f = |x: &u64| x.wrapping_mul(2654435761) ^ 0x9e37;
        assert_eq!(map_slice(&items, f), map_slice_seq(&items, f));
    }
}
