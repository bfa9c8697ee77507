//! Thin wrappers that run on rayon when the `parallel` feature is enabled and
//! degrade to plain iterators otherwise.
//!
//! Every helper preserves input order, so reductions performed afterwards are
//! independent of the thread count.

/// Execution strategy requested by a caller. `Parallel` silently behaves like
/// `Sequential` when the crate is built without the `parallel` feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

pub fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();

    #[cfg(not(feature = "parallel"))]
    return 1;
}

/// Sizes the global worker pool. Only the first call in a process takes
/// effect; without the `parallel` feature this does nothing.
pub fn configure_threads(n: usize) -> crate::Result<()> {
    crate::error::ensure!(n >= 1, "thread count must be at least 1");
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| crate::Error::validation(format!("cannot configure the thread pool: {e}")))?;
    Ok(())
}

/// Maps `f` over `0..n`, collecting the results in index order.
pub fn map_indices<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Maps `f` over a slice, collecting the results in order.
pub fn map_slice<S, T, F>(items: &[S], exec: Execution, f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Send + Sync,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_agree() {
        let par = map_indices(1000, Execution::Parallel, |i| (i * i) as u64);
        let seq = map_indices(1000, Execution::Sequential, |i| (i * i) as u64);
        assert_eq!(par, seq);
        assert!(num_threads() >= 1);
    }
}
