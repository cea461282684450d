//! Data-parallel helpers.
//!
//! With the `parallel` feature the closures fan out over rayon's pool;
//! without it, or when the caller asks for [`Execution::Sequential`], they run
//! in a plain loop. Output order always follows input order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn map_range<R, F>(n: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Configures the global pool from `PTREE_THREADS` if set. Returns the
/// thread count in effect. Safe to call more than once.
pub fn init_threads_from_env() -> usize {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = std::env::var("PTREE_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
        {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_in_both_modes() {
        let seq = map_range(1000, Execution::Sequential, |i| i * i);
        let par = map_range(1000, Execution::Parallel, |i| i * i);
        assert_eq!(seq, par);
        let v: Vec<u32> = (0..50).collect();
        assert_eq!(
            map_slice(&v, Execution::Parallel, |x| x + 1),
            map_slice(&v, Execution::Sequential, |x| x + 1)
        );
    }
}
