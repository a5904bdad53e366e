//! Execution of independent work items, data-parallel or sequential.
//!
//! With the `parallel` feature (default) [`ExecMode::Parallel`] maps over a
//! rayon thread pool; without it every mode runs sequentially. Results are
//! returned in index order either way, and each item runs on one thread, so
//! outputs do not depend on the mode.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            ExecMode::Sequential => (0..n).map(f).collect(),
            ExecMode::Parallel => par_map_range(n, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let f = |i: usize| (i as f64).sqrt().to_bits();
        assert_eq!(ExecMode::Sequential.map_range(100, f), ExecMode::Parallel.map_range(100, f));
        assert!(ExecMode::Parallel.map_range(0, f).is_empty());
    }
}
