//! Index-parallel maps with a sequential fallback.
//!
//! With the `parallel` feature, [`Execution::Parallel`] runs on the current
//! rayon pool; without it, every mode runs sequentially. Results are always
//! returned in index order and reduced with [`pairwise_sum`], so the output
//! is bit-identical across modes and thread counts.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// `f(0), ..., f(n-1)` in index order.
pub fn map_indices<T, F>(n: u64, mode: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Pairwise (cascade) summation with a fixed association order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_in_order() {
        let a = map_indices(1000, Execution::Sequential, |i| i * i);
        let b = map_indices(1000, Execution::Parallel, |i| i * i);
        assert_eq!(a, b);
    }

    #[test]
    fn pairwise_sum_is_accurate() {
        let v: Vec<f64> = (0..100_000).map(|i| 0.1 + (i % 7) as f64 * 1e-9).collect();
        let exact: f64 = 100_000.0 * 0.1 + (0..100_000).map(|i| (i % 7) as f64).sum::<f64>() * 1e-9;
        assert!((pairwise_sum(&v) - exact).abs() < 1e-9);
    }
}
