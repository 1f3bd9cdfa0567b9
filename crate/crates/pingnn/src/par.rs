use pingnn_core::train::Parallelism;
use rayon::prelude::*;

/// Runs jobs on the rayon global pool. Results come back in index order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl Parallelism for Rayon {
    fn map<R: Send, F: Fn(usize) -> R + Sync>(&self, n: usize, f: F) -> Vec<R> {
        (0..n).into_par_iter().map(|i| f(i)).collect()
    }
}
