//! Seeded random streams and order-preserving parallel Monte Carlo.

use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use rand::SeedableRng;
use rayon::prelude::*;

/// Independent stream `path` of the master `seed`.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Runs `f` once per path on its own stream and returns results in path
/// order, so the outcome does not depend on the worker count.
pub fn par_paths<T, F>(seed: u64, n_paths: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> T + Sync + Send,
{
    (0..n_paths as u64).into_par_iter().map(|i| f(&mut path_rng(seed, i))).collect()
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    /// Summation runs sequentially in slice order.
    pub fn of(xs: &[f64]) -> MeanSe {
        let n = xs.len();
        if n == 0 {
            return MeanSe { mean: f64::NAN, se: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        MeanSe { mean, se: (var / n as f64).sqrt(), n }
    }

    pub fn variance(&self) -> f64 {
        self.se * self.se * self.n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| path_rng(7, 3).random()).collect();
        let b: Vec<u64> = (0..4).map(|_| path_rng(7, 3).random()).collect();
        assert_eq!(a, b);
        assert_ne!(path_rng(7, 3).random::<u64>(), path_rng(7, 4).random::<u64>());
    }

    #[test]
    fn parallel_results_independent_of_pool_size() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| par_paths(99, 1000, |rng| rng.random::<f64>()))
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn mean_se() {
        let m = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
