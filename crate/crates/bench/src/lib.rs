//! Input builders shared by the benchmarks.

use decorr_core::rng::rng_from_seed;
use decorr_core::{DataMatrix, WeightVector};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

/// `n x p` standard-normal matrix with a shared factor, so columns correlate.
pub fn correlated_matrix(n: usize, p: usize, seed: u64) -> DataMatrix {
    let mut rng = rng_from_seed(seed);
    let mut x = Array2::<f64>::zeros((n, p));
    for mut row in x.rows_mut() {
        let shared: f64 = rng.sample(StandardNormal);
        for v in row.iter_mut() {
            let own: f64 = rng.sample(StandardNormal);
            *v = 0.6 * shared + own;
        }
    }
    DataMatrix::new(x).expect("finite")
}

/// Weights drawn uniformly from `[p0, 1]`.
pub fn random_weights(n: usize, p0: f64, seed: u64) -> WeightVector {
    let mut rng = rng_from_seed(seed);
    let w = Array1::from_shape_fn(n, |_| rng.random_range(p0..=1.0));
    WeightVector::new(w, p0).expect("in bounds")
}
