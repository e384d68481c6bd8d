//! Independent oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use decorr_core::models::{objective_and_gradient, EnvData, ModelParams, Objective};
use decorr_core::numerics::{decorr_objective, frobenius_dist_sq, pearson_correlation, solve_spd};
use decorr_core::rng::rng_from_seed;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    Array2::from_shape_fn((n, p), |_| StandardNormal.sample(&mut rng))
}

/// Gaussian columns sharing a common factor of the given strength.
pub fn correlated(n: usize, p: usize, strength: f64, seed: u64) -> Array2<f64> {
    let mut x = gaussian(n, p + 1, seed);
    let shared = x.column(p).to_owned();
    for mut col in x.slice_mut(s![.., ..p]).columns_mut() {
        col.scaled_add(strength, &shared);
    }
    x.slice(s![.., ..p]).to_owned()
}

/// `max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|)`.
pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Central differences of the decorrelation loss against its analytic gradient.
pub fn decorr_grad_error(x: ArrayView2<'_, f64>, w: &Array1<f64>, lambda: f64, target: f64) -> f64 {
    let h = 1e-6;
    let analytic = decorr_objective(x, w.view(), lambda, target).unwrap().grad;
    let numeric: Vec<f64> = (0..w.len())
        .map(|i| {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let lp = decorr_objective(x, wp.view(), lambda, target).unwrap().loss;
            let lm = decorr_objective(x, wm.view(), lambda, target).unwrap().loss;
            (lp - lm) / (2.0 * h)
        })
        .collect();
    max_rel_error(analytic.as_slice().unwrap(), &numeric)
}

/// Central differences of a model's training objective against backprop.
pub fn model_grad_error(model: &ModelParams, envs: &[EnvData], objective: Objective, beta: f64, l2: f64) -> f64 {
    let h = 1e-5;
    let (_, analytic) = objective_and_gradient(model, envs, objective, beta, l2).unwrap();
    let mut m = model.clone();
    let numeric: Vec<f64> = (0..model.weights.len())
        .map(|i| {
            m.weights[i] = model.weights[i] + h;
            let (lp, _) = objective_and_gradient(&m, envs, objective, beta, l2).unwrap();
            m.weights[i] = model.weights[i] - h;
            let (lm, _) = objective_and_gradient(&m, envs, objective, beta, l2).unwrap();
            m.weights[i] = model.weights[i];
            (lp - lm) / (2.0 * h)
        })
        .collect();
    max_rel_error(&analytic, &numeric)
}

/// Unweighted `d^2(R, I)` of the rows in `idx`.
pub fn subset_dist(x: ArrayView2<'_, f64>, idx: &[usize]) -> f64 {
    frobenius_dist_sq(&pearson_correlation(x.select(Axis(0), idx).view()).unwrap())
}

/// Smallest `d^2(R, I)` over every subset of `m` rows, by enumeration.
pub fn brute_force_best(x: ArrayView2<'_, f64>, m: usize) -> f64 {
    let n = x.nrows();
    assert!(n <= 20 && m <= n);
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        best = best.min(subset_dist(x, &idx));
    }
    best
}

/// `[X, 1]`.
fn with_intercept(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut x1 = Array2::ones((x.nrows(), x.ncols() + 1));
    x1.slice_mut(s![.., ..x.ncols()]).assign(&x);
    x1
}

/// Exact least squares with intercept; returns fitted values.
pub fn ols_fit(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Array1<f64> {
    let x1 = with_intercept(x);
    let beta = solve_spd(&x1.t().dot(&x1), &x1.t().dot(&y)).expect("full rank");
    x1.dot(&beta)
}

/// Unpenalized logistic regression with intercept by Newton's method;
/// returns the fitted logits.
pub fn logistic_mle(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Array1<f64> {
    let x1 = with_intercept(x);
    let mut beta = Array1::<f64>::zeros(x1.ncols());
    for _ in 0..100 {
        let f = x1.dot(&beta);
        let p = f.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let grad = x1.t().dot(&(&p - &y));
        if grad.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-13 * y.len() as f64 {
            break;
        }
        let mut weighted = x1.clone();
        for (mut row, pi) in weighted.rows_mut().into_iter().zip(&p) {
            row *= pi * (1.0 - pi);
        }
        let hess = x1.t().dot(&weighted);
        beta = &beta - &solve_spd(&hess, &grad).expect("non-separable data");
    }
    x1.dot(&beta)
}

/// Sample correlation of two columns.
pub fn corr(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let (ma, mb) = (a.mean().unwrap(), b.mean().unwrap());
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
