//! Decorrelation partitioning.
//!
//! Each round learns per-sample inclusion probabilities on the remaining
//! points by projected gradient descent on the weighted-correlation objective,
//! then draws one environment by independent Bernoulli sampling. Whatever is
//! left after `k - 1` rounds is the last environment.

use ndarray::Array1;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{decorr_objective, DataMatrix, WeightVector};
use crate::partition::Partition;
use crate::rng::{rng_from_seed, sub_seed, Rng};

const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecorrConfig {
    pub k: usize,
    pub p0: f64,
    pub alpha: f64,
    pub max_iters: usize,
    pub lambda: f64,
    pub tol: f64,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for DecorrConfig {
    fn default() -> Self {
        Self {
            k: 2,
            p0: 0.1,
            alpha: 0.1,
            max_iters: 5000,
            lambda: 100.0,
            tol: 1e-8,
            seed: 0,
            standardize: true,
        }
    }
}

impl DecorrConfig {
    pub fn with_k(k: usize, seed: u64) -> Self {
        Self { k, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k < 1 {
            return bad("k must be >= 1".into());
        }
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return bad(format!("p0 must lie in (0, 1), got {}", self.p0));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if self.max_iters < 1 {
            return bad("max_iters must be >= 1".into());
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        Ok(())
    }
}

/// Result of one weight optimization.
#[derive(Debug, Clone)]
pub struct WeightFit {
    pub weights: WeightVector,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Correlation part of `final_loss`.
    pub final_corr_term: f64,
    pub iterations: usize,
    /// Extremes of every iterate, including the initial draw.
    pub min_weight_seen: f64,
    pub max_weight_seen: f64,
    pub degenerate: bool,
}

/// Projected gradient descent on the sample weights, seeded from `cfg.seed`.
pub fn optimize_weights(x: &DataMatrix, cfg: &DecorrConfig, target_mean: f64) -> Result<WeightFit> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    optimize_weights_with(x, cfg, target_mean, &mut rng)
}

fn optimize_weights_with(
    x: &DataMatrix,
    cfg: &DecorrConfig,
    target_mean: f64,
    rng: &mut Rng,
) -> Result<WeightFit> {
    if !(target_mean > 0.0 && target_mean <= 1.0) {
        return Err(Error::InvalidConfig(format!("target mean {target_mean} outside (0, 1]")));
    }
    let n = x.n();
    let mut w = Array1::from_shape_fn(n, |_| rng.random_range(cfg.p0..=1.0));
    let mut min_seen = w.iter().copied().fold(f64::INFINITY, f64::min);
    let mut max_seen = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut obj = decorr_objective(x.view(), w.view(), cfg.lambda, target_mean)?;
    let initial_loss = obj.loss;
    let mut degenerate = obj.degenerate;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let prev = obj.loss;
        w.zip_mut_with(&obj.grad, |wi, gi| *wi = (*wi - cfg.alpha * gi).clamp(cfg.p0, 1.0));
        iterations += 1;
        for &v in &w {
            min_seen = min_seen.min(v);
            max_seen = max_seen.max(v);
        }
        obj = decorr_objective(x.view(), w.view(), cfg.lambda, target_mean)?;
        degenerate |= obj.degenerate;
        if !obj.loss.is_finite() {
            return Err(Error::Divergence { iteration: iterations, reason: "non-finite decorrelation loss".into() });
        }
        if (obj.loss - prev).abs() < cfg.tol {
            break;
        }
    }
    if degenerate {
        log::warn!("near-constant columns encountered while optimizing weights");
    }
    Ok(WeightFit {
        weights: WeightVector::new(w, cfg.p0)?,
        initial_loss,
        final_loss: obj.loss,
        final_corr_term: obj.corr_term,
        iterations,
        min_weight_seen: min_seen,
        max_weight_seen: max_seen,
        degenerate,
    })
}

/// Partition together with the per-round weight fits that produced it.
#[derive(Debug, Clone)]
pub struct DecorrRun {
    pub partition: Partition,
    pub rounds: Vec<WeightFit>,
}

pub fn decorr_partition(x: &DataMatrix, cfg: &DecorrConfig) -> Result<Partition> {
    Ok(decorr_partition_detailed(x, cfg)?.partition)
}

pub fn decorr_partition_detailed(x: &DataMatrix, cfg: &DecorrConfig) -> Result<DecorrRun> {
    cfg.validate()?;
    let n = x.n();
    let k = cfg.k;
    if n < 2 * k {
        return Err(Error::InvalidConfig(format!("decorr needs n >= 2k, got n = {n}, k = {k}")));
    }
    if k == 1 {
        return Ok(DecorrRun { partition: Partition::single(n, cfg.seed), rounds: Vec::new() });
    }
    let data = if cfg.standardize { x.standardized() } else { x.clone() };

    let mut assignments = vec![usize::MAX; n];
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut rounds = Vec::with_capacity(k - 1);
    for round in 0..k - 1 {
        let envs_left = k - round;
        let mut rng = rng_from_seed(sub_seed(cfg.seed, round as u64));
        let sub = data.select_rows(&remaining)?;
        let fit = optimize_weights_with(&sub, cfg, 1.0 / envs_left as f64, &mut rng)?;
        let chosen = draw_environment(fit.weights.as_array(), envs_left, &mut rng);
        for &local in &chosen {
            assignments[remaining[local]] = round;
        }
        let chosen_set: std::collections::HashSet<usize> = chosen.into_iter().collect();
        remaining = remaining
            .iter()
            .enumerate()
            .filter(|(local, _)| !chosen_set.contains(local))
            .map(|(_, &g)| g)
            .collect();
        rounds.push(fit);
    }
    for &g in &remaining {
        assignments[g] = k - 1;
    }
    let trace = rounds.iter().map(|r| r.final_loss).collect();
    let partition = Partition::new(k, assignments, trace, cfg.seed)?;
    Ok(DecorrRun { partition, rounds })
}

/// Bernoulli draw of one environment from `weights`. A draw is rejected when
/// it is empty or leaves fewer points than environments still to fill; after
/// [`MAX_RESAMPLES`] rejections the highest-weight `ceil(m / envs_left)`
/// points are taken instead.
pub(crate) fn draw_environment(weights: &Array1<f64>, envs_left: usize, rng: &mut Rng) -> Vec<usize> {
    let m = weights.len();
    for _ in 0..MAX_RESAMPLES {
        let chosen: Vec<usize> = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| rng.random::<f64>() < w)
            .map(|(i, _)| i)
            .collect();
        if !chosen.is_empty() && m - chosen.len() >= envs_left - 1 {
            return chosen;
        }
    }
    let take = m.div_ceil(envs_left);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut chosen = order[..take].to_vec();
    chosen.sort_unstable();
    chosen
}
