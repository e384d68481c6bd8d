//! Synthetic data generators.
//!
//! * The linear-Gaussian regression example with a causal block `x1` and an
//!   anti-causal block `x2` whose noise level varies by environment.
//! * A label-first structural model with invariant features `z_c` and
//!   environment-dependent features `z_e`.
//! * A correlated two-dimensional toy set for visualizing partitions.
//! * A group-biased resampler that plants a spurious binary feature.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::EnvData;
use crate::rng::{labeled_seed, rng_from_seed, sub_seed, Rng};

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normal_vec(len: usize, rng: &mut Rng) -> Array1<f64> {
    Array1::from_shape_fn(len, |_| normal(rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrmExampleConfig {
    pub d: usize,
    pub sigmas: Vec<f64>,
    pub n_per_env: usize,
    /// `d x d`; identity when absent.
    pub w_xy: Option<Array2<f64>>,
    pub w_yx: Option<Array2<f64>>,
    pub seed: u64,
}

impl IrmExampleConfig {
    pub fn new(d: usize, sigmas: Vec<f64>, seed: u64) -> Self {
        Self { d, sigmas, n_per_env: 1000, w_xy: None, w_yx: None, seed }
    }

    fn weights(&self) -> (Array2<f64>, Array2<f64>) {
        let eye = || Array2::eye(self.d);
        (self.w_xy.clone().unwrap_or_else(eye), self.w_yx.clone().unwrap_or_else(eye))
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::InvalidConfig("d must be >= 1".into()));
        }
        if self.sigmas.is_empty() {
            return Err(Error::InvalidConfig("at least one environment sigma is required".into()));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!("environment sigma must be > 0, got {s}")));
        }
        if self.n_per_env < 2 {
            return Err(Error::InvalidConfig("n_per_env must be >= 2".into()));
        }
        for w in [&self.w_xy, &self.w_yx].into_iter().flatten() {
            if w.dim() != (self.d, self.d) {
                return Err(Error::InvalidConfig(format!("weight matrix must be {0} x {0}", self.d)));
            }
        }
        Ok(())
    }
}

/// Generated regression environments with the causal coefficients.
#[derive(Debug, Clone)]
pub struct IrmExample {
    pub envs: Vec<EnvData>,
    /// `(1_d, 0_d)`.
    pub beta_star: Array1<f64>,
}

/// Per environment: `x1 ~ N(0, s^2 I)`, `yt ~ N(W_yx x1, s^2 I)`,
/// `x2 ~ N(W_xy yt, I)`, features `[x1, x2]`, target `sum(yt)`.
pub fn gen_irm_example(cfg: &IrmExampleConfig) -> Result<IrmExample> {
    cfg.validate()?;
    let d = cfg.d;
    let (w_xy, w_yx) = cfg.weights();
    let envs = cfg
        .sigmas
        .iter()
        .enumerate()
        .map(|(e, &sigma)| {
            let mut rng = rng_from_seed(sub_seed(cfg.seed, e as u64));
            let mut x = Array2::<f64>::zeros((cfg.n_per_env, 2 * d));
            let mut y = Array1::<f64>::zeros(cfg.n_per_env);
            for i in 0..cfg.n_per_env {
                let x1 = normal_vec(d, &mut rng) * sigma;
                let yt = w_yx.dot(&x1) + normal_vec(d, &mut rng) * sigma;
                let x2 = w_xy.dot(&yt) + normal_vec(d, &mut rng);
                x.row_mut(i).slice_mut(ndarray::s![..d]).assign(&x1);
                x.row_mut(i).slice_mut(ndarray::s![d..]).assign(&x2);
                y[i] = yt.sum();
            }
            EnvData::new(x, y)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut beta_star = Array1::zeros(2 * d);
    beta_star.slice_mut(ndarray::s![..d]).fill(1.0);
    Ok(IrmExample { envs, beta_star })
}

/// Ingredients of the closed-form correlation between `x1_i` and `x2_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormCorrTerms {
    /// `(W_xy W_yx)^T`.
    pub gamma: Array2<f64>,
    /// Diagonal of `Cov(W_xy W_yx z)` for standard normal `z`.
    pub a_sq: Array1<f64>,
    /// Diagonal of `Cov(W_xy z)`.
    pub b_sq: Array1<f64>,
}

impl ClosedFormCorrTerms {
    pub fn from_weights(w_xy: &Array2<f64>, w_yx: &Array2<f64>) -> Result<Self> {
        let d = w_xy.nrows();
        if w_xy.dim() != (d, d) || w_yx.dim() != (d, d) {
            return Err(Error::Dimension("weight matrices must be square and equal in size".into()));
        }
        let m = w_xy.dot(w_yx);
        let a_sq = m.dot(&m.t()).diag().to_owned();
        let b_sq = w_xy.dot(&w_xy.t()).diag().to_owned();
        Ok(Self { gamma: m.t().to_owned(), a_sq, b_sq })
    }

    pub fn identity(d: usize) -> Self {
        let eye = Array2::eye(d);
        Self::from_weights(&eye, &eye).expect("square identity")
    }
}

/// `sigma * Gamma_ij / sqrt((a_j^2 + b_j^2) sigma^2 + 1)`.
pub fn closed_form_corr(terms: &ClosedFormCorrTerms, sigma: f64, i: usize, j: usize) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("sigma must be > 0, got {sigma}")));
    }
    let d = terms.gamma.nrows();
    if i >= d || j >= d {
        return Err(Error::Dimension(format!("index ({i}, {j}) out of range for d = {d}")));
    }
    let ab = terms.a_sq[j] + terms.b_sq[j];
    Ok(sigma * terms.gamma[[i, j]] / (ab * sigma * sigma + 1.0).sqrt())
}

/// How the environmental mean `mu_e` is produced per environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuEnvRule {
    /// `shared + noise_scale * Z_e` with a fresh standard normal `Z_e` per environment.
    Shifted { shared: Vec<f64>, noise_scale: f64 },
    /// The same mean in every environment.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemConfig {
    pub n_envs: usize,
    pub d_c: usize,
    pub d_e: usize,
    /// `P(y = +1)`.
    pub eta: f64,
    pub mu_c: Vec<f64>,
    pub mu_e_rule: MuEnvRule,
    pub sigma_c_sq: f64,
    pub sigma_e_sq: f64,
    pub n_per_env: usize,
    pub seed: u64,
}

impl SemConfig {
    /// `mu_c = Z1 + 0.5 sign(Z1)`, `mu_e = 1.5 Z2 + Z_e`, `d_c = 3`, `d_e = 6`,
    /// `eta = 0.5`, `sigma_c^2 = 2`, `sigma_e^2 = 0.1`. `Z1` and `Z2` are drawn
    /// once from `seed` and shared by every environment.
    pub fn risks_of_irm(n_envs: usize, n_per_env: usize, seed: u64) -> Self {
        let (d_c, d_e) = (3, 6);
        let mut rng = rng_from_seed(labeled_seed(seed, "shared-means"));
        let z1 = normal_vec(d_c, &mut rng);
        let z2 = normal_vec(d_e, &mut rng);
        let mu_c = z1.iter().map(|&v| v + 0.5 * v.signum()).collect();
        let shared = z2.iter().map(|&v| 1.5 * v).collect();
        Self {
            n_envs,
            d_c,
            d_e,
            eta: 0.5,
            mu_c,
            mu_e_rule: MuEnvRule::Shifted { shared, noise_scale: 1.0 },
            sigma_c_sq: 2.0,
            sigma_e_sq: 0.1,
            n_per_env,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta must lie in (0, 1), got {}", self.eta));
        }
        if !(self.sigma_c_sq > 0.0 && self.sigma_e_sq > 0.0) {
            return bad("variances must be > 0".into());
        }
        if self.mu_c.len() != self.d_c {
            return bad(format!("mu_c has {} entries, d_c = {}", self.mu_c.len(), self.d_c));
        }
        let mu_e_len = match &self.mu_e_rule {
            MuEnvRule::Shifted { shared, .. } => shared.len(),
            MuEnvRule::Fixed(m) => m.len(),
        };
        if mu_e_len != self.d_e {
            return bad(format!("mu_e has {mu_e_len} entries, d_e = {}", self.d_e));
        }
        if self.n_per_env < 1 {
            return bad("n_per_env must be >= 1".into());
        }
        Ok(())
    }

    fn draw_mu_e(&self, rng: &mut Rng) -> Vec<f64> {
        match &self.mu_e_rule {
            MuEnvRule::Shifted { shared, noise_scale } => {
                shared.iter().map(|&s| s + noise_scale * normal(rng)).collect()
            }
            MuEnvRule::Fixed(m) => m.clone(),
        }
    }

    /// Samples one environment with the given environmental mean. Targets
    /// are reported in {0, 1} (`(y + 1) / 2` for the signed label `y`).
    pub fn sample_environment(&self, mu_e: &[f64], n: usize, rng: &mut Rng) -> Result<EnvData> {
        let p = self.d_c + self.d_e;
        let sc = self.sigma_c_sq.sqrt();
        let se = self.sigma_e_sq.sqrt();
        let mut x = Array2::<f64>::zeros((n, p));
        let mut y = Array1::<f64>::zeros(n);
        for i in 0..n {
            let label = if rng.random::<f64>() < self.eta { 1.0 } else { -1.0 };
            for j in 0..self.d_c {
                x[[i, j]] = label * self.mu_c[j] + sc * normal(rng);
            }
            for j in 0..self.d_e {
                x[[i, self.d_c + j]] = label * mu_e[j] + se * normal(rng);
            }
            y[i] = (label + 1.0) / 2.0;
        }
        EnvData::new(x, y)
    }
}

/// Produces fresh test environments with new environmental means on demand.
#[derive(Debug, Clone)]
pub struct SemTestFactory {
    cfg: SemConfig,
    base_seed: u64,
}

impl SemTestFactory {
    /// The environment for `index`; the same index always yields the same data.
    pub fn environment(&self, index: u64) -> Result<EnvData> {
        let mut rng = rng_from_seed(sub_seed(self.base_seed, index));
        let mu_e = self.cfg.draw_mu_e(&mut rng);
        self.cfg.sample_environment(&mu_e, self.cfg.n_per_env, &mut rng)
    }

    pub fn config(&self) -> &SemConfig {
        &self.cfg
    }
}

/// Training environments and a lazy factory for test environments.
pub fn gen_sem(cfg: &SemConfig) -> Result<(Vec<EnvData>, SemTestFactory)> {
    cfg.validate()?;
    let envs = (0..cfg.n_envs)
        .map(|e| {
            let mut rng = rng_from_seed(sub_seed(labeled_seed(cfg.seed, "train"), e as u64));
            let mu_e = cfg.draw_mu_e(&mut rng);
            cfg.sample_environment(&mu_e, cfg.n_per_env, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let factory = SemTestFactory { cfg: cfg.clone(), base_seed: labeled_seed(cfg.seed, "test") };
    Ok((envs, factory))
}

/// Standard bivariate normal with correlation 0.8; `y = x0 + N(0, 0.25)`.
pub fn gen_toy_2d(n: usize, seed: u64) -> Result<EnvData> {
    if n < 10 {
        return Err(Error::InvalidInput(format!("toy set needs n >= 10, got {n}")));
    }
    let rho: f64 = 0.8;
    let mut rng = rng_from_seed(seed);
    let mut x = Array2::<f64>::zeros((n, 2));
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let a = normal(&mut rng);
        let b = normal(&mut rng);
        x[[i, 0]] = a;
        x[[i, 1]] = rho * a + (1.0 - rho * rho).sqrt() * b;
        y[i] = a + 0.5 * normal(&mut rng);
    }
    EnvData::new(x, y)
}

/// Binary-feature source for the resampler: column 0 is a fair coin
/// independent of the fair label; the remaining `n_extra` columns are
/// `N(0.5 (2y - 1), 1)`.
pub fn gen_biased_source(n: usize, n_extra: usize, seed: u64) -> Result<EnvData> {
    let mut rng = rng_from_seed(seed);
    let mut x = Array2::<f64>::zeros((n, 1 + n_extra));
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let label = f64::from(u8::from(rng.random::<bool>()));
        x[[i, 0]] = f64::from(u8::from(rng.random::<bool>()));
        for j in 0..n_extra {
            x[[i, 1 + j]] = 0.5 * (2.0 * label - 1.0) + normal(&mut rng);
        }
        y[i] = label;
    }
    EnvData::new(x, y)
}

/// Train/test split that over-represents the groups where the bias column
/// agrees with the label: 90% of `{b = y}` rows and an `alpha` fraction of
/// `{b != y}` rows go to training, the rest to test.
pub fn biased_resample(data: &EnvData, bias_column: usize, alpha: f64, seed: u64) -> Result<(EnvData, EnvData)> {
    if !(alpha > 0.0 && alpha <= 0.9) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 0.9], got {alpha}")));
    }
    if bias_column >= data.x.ncols() {
        return Err(Error::Dimension(format!("bias column {bias_column} out of range")));
    }
    let is_binary = |v: f64| v == 0.0 || v == 1.0;
    if !data.y.iter().all(|&v| is_binary(v)) || !data.x.column(bias_column).iter().all(|&v| is_binary(v)) {
        return Err(Error::InvalidInput("bias column and target must both be binary".into()));
    }
    let mut groups: [Vec<usize>; 4] = Default::default();
    for i in 0..data.len() {
        let b = data.x[[i, bias_column]] as usize;
        let y = data.y[i] as usize;
        groups[b * 2 + y].push(i);
    }
    if let Some(g) = groups.iter().position(Vec::is_empty) {
        return Err(Error::InvalidInput(format!("group (b = {}, y = {}) is empty", g / 2, g % 2)));
    }
    let mut rng = rng_from_seed(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (g, idx) in groups.iter_mut().enumerate() {
        let agrees = g == 0 || g == 3;
        let frac = if agrees { 0.9 } else { alpha };
        idx.shuffle(&mut rng);
        let take = (frac * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..take]);
        test.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.select(&train), data.select(&test)))
}

/// Group counts `[(0,0), (0,1), (1,0), (1,1)]` by `(bias, label)`.
pub fn group_counts(data: &EnvData, bias_column: usize) -> [usize; 4] {
    let mut counts = [0; 4];
    for (row, y) in data.x.axis_iter(Axis(0)).zip(&data.y) {
        counts[(row[bias_column] as usize) * 2 + *y as usize] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::pearson_correlation;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_form_examples() {
        let t = ClosedFormCorrTerms::identity(1);
        assert_abs_diff_eq!(closed_form_corr(&t, 1.0, 0, 0).unwrap(), 1.0 / 3f64.sqrt(), epsilon = 1e-12);
        assert!(closed_form_corr(&t, 1e-9, 0, 0).unwrap().abs() < 1e-8);
        assert!(closed_form_corr(&t, 0.0, 0, 0).is_err());
        let vals: Vec<f64> = [0.1, 1.5, 2.0].iter().map(|&s| closed_form_corr(&t, s, 0, 0).unwrap().abs()).collect();
        assert!(vals[0] < vals[1] && vals[1] < vals[2]);
    }

    #[test]
    fn closed_form_terms_for_general_weights() {
        let w_xy = ndarray::array![[1.0, 0.5], [0.0, 2.0]];
        let w_yx = ndarray::array![[0.3, 0.0], [1.0, 1.0]];
        let t = ClosedFormCorrTerms::from_weights(&w_xy, &w_yx).unwrap();
        let m = w_xy.dot(&w_yx);
        assert_eq!(t.gamma, m.t());
        assert_abs_diff_eq!(t.a_sq[1], m[[1, 0]].powi(2) + m[[1, 1]].powi(2));
        assert_abs_diff_eq!(t.b_sq[0], 1.25);
    }

    #[test]
    fn zero_sigma_rejected() {
        assert!(gen_irm_example(&IrmExampleConfig::new(2, vec![0.0], 1)).is_err());
    }

    #[test]
    fn irm_example_shapes_and_truth() {
        let ex = gen_irm_example(&IrmExampleConfig { n_per_env: 50, ..IrmExampleConfig::new(3, vec![0.1, 1.5], 4) }).unwrap();
        assert_eq!(ex.envs.len(), 2);
        assert_eq!(ex.envs[0].x.dim(), (50, 6));
        assert_eq!(ex.beta_star.to_vec(), vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn generators_are_deterministic() {
        let cfg = SemConfig::risks_of_irm(2, 100, 5);
        let (a, fa) = gen_sem(&cfg).unwrap();
        let (b, fb) = gen_sem(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(fa.environment(3).unwrap(), fb.environment(3).unwrap());
        assert_ne!(fa.environment(3).unwrap(), fa.environment(4).unwrap());
        assert_eq!(gen_toy_2d(20, 1).unwrap(), gen_toy_2d(20, 1).unwrap());
    }

    #[test]
    fn toy_moments() {
        let toy = gen_toy_2d(2000, 3).unwrap();
        let r = pearson_correlation(toy.x.view()).unwrap();
        assert!((r.get(0, 1) - 0.8).abs() < 0.05);
        let x0 = toy.x.column(0);
        let mx = x0.mean().unwrap();
        let my = toy.y.mean().unwrap();
        let cov: f64 = x0.iter().zip(&toy.y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let var: f64 = x0.iter().map(|a| (a - mx) * (a - mx)).sum();
        assert!((cov / var - 1.0).abs() < 0.05);
        assert!(gen_toy_2d(5, 0).is_err());
    }

    #[test]
    fn resample_conserves_groups() {
        let src = gen_biased_source(4000, 3, 2).unwrap();
        let (train, test) = biased_resample(&src, 0, 0.3, 7).unwrap();
        let all = group_counts(&src, 0);
        let tr = group_counts(&train, 0);
        let te = group_counts(&test, 0);
        for g in 0..4 {
            assert_eq!(tr[g] + te[g], all[g]);
        }
    }

    #[test]
    fn small_alpha_plants_spurious_correlation() {
        let src = gen_biased_source(8000, 2, 3).unwrap();
        let (train, _) = biased_resample(&src, 0, 0.01, 1).unwrap();
        let mut m = Array2::<f64>::zeros((train.len(), 2));
        m.column_mut(0).assign(&train.x.column(0));
        m.column_mut(1).assign(&train.y);
        let r = pearson_correlation(m.view()).unwrap();
        assert!(r.get(0, 1) > 0.9, "{}", r.get(0, 1));
    }

    #[test]
    fn no_shift_at_alpha_point_nine() {
        let src = gen_biased_source(8000, 2, 4).unwrap();
        let (train, test) = biased_resample(&src, 0, 0.9, 2).unwrap();
        let tr = group_counts(&train, 0);
        let te = group_counts(&test, 0);
        for g in 0..4 {
            let a = tr[g] as f64 / train.len() as f64;
            let b = te[g] as f64 / test.len() as f64;
            assert!((a - b).abs() < 0.01, "group {g}: {a} vs {b}");
        }
    }

    #[test]
    fn resample_errors() {
        let src = gen_biased_source(100, 1, 0).unwrap();
        assert!(biased_resample(&src, 0, 0.95, 0).is_err());
        assert!(biased_resample(&src, 1, 0.5, 0).is_err());
        let mut one_group = src.clone();
        one_group.x.column_mut(0).fill(0.0);
        assert!(biased_resample(&one_group, 0, 0.5, 0).is_err());
    }
}
