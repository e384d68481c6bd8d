//! Weighted statistics and the decorrelation objective.
//!
//! Weights act as fractional frequencies: every weighted moment is normalized
//! by the weight total, so integer weights are equivalent to replicating rows.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to each column variance inside the correlation denominator.
pub const CORR_EPS: f64 = 1e-12;

/// Columns whose weighted variance falls below this are reported as degenerate.
pub const DEGENERATE_VAR: f64 = 1e-10;

/// An `n x p` observation matrix with finite entries, `n >= 2`, `p >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(Array2<f64>);

impl DataMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, p) = values.dim();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 rows, got {n}")));
        }
        if p < 1 {
            return Err(Error::InvalidInput("need at least 1 column".into()));
        }
        if let Some(((i, j), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite entry at row {i}, column {j}")));
        }
        Ok(Self(values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((n, p), flat)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(values)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn p(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Rows selected by `indices`, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.0.select(Axis(0), indices))
    }

    /// Column-wise z-scores using the population standard deviation.
    /// Constant columns are only centered.
    pub fn standardized(&self) -> Self {
        let (mean, sd) = column_mean_sd(self.0.view());
        let mut out = self.0.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let s = if sd[j] > 0.0 { sd[j] } else { 1.0 };
            col.mapv_inplace(|v| (v - mean[j]) / s);
        }
        Self(out)
    }
}

/// Column means and population standard deviations.
pub fn column_mean_sd(x: ArrayView2<'_, f64>) -> (Array1<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mean = x.sum_axis(Axis(0)) / n;
    let mut var = Array1::<f64>::zeros(x.ncols());
    for row in x.rows() {
        for (j, v) in row.iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    (mean, var.mapv(|v| (v / n).sqrt()))
}

/// Per-sample inclusion probabilities bounded to `[p0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    w: Array1<f64>,
    p0: f64,
}

impl WeightVector {
    pub fn new(w: Array1<f64>, p0: f64) -> Result<Self> {
        if !(p0 > 0.0 && p0 < 1.0) {
            return Err(Error::InvalidConfig(format!("p0 must lie in (0, 1), got {p0}")));
        }
        if let Some((i, v)) = w.iter().enumerate().find(|(_, &v)| !(p0..=1.0).contains(&v)) {
            return Err(Error::InvalidInput(format!("weight {i} = {v} outside [{p0}, 1]")));
        }
        Ok(Self { w, p0 })
    }

    /// Weights clamped into `[p0, 1]`.
    pub fn clamped(mut w: Array1<f64>, p0: f64) -> Result<Self> {
        w.mapv_inplace(|v| v.clamp(p0, 1.0));
        Self::new(w, p0)
    }

    pub fn uniform(n: usize, value: f64, p0: f64) -> Result<Self> {
        Self::new(Array1::from_elem(n, value), p0)
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.w
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.w.view()
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.w.mean().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.w.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.w.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.w
    }
}

/// Symmetric `p x p` weighted correlation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub r: Array2<f64>,
    /// Columns whose weighted variance was below [`DEGENERATE_VAR`].
    pub degenerate_columns: Vec<usize>,
}

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.r[[i, j]]
    }

    pub fn is_degenerate(&self) -> bool {
        !self.degenerate_columns.is_empty()
    }
}

fn check_weights(n: usize, w: ArrayView1<'_, f64>) -> Result<f64> {
    if w.len() != n {
        return Err(Error::Dimension(format!("{} weights for {} rows", w.len(), n)));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
    }
    let total: f64 = w.sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("weights sum to zero".into()));
    }
    Ok(total)
}

fn weighted_mean_raw(x: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>, total: f64) -> Array1<f64> {
    w.dot(&x) / total
}

/// Weighted column means `sum_i w_i x_ij / sum_i w_i`.
pub fn weighted_mean(x: &DataMatrix, w: &WeightVector) -> Result<Array1<f64>> {
    weighted_mean_view(x.view(), w.view())
}

/// [`weighted_mean`] on raw views; weights need only be non-negative with a positive sum.
pub fn weighted_mean_view(x: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let total = check_weights(x.nrows(), w)?;
    Ok(weighted_mean_raw(x, w, total))
}

struct Moments {
    total: f64,
    centered: Array2<f64>,
    cov: Array2<f64>,
}

fn weighted_moments(x: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>) -> Result<Moments> {
    let total = check_weights(x.nrows(), w)?;
    let mu = weighted_mean_raw(x, w, total);
    let centered = &x - &mu;
    let mut scaled = centered.clone();
    for (mut row, wi) in scaled.rows_mut().into_iter().zip(w.iter()) {
        row *= *wi;
    }
    let cov = centered.t().dot(&scaled) / total;
    Ok(Moments { total, centered, cov })
}

fn correlation_from_cov(cov: &Array2<f64>) -> CorrelationMatrix {
    let p = cov.nrows();
    let s: Vec<f64> = (0..p).map(|j| cov[[j, j]] + CORR_EPS).collect();
    let mut r = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        for k in j..p {
            let v = cov[[j, k]] / (s[j] * s[k]).sqrt();
            r[[j, k]] = v;
            r[[k, j]] = v;
        }
    }
    let degenerate_columns = (0..p).filter(|&j| cov[[j, j]] < DEGENERATE_VAR).collect();
    CorrelationMatrix { r, degenerate_columns }
}

/// Weighted Pearson correlation with the frequency-weight convention.
pub fn weighted_correlation(x: &DataMatrix, w: &WeightVector) -> Result<CorrelationMatrix> {
    weighted_correlation_view(x.view(), w.view())
}

pub fn weighted_correlation_view(
    x: ArrayView2<'_, f64>,
    w: ArrayView1<'_, f64>,
) -> Result<CorrelationMatrix> {
    let m = weighted_moments(x, w)?;
    let corr = correlation_from_cov(&m.cov);
    if corr.is_degenerate() {
        log::warn!("near-constant columns under weights: {:?}", corr.degenerate_columns);
    }
    Ok(corr)
}

/// Unweighted Pearson correlation.
pub fn pearson_correlation(x: ArrayView2<'_, f64>) -> Result<CorrelationMatrix> {
    let ones = Array1::<f64>::ones(x.nrows());
    weighted_correlation_view(x, ones.view())
}

/// `sum_ij (r_ij - delta_ij)^2`.
pub fn frobenius_dist_sq(r: &CorrelationMatrix) -> f64 {
    frobenius_dist_sq_raw(&r.r)
}

fn frobenius_dist_sq_raw(r: &Array2<f64>) -> f64 {
    r.indexed_iter()
        .map(|((i, j), v)| {
            let d = if i == j { v - 1.0 } else { *v };
            d * d
        })
        .sum()
}

/// Value and weight-gradient of the decorrelation objective.
#[derive(Debug, Clone)]
pub struct DecorrObjective {
    pub loss: f64,
    /// The `d^2(R^w, I)` part of `loss`.
    pub corr_term: f64,
    pub grad: Array1<f64>,
    /// Set when some column had near-zero weighted variance; gradient terms
    /// through those columns were zeroed.
    pub degenerate: bool,
}

/// `d^2(R^w, I) + lambda * (mean(w) - target_mean)^2` and its exact gradient in `w`.
pub fn decorr_loss_and_grad(
    x: &DataMatrix,
    w: &WeightVector,
    lambda: f64,
    target_mean: f64,
) -> Result<DecorrObjective> {
    if !(target_mean > 0.0 && target_mean <= 1.0) {
        return Err(Error::InvalidConfig(format!("target mean {target_mean} outside (0, 1]")));
    }
    decorr_objective(x.view(), w.view(), lambda, target_mean)
}

/// Unchecked-bounds variant of [`decorr_loss_and_grad`]: `w` only needs to be
/// non-negative with a positive sum.
///
/// With `z_i = x_i - mu`, `c_jk` the weighted covariance and `s_j = c_jj + eps`,
/// the covariance derivative is `dc_jk/dw_i = (z_ij z_ik - c_jk) / W`; the mean
/// terms drop out because `sum_i w_i z_i = 0`. Collecting the chain rule through
/// `r_jk = c_jk / sqrt(s_j s_k)` into a symmetric `p x p` matrix `M` gives
/// `dL/dw_i = (z_i' M z_i - <M, C>) / W`.
pub fn decorr_objective(
    x: ArrayView2<'_, f64>,
    w: ArrayView1<'_, f64>,
    lambda: f64,
    target_mean: f64,
) -> Result<DecorrObjective> {
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    let n = x.nrows();
    let p = x.ncols();
    let m = weighted_moments(x, w)?;
    let corr = correlation_from_cov(&m.cov);
    let corr_term = frobenius_dist_sq_raw(&corr.r);

    let s: Vec<f64> = (0..p).map(|j| m.cov[[j, j]] + CORR_EPS).collect();
    let degenerate: Vec<bool> = (0..p).map(|j| m.cov[[j, j]] < DEGENERATE_VAR).collect();

    // dL/dc_jk over ordered pairs.
    let mut mat = Array2::<f64>::zeros((p, p));
    for j in 0..p {
        for k in 0..p {
            let resid = corr.r[[j, k]] - if j == k { 1.0 } else { 0.0 };
            mat[[j, k]] = 2.0 * resid / (s[j] * s[k]).sqrt();
        }
    }
    for j in 0..p {
        let b: f64 = (0..p)
            .map(|k| {
                let resid = corr.r[[j, k]] - if j == k { 1.0 } else { 0.0 };
                2.0 * resid * corr.r[[j, k]]
            })
            .sum::<f64>()
            / s[j];
        mat[[j, j]] -= b;
    }
    for j in (0..p).filter(|&j| degenerate[j]) {
        mat.row_mut(j).fill(0.0);
        mat.column_mut(j).fill(0.0);
    }

    let inner: f64 = (&mat * &m.cov).sum();
    let zm = m.centered.dot(&mat);
    let mut grad = Array1::<f64>::zeros(n);
    for (i, g) in grad.iter_mut().enumerate() {
        let quad = zm.row(i).dot(&m.centered.row(i));
        *g = (quad - inner) / m.total;
    }

    let mean_w = w.sum() / n as f64;
    let gap = mean_w - target_mean;
    let loss = corr_term + lambda * gap * gap;
    let pen_grad = 2.0 * lambda * gap / n as f64;
    grad.mapv_inplace(|g| g + pen_grad);

    Ok(DecorrObjective {
        loss,
        corr_term,
        grad,
        degenerate: degenerate.iter().any(|&d| d),
    })
}

/// Cholesky solve of `a x = b` for symmetric positive-definite `a`.
/// Returns `None` when `a` is not numerically positive definite.
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return None;
    }
    let scale = (0..n).map(|i| a[[i, i]].abs()).fold(0.0, f64::max).max(1.0);
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 1e-13 * scale {
                    return None;
                }
                l[[i, i]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    Some(x)
}
