//! Baseline partitioners: uniform random assignment, k-means on the
//! features, and adversarial environment inference against a reference model.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::decorr::draw_environment;
use crate::error::{Error, Result};
use crate::models::{predict, sigmoid, LossKind, ModelParams};
use crate::numerics::DataMatrix;
use crate::partition::Partition;
use crate::rng::{rng_from_seed, sub_seed, Rng};

const RANDOM_RETRIES: usize = 100;

/// Uniform random assignment, redrawn while any environment is empty.
pub fn random_partition(n: usize, k: usize, seed: u64) -> Result<Partition> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    if n < k {
        return Err(Error::InvalidConfig(format!("random partition needs n >= k, got n = {n}, k = {k}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut assignments = vec![0; n];
    for _ in 0..RANDOM_RETRIES {
        assignments.iter_mut().for_each(|a| *a = rng.random_range(0..k));
        let mut sizes = vec![0usize; k];
        assignments.iter().for_each(|&a| sizes[a] += 1);
        if sizes.iter().all(|&s| s > 0) {
            return Partition::new(k, assignments, Vec::new(), seed);
        }
    }
    // Repair the last draw: each empty environment takes one point from a
    // randomly chosen environment that can spare it.
    let mut sizes = vec![0usize; k];
    assignments.iter().for_each(|&a| sizes[a] += 1);
    for env in 0..k {
        if sizes[env] > 0 {
            continue;
        }
        let donors: Vec<usize> = (0..n).filter(|&i| sizes[assignments[i]] > 1).collect();
        let i = donors[rng.random_range(0..donors.len())];
        sizes[assignments[i]] -= 1;
        assignments[i] = env;
        sizes[env] = 1;
    }
    Partition::new(k, assignments, Vec::new(), seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { k: 2, max_iters: 300, restarts: 10, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub partition: Partition,
    pub centroids: Array2<f64>,
    /// Within-cluster sum of squares after each Lloyd iteration of the kept restart.
    pub wcss_trace: Vec<f64>,
    pub converged: bool,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: ArrayView1<'_, f64>, centroids: &Array2<f64>) -> (usize, f64) {
    centroids
        .rows()
        .into_iter()
        .enumerate()
        .map(|(c, row)| (c, sq_dist(x, row)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// k-means++ seeding. When every remaining point coincides with a chosen
/// center the next center is drawn uniformly from unchosen indices.
fn kmeans_pp(x: ArrayView2<'_, f64>, k: usize, rng: &mut Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            if d2[pick] <= 0.0 {
                pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    let mut c = Array2::zeros((k, x.ncols()));
    for (row, &i) in chosen.iter().enumerate() {
        c.row_mut(row).assign(&x.row(i));
    }
    c
}

fn lloyd(x: ArrayView2<'_, f64>, mut centroids: Array2<f64>, max_iters: usize) -> (Vec<usize>, Array2<f64>, Vec<f64>, bool) {
    let n = x.nrows();
    let k = centroids.nrows();
    let mut assign = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters {
        let mut changed = false;
        for i in 0..n {
            let (c, _) = nearest(x.row(i), &centroids);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
        // An emptied cluster takes the point farthest from its own centroid.
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[assign[i]] > 1)
                .max_by(|&a, &b| {
                    sq_dist(x.row(a), centroids.row(assign[a])).total_cmp(&sq_dist(x.row(b), centroids.row(assign[b])))
                });
            if let Some(i) = far {
                counts[assign[i]] -= 1;
                assign[i] = c;
                counts[c] = 1;
            }
        }
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        for i in 0..n {
            let mut row = sums.row_mut(assign[i]);
            row += &x.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
        trace.push(wcss(x, &assign, &centroids));
    }
    (assign, centroids, trace, converged)
}

fn wcss(x: ArrayView2<'_, f64>, assign: &[usize], centroids: &Array2<f64>) -> f64 {
    assign.iter().enumerate().map(|(i, &c)| sq_dist(x.row(i), centroids.row(c))).sum()
}

/// Lloyd's algorithm from k-means++ seeds; the restart with the lowest
/// within-cluster sum of squares is kept. Clusters are the environments.
pub fn kmeans_partition(x: &DataMatrix, k: usize, seed: u64) -> Result<Partition> {
    Ok(kmeans_detailed(x, &KMeansConfig { k, seed, ..KMeansConfig::default() })?.partition)
}

pub fn kmeans_detailed(x: &DataMatrix, cfg: &KMeansConfig) -> Result<KMeansRun> {
    let (n, k) = (x.n(), cfg.k);
    if k == 0 || cfg.restarts == 0 || cfg.max_iters == 0 {
        return Err(Error::InvalidConfig("k, restarts and max_iters must be >= 1".into()));
    }
    if n < k {
        return Err(Error::InvalidConfig(format!("k-means needs n >= k, got n = {n}, k = {k}")));
    }
    let mut best: Option<(f64, KMeansRun)> = None;
    for r in 0..cfg.restarts {
        let mut rng = rng_from_seed(sub_seed(cfg.seed, r as u64));
        let init = kmeans_pp(x.view(), k, &mut rng);
        let (mut assign, centroids, trace, converged) = lloyd(x.view(), init, cfg.max_iters);
        // Coincident points can still leave a cluster empty.
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                let i = (0..n).find(|&i| counts[assign[i]] > 1).expect("n >= k");
                counts[assign[i]] -= 1;
                assign[i] = c;
                counts[c] = 1;
            }
        }
        let score = wcss(x.view(), &assign, &centroids);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            let partition = Partition::new(k, assign, trace.clone(), cfg.seed)?;
            best = Some((score, KMeansRun { partition, centroids, wcss_trace: trace, converged }));
        }
    }
    Ok(best.expect("at least one restart").1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EiilConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Standard deviation of the initial logits of `q`.
    pub init_scale: f64,
}

impl Default for EiilConfig {
    fn default() -> Self {
        Self { steps: 10_000, lr: 0.001, seed: 0, init_scale: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct EiilRun {
    pub partition: Partition,
    /// Final soft assignment to environment 0.
    pub q: Array1<f64>,
    pub initial_objective: f64,
    pub final_objective: f64,
}

/// `g_1^2 + g_2^2` with `g_1 = mean_i q_i h_i`, `g_2 = mean_i (1 - q_i) h_i`
/// where `h_i` is the per-sample derivative of the loss in the dummy scale.
/// Returns the value and its gradient in the logits `s` (`q = sigmoid(s)`).
pub fn eiil_objective(h: &Array1<f64>, logits: &Array1<f64>) -> (f64, Array1<f64>) {
    let n = h.len() as f64;
    let q = logits.mapv(sigmoid);
    let g1 = q.iter().zip(h).map(|(q, h)| q * h).sum::<f64>() / n;
    let g2 = q.iter().zip(h).map(|(q, h)| (1.0 - q) * h).sum::<f64>() / n;
    let grad = Array1::from_shape_fn(h.len(), |i| 2.0 * (g1 - g2) * h[i] * q[i] * (1.0 - q[i]) / n);
    (g1 * g1 + g2 * g2, grad)
}

/// Per-sample `dloss(s f_i, y_i)/ds` at `s = 1`.
fn scale_derivatives(f: &Array1<f64>, y: ArrayView1<'_, f64>, loss: LossKind) -> Array1<f64> {
    Array1::from_shape_fn(f.len(), |i| loss.eval(f[i], y[i]).1 * f[i])
}

/// Two environments that maximally violate the IRMv1 condition for
/// `reference`: Adam ascent on the soft assignment, then a Bernoulli draw.
pub fn eiil_partition(x: &DataMatrix, y: ArrayView1<'_, f64>, cfg: &EiilConfig, reference: &ModelParams) -> Result<Partition> {
    Ok(eiil_detailed(x, y, cfg, reference)?.partition)
}

pub fn eiil_detailed(x: &DataMatrix, y: ArrayView1<'_, f64>, cfg: &EiilConfig, reference: &ModelParams) -> Result<EiilRun> {
    if cfg.steps < 1 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidConfig("EIIL needs steps >= 1 and lr > 0".into()));
    }
    if reference.telemetry.iterations == 0 && !reference.telemetry.closed_form {
        return Err(Error::InvalidInput("EIIL reference model has not been trained".into()));
    }
    if y.len() != x.n() {
        return Err(Error::Dimension(format!("{} targets for {} rows", y.len(), x.n())));
    }
    if reference.loss == LossKind::Bce && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Unsupported("EIIL classification needs binary {0, 1} targets".into()));
    }
    let f = predict(reference, x.view())?;
    let h = scale_derivatives(&f, y, reference.loss);

    let mut rng = rng_from_seed(cfg.seed);
    let mut s = Array1::from_shape_fn(x.n(), |_| cfg.init_scale * { let z: f64 = StandardNormal.sample(&mut rng); z });
    let (initial_objective, _) = eiil_objective(&h, &s);

    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m = Array1::<f64>::zeros(x.n());
    let mut v = Array1::<f64>::zeros(x.n());
    for t in 1..=cfg.steps {
        let (_, grad) = eiil_objective(&h, &s);
        let c1 = 1.0 - f64::powi(b1, t as i32);
        let c2 = 1.0 - f64::powi(b2, t as i32);
        for i in 0..s.len() {
            // ascent: descend on the negated objective
            let g = -grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            s[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
    }
    let (final_objective, _) = eiil_objective(&h, &s);
    let q = s.mapv(sigmoid);

    let mut draw_rng = rng_from_seed(sub_seed(cfg.seed, 1));
    let chosen = draw_environment(&q, 2, &mut draw_rng);
    let mut assignments = vec![1; x.n()];
    chosen.iter().for_each(|&i| assignments[i] = 0);
    let partition = Partition::new(2, assignments, vec![final_objective], cfg.seed)?;
    Ok(EiilRun { partition, q, initial_objective, final_objective })
}
