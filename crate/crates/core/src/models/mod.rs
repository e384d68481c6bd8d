//! ERM, IRMv1 and V-REx learners for linear, logistic and two-hidden-layer
//! MLP predictors, trained full-batch with Adam.

mod loss;
mod net;

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::solve_spd;
use crate::rng::{rng_from_seed, Rng};

pub use loss::{irmv1_penalty, sigmoid, LossKind};
pub use net::mlp_hidden_size;
use net::{Arch, DropoutMasks};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Logistic,
    Mlp,
}

impl ModelKind {
    /// Loss used for linear and logistic models; the MLP takes either.
    pub fn default_loss(self) -> LossKind {
        match self {
            ModelKind::Linear => LossKind::Mse,
            ModelKind::Logistic => LossKind::Bce,
            ModelKind::Mlp => LossKind::Bce,
        }
    }
}

/// One training environment: features and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvData {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl EnvData {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!("{} rows vs {} targets", x.nrows(), y.len())));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self { x: self.x.select(Axis(0), indices), y: self.y.select(Axis(0), indices) }
    }

    /// Stacks environments row-wise.
    pub fn pooled(envs: &[EnvData]) -> Result<Self> {
        if envs.is_empty() {
            return Err(Error::InvalidInput("no environments".into()));
        }
        let xs: Vec<_> = envs.iter().map(|e| e.x.view()).collect();
        let ys: Vec<_> = envs.iter().map(|e| e.y.view()).collect();
        let x = concatenate(Axis(0), &xs).map_err(|e| Error::Dimension(e.to_string()))?;
        let y = concatenate(Axis(0), &ys).map_err(|e| Error::Dimension(e.to_string()))?;
        Ok(Self { x, y })
    }

    /// Splits `self` by the environment ids in `assignments`.
    pub fn split(&self, k: usize, assignments: &[usize]) -> Result<Vec<EnvData>> {
        if assignments.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} assignments for {} rows",
                assignments.len(),
                self.len()
            )));
        }
        let mut groups = vec![Vec::new(); k];
        for (i, &e) in assignments.iter().enumerate() {
            groups.get_mut(e).ok_or_else(|| Error::InvalidInput(format!("environment {e} >= k")))?.push(i);
        }
        Ok(groups.iter().filter(|g| !g.is_empty()).map(|g| self.select(g)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Penalty weight for IRMv1 / V-REx.
    pub beta: f64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Weight of the squared-norm penalty on non-bias parameters.
    pub l2: f64,
    pub n_iter: usize,
    pub dropout_p: f64,
    /// Iterations trained with the invariance penalty switched off.
    pub warmup: usize,
    pub seed: u64,
    /// Solve linear ERM by the normal equations instead of Adam.
    pub closed_form: bool,
    /// Validation cadence when early stopping is requested.
    pub checkpoint_every: usize,
    /// Objective values are recorded every this many iterations.
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 1e4,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            l2: 1e-3,
            n_iter: 20_000,
            dropout_p: 0.5,
            warmup: 100,
            seed: 0,
            closed_form: false,
            checkpoint_every: 100,
            trace_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.beta >= 0.0) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.n_iter < 1 {
            return bad("n_iter must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.l2 >= 0.0) {
            return bad(format!("l2 must be >= 0, got {}", self.l2));
        }
        if self.checkpoint_every == 0 || self.trace_every == 0 {
            return bad("checkpoint_every and trace_every must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub iterations: usize,
    pub final_objective: f64,
    pub objective_trace: Vec<f64>,
    pub best_iteration: Option<usize>,
    pub best_validation_error: Option<f64>,
    pub closed_form: bool,
}

/// A trained predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub loss: LossKind,
    pub input_dim: usize,
    pub hidden_size: Option<usize>,
    /// Parameter-block shapes in the order they appear in `weights`.
    pub shapes: Vec<[usize; 2]>,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub telemetry: Telemetry,
}

impl ModelParams {
    fn arch(&self) -> Arch {
        match (self.kind, self.hidden_size) {
            (ModelKind::Mlp, Some(h)) => Arch::Mlp { p: self.input_dim, h },
            _ => Arch::Affine { p: self.input_dim },
        }
    }

    /// Zero-initialized model of the given kind.
    pub fn zeros(kind: ModelKind, loss: LossKind, input_dim: usize) -> Self {
        let arch = arch_for(kind, input_dim);
        Self {
            kind,
            loss,
            input_dim,
            hidden_size: hidden_of(arch),
            shapes: arch.shapes(),
            weights: vec![0.0; arch.n_params()],
            telemetry: Telemetry::default(),
        }
    }

    /// Coefficients of a linear or logistic model, without the intercept.
    pub fn coefficients(&self) -> Option<&[f64]> {
        match self.kind {
            ModelKind::Mlp => None,
            _ => Some(&self.weights[..self.input_dim]),
        }
    }

    pub fn intercept(&self) -> Option<f64> {
        match self.kind {
            ModelKind::Mlp => None,
            _ => Some(self.weights[self.input_dim]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let arch = self.arch();
        if self.kind == ModelKind::Mlp && self.hidden_size.is_none() {
            return Err(Error::InvalidInput("mlp model without hidden size".into()));
        }
        if self.weights.len() != arch.n_params() {
            return Err(Error::Dimension(format!(
                "expected {} weights, found {}",
                arch.n_params(),
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("non-finite model weight".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}

fn arch_for(kind: ModelKind, p: usize) -> Arch {
    match kind {
        ModelKind::Mlp => Arch::Mlp { p, h: mlp_hidden_size(p) },
        _ => Arch::Affine { p },
    }
}

fn hidden_of(arch: Arch) -> Option<usize> {
    match arch {
        Arch::Mlp { h, .. } => Some(h),
        Arch::Affine { .. } => None,
    }
}

/// Raw outputs: regression values, or logits for classification.
pub fn predict(model: &ModelParams, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if x.ncols() != model.input_dim {
        return Err(Error::Dimension(format!(
            "model expects {} features, got {}",
            model.input_dim,
            x.ncols()
        )));
    }
    let (f, _) = net::forward(model.arch(), &model.weights, x, None);
    Ok(f)
}

/// Class decisions in {0, 1}; a logit of exactly 0 maps to class 0.
pub fn predict_labels(model: &ModelParams, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    Ok(predict(model, x)?.mapv(|f| if f > 0.0 { 1.0 } else { 0.0 }))
}

/// 0-1 error for classifiers, mean squared error for regressors.
pub fn prediction_error(model: &ModelParams, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    let f = predict(model, x)?;
    if f.len() != y.len() {
        return Err(Error::Dimension(format!("{} outputs vs {} targets", f.len(), y.len())));
    }
    if f.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let n = f.len() as f64;
    Ok(match model.loss {
        LossKind::Bce => {
            f.iter().zip(y).filter(|(&fi, &yi)| (fi > 0.0) != (yi > 0.5)).count() as f64 / n
        }
        LossKind::Mse => f.iter().zip(y).map(|(fi, yi)| (fi - yi) * (fi - yi)).sum::<f64>() / n,
    })
}

/// Which invariance term is added to the pooled risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Erm,
    Irmv1,
    Vrex,
}

/// Minimizes the pooled average loss plus the L2 term.
pub fn fit_erm(envs: &[EnvData], kind: ModelKind, loss: LossKind, cfg: &TrainConfig) -> Result<ModelParams> {
    if cfg.closed_form && kind == ModelKind::Linear && loss == LossKind::Mse {
        let pooled = EnvData::pooled(envs)?;
        match ridge_normal_equations(pooled.x.view(), pooled.y.view(), cfg.l2) {
            Some(w) => {
                let mut m = ModelParams::zeros(kind, loss, pooled.x.ncols());
                m.weights = w.to_vec();
                m.telemetry.closed_form = true;
                m.validate()?;
                return Ok(m);
            }
            None => log::warn!("singular normal equations, falling back to gradient training"),
        }
    }
    train(envs, kind, loss, Objective::Erm, cfg, None)
}

/// Pooled risk plus `beta * sum_e penalty_e`, the penalty switched on after `cfg.warmup` iterations.
pub fn fit_irmv1(envs: &[EnvData], kind: ModelKind, loss: LossKind, cfg: &TrainConfig) -> Result<ModelParams> {
    if envs.len() < 2 {
        log::warn!("IRMv1 with a single environment: the penalty cannot compare environments");
    }
    train(envs, kind, loss, Objective::Irmv1, cfg, None)
}

/// Pooled risk plus `beta * Var_e(R^e)`.
pub fn fit_vrex(envs: &[EnvData], kind: ModelKind, loss: LossKind, cfg: &TrainConfig) -> Result<ModelParams> {
    if envs.len() < 2 {
        return Err(Error::InvalidInput("V-REx needs at least two environments".into()));
    }
    train(envs, kind, loss, Objective::Vrex, cfg, None)
}

/// Solves `(X1'X1 / n + l2 D) w = X1'y / n` where `X1 = [X, 1]` and `D`
/// leaves the intercept unpenalized.
pub fn ridge_normal_equations(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, l2: f64) -> Option<Array1<f64>> {
    let (n, p) = x.dim();
    let ones = Array2::<f64>::ones((n, 1));
    let xa = concatenate(Axis(1), &[x, ones.view()]).ok()?;
    let mut gram = xa.t().dot(&xa) / n as f64;
    for j in 0..p {
        gram[[j, j]] += l2;
    }
    let rhs = xa.t().dot(&y) / n as f64;
    solve_spd(&gram, &rhs)
}

/// Full-batch Adam on the chosen objective. With `validation`, the
/// parameters at the checkpoint with the lowest validation error are
/// returned; ties keep the earliest checkpoint.
pub fn train(
    envs: &[EnvData],
    kind: ModelKind,
    loss: LossKind,
    objective: Objective,
    cfg: &TrainConfig,
    validation: Option<&EnvData>,
) -> Result<ModelParams> {
    cfg.validate()?;
    if envs.is_empty() {
        return Err(Error::InvalidInput("no training environments".into()));
    }
    if let Some((e, _)) = envs.iter().enumerate().find(|(_, e)| e.is_empty()) {
        return Err(Error::InvalidInput(format!("training environment {e} is empty")));
    }
    let p = envs[0].x.ncols();
    if envs.iter().any(|e| e.x.ncols() != p) {
        return Err(Error::Dimension("environments disagree on feature count".into()));
    }
    if kind == ModelKind::Linear && loss != LossKind::Mse || kind == ModelKind::Logistic && loss != LossKind::Bce {
        return Err(Error::Unsupported(format!("{kind:?} model with {loss:?} loss")));
    }
    if loss == LossKind::Bce && envs.iter().any(|e| e.y.iter().any(|&v| v != 0.0 && v != 1.0)) {
        return Err(Error::InvalidInput("classification targets must be 0 or 1".into()));
    }

    let pooled = EnvData::pooled(envs)?;
    let bounds = env_bounds(envs);
    let n = pooled.len();
    let arch = arch_for(kind, p);
    let mut rng: Rng = rng_from_seed(cfg.seed);
    let mut theta = net::init_params(arch, &mut rng);
    let bias = arch.bias_mask();
    let use_dropout = kind == ModelKind::Mlp && cfg.dropout_p > 0.0;
    let h = hidden_of(arch).unwrap_or(0);

    let mut adam = Adam::new(theta.len(), cfg);
    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut objective_value = f64::NAN;

    let consider_checkpoint = |theta: &[f64], it: usize, best: &mut Option<(f64, usize, Vec<f64>)>| -> Result<()> {
        if let Some(val) = validation {
            let m = ModelParams {
                kind,
                loss,
                input_dim: p,
                hidden_size: hidden_of(arch),
                shapes: arch.shapes(),
                weights: theta.to_vec(),
                telemetry: Telemetry::default(),
            };
            let err = prediction_error(&m, val.x.view(), val.y.view())?;
            if best.as_ref().is_none_or(|(b, _, _)| err < *b) {
                *best = Some((err, it, theta.to_vec()));
            }
        }
        Ok(())
    };

    let batch = Batch { arch, x: pooled.x.view(), y: pooled.y.view(), bounds: &bounds, loss, bias: &bias };
    for it in 0..cfg.n_iter {
        let masks = use_dropout.then(|| DropoutMasks::draw(n, h, cfg.dropout_p, &mut rng));
        let penalty_weight = if it >= cfg.warmup { cfg.beta } else { 0.0 };
        let (value, grad) = batch.evaluate(&theta, objective, penalty_weight, cfg.l2, masks.as_ref());
        if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: it, reason: "non-finite objective or gradient".into() });
        }
        objective_value = value;
        if it % cfg.trace_every == 0 {
            trace.push(value);
        }
        if it % cfg.checkpoint_every == 0 {
            consider_checkpoint(&theta, it, &mut best)?;
        }
        adam.step(&mut theta, &grad);
    }
    consider_checkpoint(&theta, cfg.n_iter, &mut best)?;

    let mut telemetry = Telemetry {
        iterations: cfg.n_iter,
        final_objective: objective_value,
        objective_trace: trace,
        ..Telemetry::default()
    };
    if let Some((err, it, w)) = best {
        telemetry.best_iteration = Some(it);
        telemetry.best_validation_error = Some(err);
        theta = w;
    }
    let model = ModelParams {
        kind,
        loss,
        input_dim: p,
        hidden_size: hidden_of(arch),
        shapes: arch.shapes(),
        weights: theta,
        telemetry,
    };
    model.validate()?;
    Ok(model)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: cfg.lr,
            b1: cfg.adam_beta1,
            b2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        for j in 0..theta.len() {
            self.m[j] = self.b1 * self.m[j] + (1.0 - self.b1) * grad[j];
            self.v[j] = self.b2 * self.v[j] + (1.0 - self.b2) * grad[j] * grad[j];
            let mhat = self.m[j] / c1;
            let vhat = self.v[j] / c2;
            theta[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Full-batch view of the pooled training data.
struct Batch<'a> {
    arch: Arch,
    x: ArrayView2<'a, f64>,
    y: ArrayView1<'a, f64>,
    /// Row ranges of each environment in `x`.
    bounds: &'a [(usize, usize)],
    loss: LossKind,
    bias: &'a [bool],
}

impl Batch<'_> {
    /// Objective value and parameter gradient. The risk is the pooled average
    /// loss; `penalty_weight` scales the invariance term.
    fn evaluate(
        &self,
        theta: &[f64],
        objective: Objective,
        penalty_weight: f64,
        l2: f64,
        masks: Option<&DropoutMasks>,
    ) -> (f64, Vec<f64>) {
        let (f, cache) = net::forward(self.arch, theta, self.x, masks);
        let n = f.len();
        let mut per_sample = Array1::<f64>::zeros(n);
        let mut dl = Array1::<f64>::zeros(n);
        let mut dl2 = Array1::<f64>::zeros(n);
        for i in 0..n {
            let (l, d1, d2) = self.loss.eval(f[i], self.y[i]);
            per_sample[i] = l;
            dl[i] = d1;
            dl2[i] = d2;
        }
        let mut value = per_sample.sum() / n as f64;
        let mut g = &dl / n as f64;

        if penalty_weight > 0.0 {
            match objective {
                Objective::Erm => {}
                Objective::Irmv1 => {
                    for &(lo, hi) in self.bounds {
                        let ne = (hi - lo) as f64;
                        let ge: f64 = (lo..hi).map(|i| dl[i] * f[i]).sum::<f64>() / ne;
                        value += penalty_weight * ge * ge;
                        let scale = penalty_weight * 2.0 * ge / ne;
                        for i in lo..hi {
                            g[i] += scale * (dl2[i] * f[i] + dl[i]);
                        }
                    }
                }
                Objective::Vrex => {
                    let e = self.bounds.len() as f64;
                    let risks: Vec<f64> = self
                        .bounds
                        .iter()
                        .map(|&(lo, hi)| per_sample.slice(ndarray::s![lo..hi]).sum() / (hi - lo) as f64)
                        .collect();
                    let mean = risks.iter().sum::<f64>() / e;
                    value += penalty_weight * risks.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / e;
                    for (&(lo, hi), r) in self.bounds.iter().zip(&risks) {
                        let scale = penalty_weight * 2.0 * (r - mean) / e / (hi - lo) as f64;
                        for i in lo..hi {
                            g[i] += scale * dl[i];
                        }
                    }
                }
            }
        }

        let mut grad = net::backward(self.arch, theta, self.x, &cache, masks, &g);
        if l2 > 0.0 {
            for ((gj, &tj), &is_bias) in grad.iter_mut().zip(theta).zip(self.bias) {
                if !is_bias {
                    value += l2 * tj * tj;
                    *gj += 2.0 * l2 * tj;
                }
            }
        }
        (value, grad)
    }
}

fn env_bounds(envs: &[EnvData]) -> Vec<(usize, usize)> {
    envs.iter()
        .scan(0, |start, e| {
            let b = (*start, *start + e.len());
            *start += e.len();
            Some(b)
        })
        .collect()
}

/// Training objective and its gradient at `model`'s weights, dropout off and
/// the penalty at full weight `beta`. Used for gradient checks.
pub fn objective_and_gradient(
    model: &ModelParams,
    envs: &[EnvData],
    objective: Objective,
    beta: f64,
    l2: f64,
) -> Result<(f64, Vec<f64>)> {
    model.validate()?;
    let pooled = EnvData::pooled(envs)?;
    if pooled.x.ncols() != model.input_dim {
        return Err(Error::Dimension("feature count differs from model".into()));
    }
    let bounds = env_bounds(envs);
    let arch = model.arch();
    let bias = arch.bias_mask();
    let batch = Batch { arch, x: pooled.x.view(), y: pooled.y.view(), bounds: &bounds, loss: model.loss, bias: &bias };
    Ok(batch.evaluate(&model.weights, objective, beta, l2, None))
}

/// Randomly initialized model, as `train` would start it.
pub fn init_model(kind: ModelKind, loss: LossKind, input_dim: usize, seed: u64) -> ModelParams {
    let arch = arch_for(kind, input_dim);
    let mut rng = rng_from_seed(seed);
    let mut m = ModelParams::zeros(kind, loss, input_dim);
    m.weights = net::init_params(arch, &mut rng);
    m
}
