use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Squared error on real-valued targets.
    Mse,
    /// Binary cross-entropy on logits, targets in {0, 1}.
    Bce,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LossKind {
    /// Per-sample loss and its first and second derivatives in the output `f`.
    #[inline]
    pub fn eval(self, f: f64, y: f64) -> (f64, f64, f64) {
        match self {
            LossKind::Mse => {
                let r = f - y;
                (r * r, 2.0 * r, 2.0)
            }
            LossKind::Bce => {
                let s = sigmoid(f);
                (softplus(f) - y * f, s - y, s * (1.0 - s))
            }
        }
    }

    pub fn mean_loss(self, f: &[f64], y: &[f64]) -> f64 {
        f.iter().zip(y).map(|(&fi, &yi)| self.eval(fi, yi).0).sum::<f64>() / f.len() as f64
    }
}

/// IRMv1 penalty: the squared derivative of the mean risk of `s * f` in the
/// dummy scale `s`, at `s = 1`.
pub fn irmv1_penalty(f: &[f64], y: &[f64], loss: LossKind) -> Result<f64> {
    if f.len() != y.len() {
        return Err(Error::Dimension(format!("{} outputs vs {} targets", f.len(), y.len())));
    }
    if f.is_empty() {
        return Err(Error::InvalidInput("empty environment".into()));
    }
    let g = irmv1_scale_grad(f, y, loss);
    Ok(g * g)
}

/// `d/ds mean_i loss(s f_i, y_i)` at `s = 1`.
pub(crate) fn irmv1_scale_grad(f: &[f64], y: &[f64], loss: LossKind) -> f64 {
    f.iter().zip(y).map(|(&fi, &yi)| loss.eval(fi, yi).1 * fi).sum::<f64>() / f.len() as f64
}
