//! Forward and backward passes over a flat parameter vector.
//!
//! Linear and logistic models store `[coef_0 .. coef_{p-1}, intercept]`.
//! The MLP stores `W1 (h x p), b1, W2 (h x h), b2, w3 (h), b3` row-major.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Arch {
    Affine { p: usize },
    Mlp { p: usize, h: usize },
}

impl Arch {
    pub fn n_params(self) -> usize {
        match self {
            Arch::Affine { p } => p + 1,
            Arch::Mlp { p, h } => h * p + h + h * h + h + h + 1,
        }
    }

    /// Parameter-block shapes in storage order.
    pub fn shapes(self) -> Vec<[usize; 2]> {
        match self {
            Arch::Affine { p } => vec![[p, 1], [1, 1]],
            Arch::Mlp { p, h } => vec![[h, p], [h, 1], [h, h], [h, 1], [1, h], [1, 1]],
        }
    }

    /// `true` for entries that are biases (excluded from the L2 term).
    pub fn bias_mask(self) -> Vec<bool> {
        let mut mask = vec![false; self.n_params()];
        match self {
            Arch::Affine { p } => mask[p] = true,
            Arch::Mlp { p, h } => {
                let o = MlpOffsets::new(p, h);
                mask[o.b1..o.b1 + h].iter_mut().for_each(|m| *m = true);
                mask[o.b2..o.b2 + h].iter_mut().for_each(|m| *m = true);
                mask[o.b3] = true;
            }
        }
        mask
    }
}

#[derive(Debug, Clone, Copy)]
struct MlpOffsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

impl MlpOffsets {
    fn new(p: usize, h: usize) -> Self {
        let w1 = 0;
        let b1 = w1 + h * p;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + h;
        Self { w1, b1, w2, b2, w3, b3 }
    }
}

/// Dropout keep-masks for one full-batch step, already scaled by `1 / (1 - p)`.
pub(crate) struct DropoutMasks {
    pub m1: Array2<f64>,
    pub m2: Array2<f64>,
}

impl DropoutMasks {
    pub fn draw(n: usize, h: usize, drop_p: f64, rng: &mut Rng) -> Self {
        let keep = 1.0 / (1.0 - drop_p);
        let mut draw = || Array2::from_shape_fn((n, h), |_| if rng.random::<f64>() < drop_p { 0.0 } else { keep });
        let m1 = draw();
        let m2 = draw();
        Self { m1, m2 }
    }
}

/// Intermediate activations kept for the backward pass.
pub(crate) enum Cache {
    Affine,
    Mlp { h1: Array2<f64>, d1: Array2<f64>, h2: Array2<f64>, d2: Array2<f64> },
}

fn mlp_blocks<'a>(
    theta: &'a [f64],
    p: usize,
    h: usize,
) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>, ArrayView2<'a, f64>, ArrayView1<'a, f64>, ArrayView1<'a, f64>, f64) {
    let o = MlpOffsets::new(p, h);
    let w1 = ArrayView2::from_shape((h, p), &theta[o.w1..o.b1]).expect("w1 shape");
    let b1 = ArrayView1::from(&theta[o.b1..o.w2]);
    let w2 = ArrayView2::from_shape((h, h), &theta[o.w2..o.b2]).expect("w2 shape");
    let b2 = ArrayView1::from(&theta[o.b2..o.w3]);
    let w3 = ArrayView1::from(&theta[o.w3..o.b3]);
    (w1, b1, w2, b2, w3, theta[o.b3])
}

pub(crate) fn forward(
    arch: Arch,
    theta: &[f64],
    x: ArrayView2<'_, f64>,
    dropout: Option<&DropoutMasks>,
) -> (Array1<f64>, Cache) {
    match arch {
        Arch::Affine { p } => {
            let coef = ArrayView1::from(&theta[..p]);
            (x.dot(&coef) + theta[p], Cache::Affine)
        }
        Arch::Mlp { p, h } => {
            let (w1, b1, w2, b2, w3, b3) = mlp_blocks(theta, p, h);
            let mut h1 = x.dot(&w1.t());
            h1 += &b1;
            h1.mapv_inplace(f64::tanh);
            let d1 = match dropout {
                Some(m) => &h1 * &m.m1,
                None => h1.clone(),
            };
            let mut h2 = d1.dot(&w2.t());
            h2 += &b2;
            h2.mapv_inplace(f64::tanh);
            let d2 = match dropout {
                Some(m) => &h2 * &m.m2,
                None => h2.clone(),
            };
            let out = d2.dot(&w3) + b3;
            (out, Cache::Mlp { h1, d1, h2, d2 })
        }
    }
}

/// Gradient of `sum_i g_i f_i` in the parameters, where `g = dL/df`.
pub(crate) fn backward(
    arch: Arch,
    theta: &[f64],
    x: ArrayView2<'_, f64>,
    cache: &Cache,
    dropout: Option<&DropoutMasks>,
    g: &Array1<f64>,
) -> Vec<f64> {
    let mut grad = vec![0.0; arch.n_params()];
    match (arch, cache) {
        (Arch::Affine { p }, _) => {
            let gc = g.dot(&x);
            grad[..p].copy_from_slice(gc.as_slice().expect("contiguous"));
            grad[p] = g.sum();
        }
        (Arch::Mlp { p, h }, Cache::Mlp { h1, d1, h2, d2 }) => {
            let o = MlpOffsets::new(p, h);
            let (_, _, w2, _, w3, _) = mlp_blocks(theta, p, h);

            let gw3 = g.dot(d2);
            grad[o.w3..o.b3].copy_from_slice(gw3.as_slice().expect("contiguous"));
            grad[o.b3] = g.sum();

            // d(d2) = g w3^T, then back through dropout and tanh.
            let gcol = g.view().insert_axis(Axis(1));
            let mut da2 = gcol.dot(&w3.insert_axis(Axis(0)));
            if let Some(m) = dropout {
                da2 *= &m.m2;
            }
            da2.zip_mut_with(h2, |d, &a| *d *= 1.0 - a * a);
            let gw2 = da2.t().dot(d1);
            grad[o.w2..o.b2].copy_from_slice(gw2.as_standard_layout().as_slice().expect("contiguous"));
            let gb2 = da2.sum_axis(Axis(0));
            grad[o.b2..o.w3].copy_from_slice(gb2.as_slice().expect("contiguous"));

            let mut da1 = da2.dot(&w2);
            if let Some(m) = dropout {
                da1 *= &m.m1;
            }
            da1.zip_mut_with(h1, |d, &a| *d *= 1.0 - a * a);
            let gw1 = da1.t().dot(&x);
            grad[o.w1..o.b1].copy_from_slice(gw1.as_standard_layout().as_slice().expect("contiguous"));
            let gb1 = da1.sum_axis(Axis(0));
            grad[o.b1..o.w2].copy_from_slice(gb1.as_slice().expect("contiguous"));
        }
        (Arch::Mlp { .. }, Cache::Affine) => unreachable!("cache does not match architecture"),
    }
    grad
}

/// Default-style uniform init `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for the
/// MLP; affine models start at zero.
pub(crate) fn init_params(arch: Arch, rng: &mut Rng) -> Vec<f64> {
    match arch {
        Arch::Affine { .. } => vec![0.0; arch.n_params()],
        Arch::Mlp { p, h } => {
            let o = MlpOffsets::new(p, h);
            let mut theta = vec![0.0; arch.n_params()];
            let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
                let b = 1.0 / (fan_in as f64).sqrt();
                for v in &mut theta[range] {
                    *v = rng.random_range(-b..b);
                }
            };
            fill(o.w1..o.b1, p);
            fill(o.b1..o.w2, p);
            fill(o.w2..o.b2, h);
            fill(o.b2..o.w3, h);
            fill(o.w3..o.b3, h);
            fill(o.b3..o.b3 + 1, h);
            theta
        }
    }
}

/// Hidden width `2^(floor(log2 p) + 2)`.
pub fn mlp_hidden_size(p: usize) -> usize {
    let p = p.max(1);
    let log = usize::BITS - 1 - p.leading_zeros();
    1 << (log + 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn hidden_size_rule() {
        assert_eq!(mlp_hidden_size(1), 4);
        assert_eq!(mlp_hidden_size(2), 8);
        assert_eq!(mlp_hidden_size(3), 8);
        assert_eq!(mlp_hidden_size(9), 32);
        assert_eq!(mlp_hidden_size(16), 64);
    }

    #[test]
    fn tiny_mlp_matches_hand_computation() {
        // p = 1, h = 1: f = w3 tanh(w2 tanh(w1 x + b1) + b2) + b3
        let arch = Arch::Mlp { p: 1, h: 1 };
        let theta = [0.5, -0.2, 1.5, 0.1, -2.0, 0.3];
        let x = array![[0.7], [-1.1]];
        let (f, _) = forward(arch, &theta, x.view(), None);
        for (i, xi) in [0.7_f64, -1.1].iter().enumerate() {
            let expect = -2.0 * (1.5 * (0.5 * xi - 0.2).tanh() + 0.1).tanh() + 0.3;
            assert_abs_diff_eq!(f[i], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn init_is_bounded() {
        let mut rng = rng_from_seed(3);
        let arch = Arch::Mlp { p: 4, h: 16 };
        let theta = init_params(arch, &mut rng);
        assert_eq!(theta.len(), arch.n_params());
        assert!(theta.iter().all(|v| v.abs() <= 0.5));
        assert_eq!(arch.bias_mask().iter().filter(|b| **b).count(), 16 + 16 + 1);
    }
}
