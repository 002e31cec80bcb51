//! Row-major dense kernels with hand-written backward passes.

use alloc::vec;
use alloc::vec::Vec;

/// Additive penalty for masked attention logits.
pub const MASK_NEG: f64 = -1e9;

/// `y[r, o] = b[o] + Σ_i x[r, i]·w[o, i]` with `w` stored `out × in`.
pub fn linear(x: &[f64], rows: usize, w: &[f64], b: &[f64], in_dim: usize, out_dim: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * out_dim];
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let yr = &mut y[r * out_dim..(r + 1) * out_dim];
        for (o, yo) in yr.iter_mut().enumerate() {
            let wo = &w[o * in_dim..(o + 1) * in_dim];
            *yo = b[o] + dot(xr, wo);
        }
    }
    y
}

/// Accumulates `dw += dyᵀ·x`, `db += Σ_r dy` and returns `dx = dy·w`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    dy: &[f64],
    rows: usize,
    w: &[f64],
    in_dim: usize,
    out_dim: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * in_dim];
    for r in 0..rows {
        let xr = &x[r * in_dim..(r + 1) * in_dim];
        let dyr = &dy[r * out_dim..(r + 1) * out_dim];
        let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
        for (o, &g) in dyr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wo = &w[o * in_dim..(o + 1) * in_dim];
            let dwo = &mut dw[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                dwo[i] += g * xr[i];
                dxr[i] += g * wo[i];
            }
        }
    }
    dx
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalized rows and reciprocal standard deviations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(x: &[f64], rows: usize, dim: usize, gamma: &[f64], beta: &[f64], eps: f64) -> (Vec<f64>, NormCache) {
    let mut y = vec![0.0; rows * dim];
    let mut xhat = vec![0.0; rows * dim];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * dim..(r + 1) * dim];
        let mean = xr.iter().sum::<f64>() / dim as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
        let inv = 1.0 / libm::sqrt(var + eps);
        inv_std[r] = inv;
        for i in 0..dim {
            let h = (xr[i] - mean) * inv;
            xhat[r * dim + i] = h;
            y[r * dim + i] = h * gamma[i] + beta[i];
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Accumulates `dgamma`, `dbeta` and returns the input gradient.
pub fn layer_norm_backward(
    dy: &[f64],
    cache: &NormCache,
    rows: usize,
    dim: usize,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * dim];
    let n = dim as f64;
    for r in 0..rows {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for i in 0..dim {
            dgamma[i] += dyr[i] * xh[i];
            dbeta[i] += dyr[i];
            let g = dyr[i] * gamma[i];
            sum_g += g;
            sum_gx += g * xh[i];
        }
        let inv = cache.inv_std[r];
        for i in 0..dim {
            let g = dyr[i] * gamma[i];
            dx[r * dim + i] = inv / n * (n * g - sum_g - xh[i] * sum_gx);
        }
    }
    dx
}

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf) GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)) + x * FRAC_1_SQRT_2PI * libm::exp(-0.5 * x * x)
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(v.iter().map(|x| libm::exp(x - max)).sum::<f64>())
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gelu_values_and_gradient() {
        assert_eq!(gelu(0.0), 0.0);
        // GELU(1) = Φ(1) = 0.841344746...
        assert!((gelu(1.0) - 0.841_344_746_068_543).abs() < 1e-12);
        for x in [-3.0, -1.0, -0.2, 0.0, 0.5, 2.0] {
            assert!((gelu_grad(x) - fd(gelu, x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_gradient_matches_finite_differences() {
        let x = [0.3, -1.2, 2.0, 0.7, 0.1, -0.4];
        let gamma = [1.5, 0.5, -0.7];
        let beta = [0.1, 0.2, 0.3];
        let dy = [0.2, -0.3, 0.9, 1.0, 0.4, -0.6];
        let loss = |x: &[f64]| dot(&layer_norm(x, 2, 3, &gamma, &beta, 1e-6).0, &dy);
        let (_, cache) = layer_norm(&x, 2, 3, &gamma, &beta, 1e-6);
        let (mut dg, mut db) = ([0.0; 3], [0.0; 3]);
        let dx = layer_norm_backward(&dy, &cache, 2, 3, &gamma, &mut dg, &mut db);
        for i in 0..6 {
            let f = |v: f64| {
                let mut xs = x;
                xs[i] = v;
                loss(&xs)
            };
            assert!((dx[i] - fd(f, x[i])).abs() < 1e-7, "{i}");
        }
        assert!((db[0] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn linear_backward_matches_definition() {
        let x = [1.0, 2.0, -1.0, 0.5];
        let w = [0.1, 0.2, 0.3, -0.4, 0.5, 0.6];
        let b = [0.0, 1.0, -1.0];
        let y = linear(&x, 2, &w, &b, 2, 3);
        for (got, want) in y.iter().zip([0.5, 0.5, 0.7, 0.0, 0.5, -1.2]) {
            assert!((got - want).abs() < 1e-12, "{y:?}");
        }
        let dy = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let (mut dw, mut db) = ([0.0; 6], [0.0; 3]);
        let dx = linear_backward(&x, &dy, 2, &w, 2, 3, &mut dw, &mut db);
        assert_eq!(dx, vec![0.1, 0.2, 0.5, 0.6]);
        assert_eq!(dw, [1.0, 2.0, 0.0, 0.0, -1.0, 0.5]);
        assert_eq!(db, [1.0, 0.0, 1.0]);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0; 5]), 0);
    }

    #[test]
    fn masked_logits_vanish_after_softmax() {
        let mut v = [1.0, 2.0 + MASK_NEG, 0.5];
        softmax_in_place(&mut v);
        assert_eq!(v[1], 0.0);
        assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
    }
}
