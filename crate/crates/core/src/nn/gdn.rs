//! Generalized divisive normalization and its approximate inverse.

use crate::error::{invalid, Error, Result};
use crate::nn::conv::gemm;
use crate::tensor::{Param, TensorF};

pub const BETA_FLOOR: f64 = 1e-6;

/// Normalization pool `s = beta + X²·gammaᵀ`, one row per pixel.
fn norm_pool(x: &TensorF, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let c = x.channels();
    let p = x.height() * x.width();
    let sq: Vec<f64> = x.data().iter().map(|v| v * v).collect();
    let mut s = Vec::with_capacity(p * c);
    for _ in 0..p {
        s.extend_from_slice(beta);
    }
    gemm(p, c, c, &sq, (c, 1), gamma, (1, c), 1.0, &mut s, (c, 1));
    s
}

fn apply(x: &TensorF, s: &[f64], inverse: bool) -> TensorF {
    let mut out = x.clone();
    for (v, &sv) in out.data_mut().iter_mut().zip(s) {
        let n = sv.sqrt();
        if inverse {
            *v *= n;
        } else {
            *v /= n;
        }
    }
    out
}

/// `y_c = x_c / sqrt(beta_c + Σ_k gamma[c][k]·x_k²)`, or multiplied instead of
/// divided when `inverse` is set. `gamma` is `channels × channels`, row-major.
pub fn gdn(input: &TensorF, gamma: &[f64], beta: &[f64], inverse: bool) -> Result<TensorF> {
    let c = input.channels();
    if gamma.len() != c * c {
        return Err(Error::ShapeMismatch {
            op: "gdn",
            dim: "gamma length",
            got: gamma.len(),
            expected: c * c,
        });
    }
    if beta.len() != c {
        return Err(Error::ShapeMismatch {
            op: "gdn",
            dim: "beta length",
            got: beta.len(),
            expected: c,
        });
    }
    if let Some(b) = beta.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
        return Err(invalid(format!("gdn beta must be nonnegative and finite, got {b}")));
    }
    if gamma.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(invalid("gdn gamma must be nonnegative and finite"));
    }
    let s = norm_pool(input, gamma, beta);
    if let Some(i) = s.iter().position(|&v| v <= 0.0) {
        return Err(invalid(format!(
            "gdn normalization pool is zero at element {i}; beta must be positive there"
        )));
    }
    Ok(apply(input, &s, inverse))
}

/// GDN layer with squared reparameterization: `gamma = raw²`,
/// `beta = max(raw², 1e-6)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gdn {
    pub channels: usize,
    pub inverse: bool,
    pub gamma_raw: Param,
    pub beta_raw: Param,
}

impl Gdn {
    pub fn new(name: &str, channels: usize, inverse: bool) -> Self {
        let mut gamma = vec![0.0; channels * channels];
        for c in 0..channels {
            gamma[c * channels + c] = 0.1f64.sqrt();
        }
        Self {
            channels,
            inverse,
            gamma_raw: Param::new(format!("{name}.gamma"), vec![channels, channels], gamma),
            beta_raw: Param::new(format!("{name}.beta"), vec![channels], vec![1.0; channels]),
        }
    }

    pub fn gamma(&self) -> Vec<f64> {
        self.gamma_raw.data.iter().map(|g| g * g).collect()
    }

    pub fn beta(&self) -> Vec<f64> {
        self.beta_raw.data.iter().map(|b| (b * b).max(BETA_FLOOR)).collect()
    }

    /// Returns the output and the normalization pool needed by `backward`.
    pub fn forward(&self, x: &TensorF) -> Result<(TensorF, Vec<f64>)> {
        if x.channels() != self.channels {
            return Err(Error::ShapeMismatch {
                op: "gdn",
                dim: "channels",
                got: x.channels(),
                expected: self.channels,
            });
        }
        let s = norm_pool(x, &self.gamma(), &self.beta());
        Ok((apply(x, &s, self.inverse), s))
    }

    pub fn backward(
        &self,
        x: &TensorF,
        s: &[f64],
        grad_out: &TensorF,
        g_gamma_raw: &mut [f64],
        g_beta_raw: &mut [f64],
    ) -> Result<TensorF> {
        grad_out.ensure_shape("gdn_backward", x.shape())?;
        let c = self.channels;
        let p = x.height() * x.width();
        let e = if self.inverse { 0.5 } else { -0.5 };
        let gamma = self.gamma();
        let xs = x.data();
        let gy = grad_out.data();

        let mut t = vec![0.0; p * c];
        let mut dx = TensorF::zeros(x.height(), x.width(), c);
        for i in 0..p * c {
            let se = s[i].powf(e);
            // d/ds of s^e is e·s^(e-1) = e·s^e / s.
            t[i] = gy[i] * xs[i] * e * se / s[i];
            dx.data_mut()[i] = gy[i] * se;
        }
        let mut tg = vec![0.0; p * c];
        gemm(p, c, c, &t, (c, 1), &gamma, (c, 1), 0.0, &mut tg, (c, 1));
        for (i, d) in dx.data_mut().iter_mut().enumerate() {
            *d += 2.0 * xs[i] * tg[i];
        }

        let sq: Vec<f64> = xs.iter().map(|v| v * v).collect();
        let mut d_gamma = vec![0.0; c * c];
        gemm(c, p, c, &t, (1, c), &sq, (c, 1), 0.0, &mut d_gamma, (c, 1));
        for (i, g) in g_gamma_raw.iter_mut().enumerate() {
            *g += d_gamma[i] * 2.0 * self.gamma_raw.data[i];
        }
        for ch in 0..c {
            let raw = self.beta_raw.data[ch];
            if raw * raw <= BETA_FLOOR {
                continue;
            }
            let d_beta: f64 = (0..p).map(|px| t[px * c + ch]).sum();
            g_beta_raw[ch] += d_beta * 2.0 * raw;
        }
        Ok(dx)
    }
}
