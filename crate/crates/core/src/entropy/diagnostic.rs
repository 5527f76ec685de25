//! Spatial correlation of latents before and after normalization by the
//! estimated `(μ, σ)`.

use crate::entropy::estimator::EntropyParams;
use crate::error::{Error, Result};
use crate::tensor::TensorF;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationReport {
    pub channel: usize,
    pub raw_autocorr: f64,
    pub norm_autocorr: f64,
}

fn adjacent_pairs(t: &TensorF, c: usize) -> Vec<(f64, f64)> {
    let (h, w, _) = t.shape();
    let mut pairs = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                pairs.push((t.get(y, x, c), t.get(y, x + 1, c)));
            }
            if y + 1 < h {
                pairs.push((t.get(y, x, c), t.get(y + 1, x, c)));
            }
        }
    }
    pairs
}

fn moments(pairs: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for &(a, b) in pairs {
        cov += (a - ma) * (b - mb);
        va += (a - ma) * (a - ma);
        vb += (b - mb) * (b - mb);
    }
    (cov / n, va / n, vb / n)
}

/// Lag-1 covariance between horizontally and vertically adjacent values.
pub fn lag1_covariance(t: &TensorF, c: usize) -> f64 {
    let pairs = adjacent_pairs(t, c);
    if pairs.is_empty() {
        return 0.0;
    }
    moments(&pairs).0
}

/// Lag-1 Pearson correlation over horizontal and vertical neighbour pairs;
/// 0 when either side is constant.
pub fn lag1_autocorr(t: &TensorF, c: usize) -> f64 {
    let pairs = adjacent_pairs(t, c);
    if pairs.is_empty() {
        return 0.0;
    }
    let (cov, va, vb) = moments(&pairs);
    let denom = (va * vb).sqrt();
    if denom <= 1e-12 {
        0.0
    } else {
        cov / denom
    }
}

/// Picks the channel with the highest lag-1 covariance in `y_hat` and reports
/// its autocorrelation before and after `(ŷ - μ) / σ`.
pub fn normalization_diagnostic(y_hat: &TensorF, params: &EntropyParams) -> Result<NormalizationReport> {
    if y_hat.shape() != params.shape() {
        return Err(Error::ShapeMismatch {
            op: "normalization_diagnostic",
            dim: "latent vs parameter grid",
            got: y_hat.len(),
            expected: params.mu.len(),
        });
    }
    let channel = (0..y_hat.channels())
        .map(|c| (c, lag1_covariance(y_hat, c)))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
        .0;
    let mut norm = y_hat.clone();
    for ((v, &mu), &s) in norm.data_mut().iter_mut().zip(params.mu.data()).zip(params.sigma.data()) {
        *v = (*v - mu) / s;
    }
    Ok(NormalizationReport {
        channel,
        raw_autocorr: lag1_autocorr(y_hat, channel),
        norm_autocorr: lag1_autocorr(&norm, channel),
    })
}
