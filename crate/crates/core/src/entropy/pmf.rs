//! Gaussian convolved with `U(-1/2, 1/2)`, evaluated as a probability mass.
//!
//! `p(v) = Φ((v+½-μ)/σ) - Φ((v-½-μ)/σ)`. Both terms are computed as upper
//! tails of `|v-μ|` so that far-tail masses keep full relative precision.

use crate::math::{normal_pdf, normal_sf};

/// Smallest scale accepted by the PMF; smaller values are clamped.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Probability and its partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PmfGrad {
    pub p: f64,
    pub d_value: f64,
    pub d_mu: f64,
    pub d_sigma: f64,
}

/// True when `sigma` is below the floor (and would be clamped).
pub fn sigma_clamped(sigma: f64) -> bool {
    !(sigma >= SIGMA_FLOOR)
}

pub fn pmf_gaussian_uniform(value: f64, mu: f64, sigma: f64) -> f64 {
    let s = sigma.max(SIGMA_FLOOR);
    let t = (value - mu).abs();
    (normal_sf((t - 0.5) / s) - normal_sf((t + 0.5) / s)).max(0.0)
}

/// Zero-mean variant used for `ẑ` and for the scale-only hybrid channels.
pub fn pmf_zero_mean(value: f64, sigma: f64) -> f64 {
    pmf_gaussian_uniform(value, 0.0, sigma)
}

pub fn pmf_with_grad(value: f64, mu: f64, sigma: f64) -> PmfGrad {
    let clamped = sigma_clamped(sigma);
    let s = sigma.max(SIGMA_FLOOR);
    let d = value - mu;
    let t = d.abs();
    let a = (t - 0.5) / s;
    let b = (t + 0.5) / s;
    let p = (normal_sf(a) - normal_sf(b)).max(0.0);
    let (pa, pb) = (normal_pdf(a), normal_pdf(b));
    let dp_dt = (pb - pa) / s;
    let d_value = if d >= 0.0 { dp_dt } else { -dp_dt };
    let d_sigma = if clamped { 0.0 } else { (a * pa - b * pb) / s };
    PmfGrad {
        p,
        d_value,
        d_mu: -d_value,
        d_sigma,
    }
}

/// Mass below `min - ½` and above `max + ½`.
pub fn tail_masses(min: i32, max: i32, mu: f64, sigma: f64) -> (f64, f64) {
    let s = sigma.max(SIGMA_FLOOR);
    let lower = normal_sf((mu - (min as f64 - 0.5)) / s);
    let upper = normal_sf((max as f64 + 0.5 - mu) / s);
    (lower, upper)
}
