//! Cross-entropy rate, `Σ -log2 p(v)`, under the entropy models.

use std::f64::consts::LN_2;

use crate::entropy::estimator::EntropyParams;
use crate::entropy::pmf::{pmf_gaussian_uniform, pmf_with_grad, pmf_zero_mean};
use crate::error::{Error, Result};
use crate::tensor::TensorF;

/// Smallest probability charged per symbol; matches the coder's resolution.
pub const P_FLOOR: f64 = 1.0 / 65536.0;

/// Bits and bookkeeping for one latent tensor.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RateReport {
    pub bits: f64,
    pub symbols: usize,
    /// Symbols whose model probability fell below `P_FLOOR`.
    pub floored: usize,
}

impl RateReport {
    pub fn add(&mut self, other: RateReport) {
        self.bits += other.bits;
        self.symbols += other.symbols;
        self.floored += other.floored;
    }

    /// Records one symbol already converted to (floored) bits.
    pub fn push_bits(&mut self, bits: f64) {
        self.symbols += 1;
        if bits >= -P_FLOOR.log2() {
            self.floored += 1;
        }
        self.bits += bits;
    }

    fn push(&mut self, p: f64) {
        self.symbols += 1;
        if p < P_FLOOR {
            self.floored += 1;
        }
        self.bits += symbol_bits(p);
    }
}

/// `-log2 p` with the probability floored at `P_FLOOR`.
pub fn symbol_bits(p: f64) -> f64 {
    -p.max(P_FLOOR).log2()
}

/// Per-symbol bits with derivatives with respect to the value, mean and scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BitsGrad {
    pub bits: f64,
    pub d_value: f64,
    pub d_mu: f64,
    pub d_sigma: f64,
}

/// Bits for `v` under `N(μ, σ²) * U(-½, ½)`. Below the floor the value is
/// charged `P_FLOOR`, and the gradient passes straight through as if the
/// floor were not there (scaled by the floor) so that such symbols are still
/// pulled towards higher probability.
pub fn bits_with_grad(v: f64, mu: f64, sigma: f64) -> BitsGrad {
    let g = pmf_with_grad(v, mu, sigma);
    let denom = g.p.max(P_FLOOR);
    let k = -1.0 / (denom * LN_2);
    BitsGrad {
        bits: symbol_bits(g.p),
        d_value: k * g.d_value,
        d_mu: k * g.d_mu,
        d_sigma: k * g.d_sigma,
    }
}

fn same_shape(op: &'static str, a: &TensorF, b: &TensorF) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            dim: "latent vs parameter grid",
            got: a.len(),
            expected: b.len(),
        });
    }
    Ok(())
}

/// Rate of `ŷ` (or `ỹ`) under the context-conditioned model.
pub fn rate_y(values: &TensorF, params: &EntropyParams) -> Result<RateReport> {
    same_shape("rate_y", values, &params.mu)?;
    same_shape("rate_y", values, &params.sigma)?;
    let mut r = RateReport::default();
    for ((&v, &mu), &s) in values.data().iter().zip(params.mu.data()).zip(params.sigma.data()) {
        r.push(pmf_gaussian_uniform(v, mu, s));
    }
    Ok(r)
}

/// Rate of `ẑ` (or `z̃`) under the zero-mean model with one scale per channel.
pub fn rate_z(values: &TensorF, sigmas: &[f64]) -> Result<RateReport> {
    if sigmas.len() != values.channels() {
        return Err(Error::ShapeMismatch {
            op: "rate_z",
            dim: "scale count",
            got: sigmas.len(),
            expected: values.channels(),
        });
    }
    let mut r = RateReport::default();
    for px in values.data().chunks_exact(values.channels()) {
        for (&v, &s) in px.iter().zip(sigmas) {
            r.push(pmf_zero_mean(v, s));
        }
    }
    Ok(r)
}

/// Rate of the scale-only part `y2` of the hybrid model, `σ2` from `h_s`.
pub fn rate_scale_only(values: &TensorF, sigma: &TensorF) -> Result<RateReport> {
    same_shape("rate_scale_only", values, sigma)?;
    let mut r = RateReport::default();
    for (&v, &s) in values.data().iter().zip(sigma.data()) {
        r.push(pmf_zero_mean(v, s));
    }
    Ok(r)
}

/// The parts of a model's total rate; `y2` is zero for the base model.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RateBreakdown {
    pub y1: RateReport,
    pub y2: RateReport,
    pub z: RateReport,
}

impl RateBreakdown {
    pub fn total_bits(&self) -> f64 {
        self.y1.bits + self.y2.bits + self.z.bits
    }

    pub fn floored(&self) -> usize {
        self.y1.floored + self.y2.floored + self.z.floored
    }
}
