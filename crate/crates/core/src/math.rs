//! Scalar math shared by the entropy model and the coder.
//!
//! Everything that can influence a CDF table goes through this module. With
//! deterministic math enabled (the default) `exp` and `erfc` come from the
//! pure-Rust `libm` port, so results do not depend on the platform's C math
//! library, and convolutions on the entropy path use the fixed-order
//! reference kernel.

use std::sync::atomic::{AtomicBool, Ordering};

static DETERMINISTIC: AtomicBool = AtomicBool::new(true);

pub fn set_deterministic_math(on: bool) {
    DETERMINISTIC.store(on, Ordering::Relaxed);
}

pub fn deterministic_math() -> bool {
    DETERMINISTIC.load(Ordering::Relaxed)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    if deterministic_math() {
        libm::exp(x)
    } else {
        x.exp()
    }
}

#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t * INV_SQRT_2)
}

/// Upper tail `1 - Φ(t)`, accurate for large positive `t`.
#[inline]
pub fn normal_sf(t: f64) -> f64 {
    if t > 40.0 {
        return 0.0;
    }
    if t < -40.0 {
        return 1.0;
    }
    0.5 * erfc(t * INV_SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * exp(-0.5 * t * t)
}
