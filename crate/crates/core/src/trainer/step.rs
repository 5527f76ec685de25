//! One training sample: forward pass, weighted loss and full backward pass.
//!
//! Quantization is written as `ŷ = y + r` with `r = round(y) - y` held
//! constant, which is the identity-gradient override; noise is `ỹ = y + u`.
//! Both offsets can be frozen and replayed, which makes the loss an ordinary
//! smooth function of the parameters for finite-difference checks.

use rand::Rng;

use crate::entropy::latent::{quantize, Bounds};
use crate::entropy::noise::uniform_noise;
use crate::entropy::rate::{bits_with_grad, RateReport};
use crate::entropy::{backward_position, forward_position};
use crate::error::{Error, Result};
use crate::metrics::ms_ssim_with_grad;
use crate::nn::{ConvKernel, Tape};
use crate::tensor::TensorF;
use crate::transforms::{ga_forward, gs_forward, ha_forward, hs_forward, Grads, ModelWeights, Y_DOWNSCALE};

use super::config::{Conditioning, Metric};

/// `L = λ/(W_y·H_y·256)·R + (1-λ)/1000·D`, with `R` in bits.
pub fn loss_total(lambda: f64, y_width: usize, y_height: usize, rate_bits: f64, distortion: f64) -> Result<f64> {
    if !rate_bits.is_finite() {
        return Err(Error::NonFinite(format!("rate term R = {rate_bits}")));
    }
    if !distortion.is_finite() {
        return Err(Error::NonFinite(format!("distortion term D = {distortion}")));
    }
    let (a, b) = loss_weights(lambda, y_width, y_height);
    let l = a * rate_bits + b * distortion;
    if !l.is_finite() {
        return Err(Error::NonFinite(format!("loss L = {l}")));
    }
    Ok(l)
}

/// `(∂L/∂R, ∂L/∂D)`.
pub fn loss_weights(lambda: f64, y_width: usize, y_height: usize) -> (f64, f64) {
    (lambda / (y_width * y_height * 256) as f64, (1.0 - lambda) / 1000.0)
}

/// `count` distinct `(k, l)` positions of a `height × width` grid, uniform
/// without replacement, in raster order. `count >= height·width` returns
/// every position.
pub fn sample_rate_points(height: usize, width: usize, count: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let total = height * width;
    let mut idx: Vec<usize> = if count >= total {
        (0..total).collect()
    } else {
        rand::seq::index::sample(rng, total, count).into_vec()
    };
    idx.sort_unstable();
    idx.into_iter().map(|i| (i % width, i / width)).collect()
}

/// Randomness consumed by one sample. Residuals are filled in by the
/// forward pass when absent.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub y_noise: Vec<f64>,
    pub z_noise: Vec<f64>,
    pub y_round: Option<Vec<f64>>,
    pub z_round: Option<Vec<f64>>,
    /// `(k, l)` positions for the `y` (or `y1`) rate term.
    pub positions: Vec<(usize, usize)>,
}

impl Perturbation {
    /// Fresh noise and positions for a `crop × crop` input.
    pub fn draw(w: &ModelWeights, crop_h: usize, crop_w: usize, rate_points: usize, rng: &mut impl Rng) -> Self {
        let (yh, yw) = (crop_h / Y_DOWNSCALE, crop_w / Y_DOWNSCALE);
        let (zh, zw) = (yh / 4, yw / 4);
        Self {
            y_noise: uniform_noise(yh * yw * w.arch.m, rng),
            z_noise: uniform_noise(zh * zw * w.z_channels(), rng),
            y_round: None,
            z_round: None,
            positions: sample_rate_points(yh, yw, rate_points, rng),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Representation {
    Discrete,
    Noisy,
}

/// Which representation each consumer received, and whether the values it
/// received were all integers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Use {
    pub repr: Representation,
    pub integral: bool,
}

/// Record of what fed each network in one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConditioningTrace {
    pub gs_input: Use,
    pub ha_input: Use,
    pub hs_input: Use,
    pub known_windows: Use,
    pub y_rate_values: Use,
    pub z_rate_values: Use,
}

fn usage(repr: Representation, t: &TensorF) -> Use {
    Use {
        repr,
        integral: t.data().iter().all(|v| v.fract() == 0.0),
    }
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub loss: f64,
    /// Bits: sampled `y` (rescaled to the full grid) + `y2` + `z`.
    pub rate_bits: f64,
    pub rates: RateParts,
    pub distortion: f64,
    pub grads: Grads,
    pub perturbation: Perturbation,
    pub trace: ConditioningTrace,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RateParts {
    /// Sum over the sampled positions, before rescaling.
    pub y1_sampled: RateReport,
    pub y1_scale: f64,
    pub y2: RateReport,
    pub z: RateReport,
}

fn offset(t: &TensorF, d: &[f64]) -> Result<TensorF> {
    if d.len() != t.len() {
        return Err(Error::ShapeMismatch {
            op: "train_step",
            dim: "perturbation length",
            got: d.len(),
            expected: t.len(),
        });
    }
    let (h, w, c) = t.shape();
    TensorF::new(h, w, c, t.data().iter().zip(d).map(|(a, b)| a + b).collect())
}

fn residual(t: &TensorF) -> Vec<f64> {
    let q = quantize(t, Bounds::DEFAULT);
    q.grid.values().iter().zip(t.data()).map(|(&r, &v)| r as f64 - v).collect()
}

fn add_channels(target: &mut TensorF, src: &TensorF, start: usize) {
    let c = target.channels();
    let sc = src.channels();
    for (dst, s) in target.data_mut().chunks_exact_mut(c).zip(src.data().chunks_exact(sc)) {
        for (d, v) in dst[start..start + sc].iter_mut().zip(s) {
            *d += v;
        }
    }
}

/// Distortion on the 0–255 scale and its gradient with respect to `x̂`.
pub fn distortion(x: &TensorF, x_hat: &TensorF, metric: Metric) -> Result<(f64, TensorF)> {
    const S: f64 = 127.5;
    match metric {
        Metric::Mse => {
            let n = x.len() as f64;
            let mut g = x_hat.clone();
            let mut sse = 0.0;
            for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
                let d = S * (*gv - xv);
                sse += d * d;
                *gv = 2.0 * S * d / n;
            }
            Ok((sse / n, g))
        }
        Metric::MsSsim => {
            let to255 = |t: &TensorF| t.map(|v| (v + 1.0) * S);
            let (v, g) = ms_ssim_with_grad(&to255(x), &to255(x_hat))?;
            Ok((3000.0 * (1.0 - v), g.map(|d| -3000.0 * S * d)))
        }
    }
}

/// Runs one sample forward and backward. `x` is a `[-1, 1]` tensor whose
/// sides are multiples of 64.
pub fn train_sample(
    x: &TensorF,
    w: &ModelWeights,
    metric: Metric,
    mode: Conditioning,
    mut pert: Perturbation,
) -> Result<SampleOutput> {
    let kernel = ConvKernel::Gemm;
    let repr = match mode {
        Conditioning::Discrete => Representation::Discrete,
        Conditioning::Noisy => Representation::Noisy,
    };

    let mut t_ga = Tape::new();
    let y = ga_forward(x, w, Some(&mut t_ga))?;
    let (yh, yw, m) = y.shape();
    let fresh = pert.y_round.is_none() && pert.z_round.is_none();
    let ry = pert.y_round.get_or_insert_with(|| residual(&y)).clone();
    let y_hat = offset(&y, &ry)?;
    let y_tilde = offset(&y, &pert.y_noise)?;
    let cond_y = if mode == Conditioning::Discrete { &y_hat } else { &y_tilde };

    let mut t_ha = Tape::new();
    let z = ha_forward(cond_y, w, Some(&mut t_ha))?;
    let rz = pert.z_round.get_or_insert_with(|| residual(&z)).clone();
    let z_hat = offset(&z, &rz)?;
    let z_tilde = offset(&z, &pert.z_noise)?;
    let cond_z = if mode == Conditioning::Discrete { &z_hat } else { &z_tilde };

    let mut t_hs = Tape::new();
    let hs = hs_forward(cond_z, w, kernel, Some(&mut t_hs))?;

    let mut t_gs = Tape::new();
    let x_hat = gs_forward(cond_y, w, Some(&mut t_gs))?;
    let (d, d_dxhat) = distortion(x, &x_hat, metric)?;

    let m1 = w.arch.modeled_channels();
    let known = if m1 == m { cond_y.clone() } else { cond_y.channel_slice(0, m1)? };

    let (a, b) = loss_weights(w.lambda, yw, yh);
    let mut grads = w.zero_grads();
    let mut d_y = TensorF::zeros(yh, yw, m);

    // y (or y1): context model at the sampled positions.
    let scale = (yh * yw) as f64 / pert.positions.len() as f64;
    let ga_r = a * scale;
    let mut y1_rep = RateReport::default();
    let mut d_context = TensorF::zeros(yh, yw, hs.context.channels());
    let mut d_known = TensorF::zeros(yh, yw, m1);
    for &(k, l) in &pert.positions {
        let est = forward_position(&hs.context, &known, k, l, w, kernel)?;
        let mut d_mu = vec![0.0; m1];
        let mut d_sigma = vec![0.0; m1];
        for c in 0..m1 {
            let bg = bits_with_grad(y_tilde.get(l, k, c), est.mu[c], est.sigma[c]);
            y1_rep.push_bits(bg.bits);
            let i = d_y.index(l, k, c);
            d_y.data_mut()[i] += ga_r * bg.d_value;
            d_mu[c] = ga_r * bg.d_mu;
            d_sigma[c] = ga_r * bg.d_sigma;
        }
        backward_position(&est, &d_mu, &d_sigma, k, l, w, &mut grads.f, &mut d_context, &mut d_known)?;
    }

    // y2: zero-mean model with scales from h_s, every position.
    let mut y2_rep = RateReport::default();
    let mut d_hs_raw = d_context;
    if let (Some(sigma2), Some(log_sigma2)) = (&hs.sigma2, &hs.log_sigma2) {
        let m2 = m - m1;
        let mut d_log = TensorF::zeros(yh, yw, m2);
        for l in 0..yh {
            for k in 0..yw {
                for c in 0..m2 {
                    let s = sigma2.get(l, k, c);
                    let bg = bits_with_grad(y_tilde.get(l, k, m1 + c), 0.0, s);
                    y2_rep.push_bits(bg.bits);
                    let i = d_y.index(l, k, m1 + c);
                    d_y.data_mut()[i] += a * bg.d_value;
                    if log_sigma2.get(l, k, c) < crate::nn::sequential::EXP_INPUT_MAX {
                        d_log.set(l, k, c, a * bg.d_sigma * s);
                    }
                }
            }
        }
        d_hs_raw = TensorF::concat_channels(&d_hs_raw, &d_log)?;
    }

    // z: zero-mean model with one learned scale per channel.
    let sz = w.z_scales();
    let mut z_rep = RateReport::default();
    let mut d_z = TensorF::zeros(z.height(), z.width(), z.channels());
    let zc = z.channels();
    for (i, &v) in z_tilde.data().iter().enumerate() {
        let c = i % zc;
        let bg = bits_with_grad(v, 0.0, sz[c]);
        z_rep.push_bits(bg.bits);
        d_z.data_mut()[i] += a * bg.d_value;
        let l = w.z_log_scale.data[c];
        if l < 30.0 && sz[c] > crate::transforms::Z_SIGMA_FLOOR {
            grads.z_log_scale[c] += a * bg.d_sigma * sz[c];
        }
    }

    let rate_bits = y1_rep.bits * scale + y2_rep.bits + z_rep.bits;
    let loss = loss_total(w.lambda, yw, yh, rate_bits, d)?;

    // h_s, then h_a; the identity override sends ∂/∂ẑ (or z̃) straight to z.
    let d_cond_z = w.hs.backward(&t_hs, &d_hs_raw, &mut grads.hs)?;
    d_z.add_assign(&d_cond_z)?;
    let d_from_ha = w.ha.backward(&t_ha, &d_z, &mut grads.ha)?;
    d_y.add_assign(&d_from_ha)?;
    add_channels(&mut d_y, &d_known, 0);
    let d_from_gs = w.gs.backward(&t_gs, &d_dxhat.map(|g| b * g), &mut grads.gs)?;
    d_y.add_assign(&d_from_gs)?;
    w.ga.backward(&t_ga, &d_y, &mut grads.ga)?;

    let noisy = |t: &TensorF| usage(Representation::Noisy, t);
    let trace = ConditioningTrace {
        gs_input: usage(repr, cond_y),
        ha_input: usage(repr, cond_y),
        hs_input: usage(repr, cond_z),
        known_windows: usage(repr, &known),
        y_rate_values: noisy(&y_tilde),
        z_rate_values: noisy(&z_tilde),
    };
    // Replayed residuals no longer land on integers once weights move.
    debug_assert!(
        !fresh
            || mode != Conditioning::Discrete
            || (trace.gs_input.integral && trace.hs_input.integral && trace.known_windows.integral),
        "discrete conditioning received non-integer values"
    );

    Ok(SampleOutput {
        loss,
        rate_bits,
        rates: RateParts {
            y1_sampled: y1_rep,
            y1_scale: scale,
            y2: y2_rep,
            z: z_rep,
        },
        distortion: d,
        grads,
        perturbation: pert,
        trace,
    })
}
