//! The distribution estimator `f`: one evaluation per spatial position maps
//! the concatenated windows `[c'_i, c''_i]` to a mean and scale for every
//! context-modeled channel.

use crate::entropy::context::{extract_ctx_known, extract_ctx_prime, scatter_window_grad};
use crate::entropy::pmf::SIGMA_FLOOR;
use crate::error::{Error, Result};
use crate::math;
use crate::nn::sequential::EXP_INPUT_MAX;
use crate::nn::{ConvKernel, Tape};
use crate::tensor::TensorF;
use crate::transforms::ModelWeights;

/// Per-position, per-channel `(μ, σ)` grids.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyParams {
    pub mu: TensorF,
    pub sigma: TensorF,
}

impl EntropyParams {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.mu.shape()
    }
}

/// Estimator output at one position with what the backward pass needs.
#[derive(Clone, Debug)]
pub struct PositionEstimate {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    log_sigma: Vec<f64>,
    tape: Option<Tape>,
}

fn check_windows(c_prime: &TensorF, c_known: &TensorF, w: &ModelWeights) -> Result<()> {
    let mc = w.arch.context_channels();
    let m = w.arch.modeled_channels();
    for (dim, got, expected) in [
        ("c' channels", c_prime.channels(), mc),
        ("c'' channels", c_known.channels(), m),
        ("c' window height", c_prime.height(), 4),
        ("c' window width", c_prime.width(), 4),
        ("c'' window height", c_known.height(), 4),
        ("c'' window width", c_known.width(), 4),
    ] {
        if got != expected {
            return Err(Error::ShapeMismatch {
                op: "estimate_params_f",
                dim,
                got,
                expected,
            });
        }
    }
    Ok(())
}

fn sigma_from_log(l: f64) -> f64 {
    math::exp(l.min(EXP_INPUT_MAX)).max(SIGMA_FLOOR)
}

fn run_f(
    c_prime: &TensorF,
    c_known: &TensorF,
    w: &ModelWeights,
    kernel: ConvKernel,
    record: bool,
) -> Result<PositionEstimate> {
    check_windows(c_prime, c_known, w)?;
    let input = TensorF::concat_channels(c_prime, c_known)?;
    let mut tape = record.then(Tape::new);
    let out = w.f.forward(&input, kernel, tape.as_mut())?;
    let m = w.arch.modeled_channels();
    if out.shape() != (1, 1, 2 * m) {
        return Err(Error::ConfigMismatch(format!(
            "estimator produced {:?}, expected 1x1x{}",
            out.shape(),
            2 * m
        )));
    }
    let mu = out.data()[..m].to_vec();
    let log_sigma = out.data()[m..].to_vec();
    let sigma = log_sigma.iter().map(|&l| sigma_from_log(l)).collect();
    Ok(PositionEstimate {
        mu,
        sigma,
        log_sigma,
        tape,
    })
}

/// `μ_i, σ_i = f(c'_i, c''_i)`; both vectors have one entry per modeled channel.
pub fn estimate_params_f(
    c_prime: &TensorF,
    c_known: &TensorF,
    w: &ModelWeights,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let e = run_f(c_prime, c_known, w, w.entropy_kernel(), false)?;
    Ok((e.mu, e.sigma))
}

/// Estimate at grid column `k`, row `l`, reading `known` causally.
pub fn estimate_position(
    context: &TensorF,
    known: &TensorF,
    k: usize,
    l: usize,
    w: &ModelWeights,
) -> Result<(Vec<f64>, Vec<f64>)> {
    estimate_params_f(&extract_ctx_prime(context, k, l), &extract_ctx_known(known, k, l), w)
}

/// Parameters for every position of a fully known `ŷ` (encoder side and
/// evaluation). Positions are independent, so this runs in parallel.
pub fn estimate_grid(context: &TensorF, y_hat: &TensorF, w: &ModelWeights) -> Result<EntropyParams> {
    use rayon::prelude::*;
    let (h, wd, m) = y_hat.shape();
    if context.height() != h || context.width() != wd {
        return Err(Error::ShapeMismatch {
            op: "estimate_grid",
            dim: "context spatial size",
            got: context.height() * context.width(),
            expected: h * wd,
        });
    }
    let rows: Vec<Result<Vec<(Vec<f64>, Vec<f64>)>>> = (0..h)
        .into_par_iter()
        .map(|l| (0..wd).map(|k| estimate_position(context, y_hat, k, l, w)).collect())
        .collect();
    let mut mu = TensorF::zeros(h, wd, m);
    let mut sigma = TensorF::zeros(h, wd, m);
    for (l, row) in rows.into_iter().enumerate() {
        for (k, (pm, ps)) in row?.into_iter().enumerate() {
            mu.pixel_mut(l, k).copy_from_slice(&pm);
            sigma.pixel_mut(l, k).copy_from_slice(&ps);
        }
    }
    Ok(EntropyParams { mu, sigma })
}

/// Forward evaluation at `(k, l)` that keeps the tape for `backward_position`.
pub fn forward_position(
    context: &TensorF,
    known: &TensorF,
    k: usize,
    l: usize,
    w: &ModelWeights,
    kernel: ConvKernel,
) -> Result<PositionEstimate> {
    run_f(
        &extract_ctx_prime(context, k, l),
        &extract_ctx_known(known, k, l),
        w,
        kernel,
        true,
    )
}

/// Back-propagates `∂/∂μ` and `∂/∂σ` at `(k, l)` into the estimator's
/// parameter gradients and onto the context and known-latent grids.
#[allow(clippy::too_many_arguments)]
pub fn backward_position(
    est: &PositionEstimate,
    d_mu: &[f64],
    d_sigma: &[f64],
    k: usize,
    l: usize,
    w: &ModelWeights,
    f_grads: &mut [Vec<f64>],
    d_context: &mut TensorF,
    d_known: &mut TensorF,
) -> Result<()> {
    let tape = est.tape.as_ref().ok_or(Error::BackwardBeforeForward)?;
    let m = est.mu.len();
    let mut g = Vec::with_capacity(2 * m);
    g.extend_from_slice(d_mu);
    for i in 0..m {
        let l_raw = est.log_sigma[i];
        let floored = l_raw > EXP_INPUT_MAX || est.sigma[i] <= SIGMA_FLOOR;
        g.push(if floored { 0.0 } else { d_sigma[i] * est.sigma[i] });
    }
    let grad_out = TensorF::new(1, 1, 2 * m, g)?;
    let d_in = w.f.backward(tape, &grad_out, f_grads)?;
    let mc = d_context.channels();
    scatter_window_grad(&d_in.channel_slice(0, mc)?, k, l, false, d_context);
    scatter_window_grad(&d_in.channel_slice(mc, mc + m)?, k, l, true, d_known);
    Ok(())
}
