//! The optimization loop, test-time evaluation and the conditioning ablation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::codec::{encode_image, CodecOptions};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::ms_ssim;
use crate::nn::{adam_step, AdamState};
use crate::transforms::{Grads, ModelWeights, Y_DOWNSCALE};

use super::config::{Conditioning, Metric, TrainConfig};
use super::data::Dataset;
use super::step::{loss_total, train_sample, Perturbation};

/// Random stream for batch element `idx` of iteration `iter`: ChaCha stream
/// `iter`, offset by `idx`, so every sample is independent of scheduling.
pub fn sample_rng(seed: u64, iter: u64, idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter);
    rng.set_word_pos((idx as u128) << 48);
    rng
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogRecord {
    pub iter: u64,
    #[serde(rename = "L")]
    pub loss: f64,
    #[serde(rename = "R_bits")]
    pub rate_bits: f64,
    #[serde(rename = "D")]
    pub distortion: f64,
    pub bpp_estimate: f64,
    pub lr: f64,
}

impl LogRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain numeric record")
    }
}

/// Averages over a batch: `(loss, rate bits, distortion, gradients)`.
pub fn batch_step(w: &ModelWeights, data: &Dataset, cfg: &TrainConfig, iter: u64) -> Result<(f64, f64, f64, Grads)> {
    let outs: Vec<_> = (0..cfg.batch_size)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, iter, i);
            let x = data.sample_crop(cfg.crop, &mut rng).to_tensor();
            let pert = Perturbation::draw(w, cfg.crop, cfg.crop, cfg.rate_points, &mut rng);
            train_sample(&x, w, cfg.metric, cfg.conditioning, pert)
        })
        .collect::<Result<_>>()?;
    // Fixed summation order keeps runs bit-reproducible.
    let n = outs.len() as f64;
    let mut grads = w.zero_grads();
    let (mut l, mut r, mut d) = (0.0, 0.0, 0.0);
    for o in &outs {
        grads.add(&o.grads);
        l += o.loss;
        r += o.rate_bits;
        d += o.distortion;
    }
    grads.scale(1.0 / n);
    Ok((l / n, r / n, d / n, grads))
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub weights: ModelWeights,
    pub log: Vec<LogRecord>,
}

/// Trains from `init` (or fresh weights seeded by `cfg.seed`). `on_record`
/// sees every log record as it is produced.
pub fn train(
    data: &Dataset,
    cfg: &TrainConfig,
    init: Option<ModelWeights>,
    mut on_record: impl FnMut(&LogRecord),
) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut w = match init {
        Some(mut w) => {
            w.lambda = cfg.lambda;
            w
        }
        None => ModelWeights::init(cfg.profile.arch(), cfg.lambda, cfg.seed)?,
    };
    let mut adam = AdamState::new(w.params().iter().map(|p| p.len()), cfg.lr_at(0));
    let pixels = (cfg.crop * cfg.crop) as f64;
    let mut log = Vec::with_capacity(cfg.total_iterations() as usize);
    let mut initial = None;
    let mut above = 0u64;
    for iter in 0..cfg.total_iterations() {
        let (loss, rate, dist, grads) = batch_step(&w, data, cfg, iter).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("iteration {iter}: {m}")),
            e => e,
        })?;
        let lr = cfg.lr_at(iter);
        let rec = LogRecord {
            iter,
            loss,
            rate_bits: rate,
            distortion: dist,
            bpp_estimate: rate / pixels,
            lr,
        };
        on_record(&rec);
        log.push(rec);
        let l0 = *initial.get_or_insert(loss);
        if loss > 10.0 * l0 {
            above += 1;
            if above >= cfg.divergence_window {
                return Err(Error::Diverged {
                    iteration: iter as usize,
                    loss,
                    limit: 10.0 * l0,
                });
            }
        } else {
            above = 0;
        }
        adam.lr = lr;
        adam_step(&mut w.params_mut(), &grads.flat(), &mut adam)?;
    }
    w.check_finite()?;
    Ok(TrainOutput { weights: w, log })
}

/// Trailing mean of the loss over `window` iterations.
pub fn smoothed_loss(log: &[LogRecord], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(log.len());
    let mut acc = 0.0;
    for (i, r) in log.iter().enumerate() {
        acc += r.loss;
        if i >= window {
            acc -= log[i - window].loss;
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// Test-time figures: real quantization and coding, averaged over images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Evaluation {
    /// Eq.-6 loss with the model's cross-entropy as `R`.
    pub loss: f64,
    pub estimated_bits: f64,
    pub payload_bits: f64,
    pub distortion: f64,
    pub bpp: f64,
    pub psnr: f64,
}

fn distortion_8bit(a: &Image, b: &Image, metric: Metric) -> Result<f64> {
    Ok(match metric {
        Metric::Mse => {
            let sse: f64 = a.data.iter().zip(&b.data).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum();
            sse / a.data.len() as f64
        }
        Metric::MsSsim => 3000.0 * (1.0 - ms_ssim(a, b)?.value),
    })
}

pub fn evaluate(w: &ModelWeights, images: &[Image], metric: Metric) -> Result<Evaluation> {
    let per: Vec<Evaluation> = images
        .iter()
        .map(|img| {
            let enc = encode_image(img, w, CodecOptions::default())?;
            let (ph, pw) = crate::image::padded_dims(img.height, img.width);
            let est = enc.estimate.total_bits();
            let d = distortion_8bit(img, &enc.reconstruction, metric)?;
            let payload = enc.bitstream.payload_bits() as f64;
            Ok(Evaluation {
                loss: loss_total(w.lambda, pw / Y_DOWNSCALE, ph / Y_DOWNSCALE, est, d)?,
                estimated_bits: est,
                payload_bits: payload,
                distortion: d,
                bpp: enc.bitstream.bpp(),
                psnr: crate::metrics::psnr(img, &enc.reconstruction)?,
            })
        })
        .collect::<Result<_>>()?;
    let n = per.len().max(1) as f64;
    let mut avg = Evaluation::default();
    for e in &per {
        avg.loss += e.loss / n;
        avg.estimated_bits += e.estimated_bits / n;
        avg.payload_bits += e.payload_bits / n;
        avg.distortion += e.distortion / n;
        avg.bpp += e.bpp / n;
        avg.psnr += e.psnr / n;
    }
    Ok(avg)
}

/// One seed of the discrete-vs-noisy comparison.
#[derive(Clone, Debug)]
pub struct AblationRun {
    pub seed: u64,
    pub discrete_log: Vec<LogRecord>,
    pub noisy_log: Vec<LogRecord>,
    pub discrete_eval: Evaluation,
    pub noisy_eval: Evaluation,
}

impl AblationRun {
    /// Relative test-time loss change of discrete over noisy conditioning
    /// (negative means discrete is better).
    pub fn final_loss_delta(&self) -> f64 {
        (self.discrete_eval.loss - self.noisy_eval.loss) / self.noisy_eval.loss
    }

    pub fn discrete_wins(&self) -> bool {
        self.discrete_eval.loss <= self.noisy_eval.loss
    }
}

/// Trains both conditioning modes from the same initial weights and data
/// stream for each seed and evaluates them on `eval_images`.
pub fn ablate(data: &Dataset, cfg: &TrainConfig, seeds: &[u64], eval_images: &[Image]) -> Result<Vec<AblationRun>> {
    seeds
        .iter()
        .map(|&seed| {
            let run = |mode: Conditioning| -> Result<(Vec<LogRecord>, Evaluation)> {
                let c = TrainConfig {
                    seed,
                    conditioning: mode,
                    ..cfg.clone()
                };
                let out = train(data, &c, None, |_| {})?;
                Ok((out.log, evaluate(&out.weights, eval_images, c.metric)?))
            };
            let (discrete_log, discrete_eval) = run(Conditioning::Discrete)?;
            let (noisy_log, noisy_eval) = run(Conditioning::Noisy)?;
            Ok(AblationRun {
                seed,
                discrete_log,
                noisy_log,
                discrete_eval,
                noisy_eval,
            })
        })
        .collect()
}
