//! Image encoder and decoder.
//!
//! Encoder: `y = g_a(x)`, `ŷ = Q(y)`, `z = h_a(ŷ)`, `ẑ = Q(z)`; `ẑ` is coded
//! with the per-channel zero-mean model, then `c' = h_s(ẑ)` and `ŷ` is coded
//! position by position in raster order with `(μ, σ)` from `f`. The hybrid
//! model codes the first `M1` channels that way and the remaining `M2` in a
//! second stream with zero mean and `σ2` from `h_s`.
//!
//! The decoder mirrors this, rebuilding `⟨ŷ⟩` one position at a time.

use std::time::{Duration, Instant};

use crate::codec::arith::{ArithDecoder, ArithEncoder};
use crate::codec::bitstream::{Bitstream, Header};
use crate::codec::cdf::{build_cdf, QuantizedCdf};
use crate::entropy::estimator::{estimate_grid, estimate_position, EntropyParams};
use crate::entropy::latent::{quantize, Bounds, LatentGrid};
use crate::entropy::rate::{rate_scale_only, rate_y, rate_z, RateBreakdown};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::TensorF;
use crate::transforms::{ga_forward, gs_forward, ha_forward, hs_forward, ModelWeights};

/// Share of clamped latents above which callers should warn.
pub const CLAMP_WARN_RATE: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default)]
pub struct CodecOptions {
    /// Embed a CRC32 of every coding table so the decoder can verify that it
    /// rebuilt the same tables.
    pub checksums: bool,
}

/// Wall time per pipeline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimes {
    /// `g_a`, `h_a`, `h_s`, `g_s`.
    pub transforms: Duration,
    /// Estimator evaluations and table construction.
    pub context: Duration,
    /// Arithmetic coding proper.
    pub coder: Duration,
}

impl StageTimes {
    pub fn total(&self) -> Duration {
        self.transforms + self.context + self.coder
    }

    pub fn add(&mut self, o: &StageTimes) {
        self.transforms += o.transforms;
        self.context += o.context;
        self.coder += o.coder;
    }
}

fn timed<T>(acc: &mut Duration, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    *acc += t.elapsed();
    out
}

#[derive(Clone, Debug)]
pub struct Encoded {
    pub bitstream: Bitstream,
    pub y_hat: LatentGrid,
    pub z_hat: LatentGrid,
    /// Reconstruction computed on the encoder side from `ŷ`.
    pub reconstruction: Image,
    /// Model rate `Σ -log2 p` per part.
    pub estimate: RateBreakdown,
    /// `Σ -log2 q` under the integer tables actually used.
    pub table_bits: f64,
    pub clamped: usize,
    pub times: StageTimes,
}

impl Encoded {
    pub fn clamp_rate(&self) -> f64 {
        self.clamped as f64 / (self.y_hat.values().len() + self.z_hat.values().len()) as f64
    }
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub image: Image,
    pub y_hat: LatentGrid,
    pub z_hat: LatentGrid,
    pub times: StageTimes,
}

fn z_tables(w: &ModelWeights, bounds: Bounds) -> Vec<QuantizedCdf> {
    w.z_scales().iter().map(|&s| build_cdf(0.0, s, bounds)).collect()
}

struct Coder {
    enc: ArithEncoder,
    bits: f64,
    checksums: Option<Vec<u32>>,
}

impl Coder {
    fn new(checksums: bool) -> Self {
        Self {
            enc: ArithEncoder::new(),
            bits: 0.0,
            checksums: checksums.then(Vec::new),
        }
    }

    fn put(&mut self, cdf: &QuantizedCdf, v: i32) {
        self.bits -= cdf.probability(v).log2();
        if let Some(c) = self.checksums.as_mut() {
            c.push(cdf.checksum());
        }
        self.enc.encode(cdf, cdf.bin_of_value(v));
    }
}

pub fn encode_image(img: &Image, w: &ModelWeights, opts: CodecOptions) -> Result<Encoded> {
    let bounds = Bounds::DEFAULT;
    let mut times = StageTimes::default();
    let x = img.to_padded_tensor();

    let y = timed(&mut times.transforms, || ga_forward(&x, w, None))?;
    let qy = quantize(&y, bounds);
    let y_hat_t = qy.grid.to_tensor();
    let z = timed(&mut times.transforms, || ha_forward(&y_hat_t, w, None))?;
    let qz = quantize(&z, bounds);
    let z_hat_t = qz.grid.to_tensor();
    let hs = timed(&mut times.transforms, || hs_forward(&z_hat_t, w, w.entropy_kernel(), None))?;

    let mc = w.arch.modeled_channels();
    let (y1, y2) = match w.arch.split {
        Some(_) => (qy.grid.channel_slice(0, mc), Some(qy.grid.channel_slice(mc, w.arch.m))),
        None => (qy.grid.clone(), None),
    };
    let y1_t = y1.to_tensor();
    let params: EntropyParams = timed(&mut times.context, || estimate_grid(&hs.context, &y1_t, w))?;

    let mut estimate = RateBreakdown {
        y1: rate_y(&y1_t, &params)?,
        z: rate_z(&z_hat_t, &w.z_scales())?,
        ..Default::default()
    };

    // ẑ
    let ztab = timed(&mut times.context, || z_tables(w, bounds));
    let mut zc = Coder::new(opts.checksums);
    timed(&mut times.coder, || {
        for px in qz.grid.values().chunks_exact(qz.grid.channels()) {
            for (v, t) in px.iter().zip(&ztab) {
                zc.put(t, *v);
            }
        }
    });

    // ŷ (or y1), context-conditioned.
    let mut yc = Coder::new(opts.checksums);
    let (h, wd, _) = y1.shape();
    for l in 0..h {
        for k in 0..wd {
            let tables: Vec<QuantizedCdf> = timed(&mut times.context, || {
                params
                    .mu
                    .pixel(l, k)
                    .iter()
                    .zip(params.sigma.pixel(l, k))
                    .map(|(&m, &s)| build_cdf(m, s, bounds))
                    .collect()
            });
            timed(&mut times.coder, || {
                for (v, t) in y1.pixel(l, k).iter().zip(&tables) {
                    yc.put(t, *v);
                }
            });
        }
    }

    // y2, zero mean with σ2 from h_s.
    let mut y2c = Coder::new(opts.checksums);
    if let Some(y2) = &y2 {
        let sigma2 = hs.sigma2.as_ref().expect("hybrid h_s yields σ2");
        estimate.y2 = rate_scale_only(&y2.to_tensor(), sigma2)?;
        for (px, sp) in y2.values().chunks_exact(y2.channels()).zip(sigma2.data().chunks_exact(y2.channels())) {
            let tables: Vec<QuantizedCdf> =
                timed(&mut times.context, || sp.iter().map(|&s| build_cdf(0.0, s, bounds)).collect());
            timed(&mut times.coder, || {
                for (v, t) in px.iter().zip(&tables) {
                    y2c.put(t, *v);
                }
            });
        }
    }

    let x_hat = timed(&mut times.transforms, || gs_forward(&y_hat_t, w, None))?;
    let reconstruction = Image::from_tensor(&x_hat, img.width, img.height)?;

    let table_bits = zc.bits + yc.bits + y2c.bits;
    let mut checksums = Vec::new();
    for c in [&mut zc, &mut yc, &mut y2c] {
        checksums.extend(c.checksums.take().unwrap_or_default());
    }
    let z_bytes = timed(&mut times.coder, || zc.enc.finish());
    let y1_bytes = timed(&mut times.coder, || yc.enc.finish());
    let y2_bytes = if y2.is_some() { y2c.enc.finish() } else { Vec::new() };

    let header = Header {
        profile_id: w.profile().id(),
        width: img.width as u32,
        height: img.height as u32,
        hybrid: w.arch.hybrid(),
        lambda_id: w.lambda_id(),
    };
    Ok(Encoded {
        bitstream: Bitstream {
            header,
            z: z_bytes,
            y1: y1_bytes,
            y2: y2_bytes,
            checksums,
        },
        y_hat: qy.grid,
        z_hat: qz.grid,
        reconstruction,
        estimate,
        table_bits,
        clamped: qy.clamped + qz.clamped,
        times,
    })
}

/// Checks that a stream was produced by a model with this architecture.
pub fn check_compatible(header: &Header, w: &ModelWeights) -> Result<()> {
    if header.profile_id != w.profile().id() {
        return Err(Error::ConfigMismatch(format!(
            "stream profile id {} but weights are profile {} (id {})",
            header.profile_id,
            w.profile().name(),
            w.profile().id()
        )));
    }
    if header.hybrid != w.arch.hybrid() {
        return Err(Error::ConfigMismatch(format!(
            "stream hybrid flag {} does not match weights",
            header.hybrid
        )));
    }
    if header.lambda_id != w.lambda_id() {
        return Err(Error::ConfigMismatch(format!(
            "stream lambda id {} but weights have lambda id {}",
            header.lambda_id,
            w.lambda_id()
        )));
    }
    Ok(())
}

struct Reader<'a> {
    dec: ArithDecoder<'a>,
    checksums: Option<&'a [u32]>,
    index: usize,
    stream: &'static str,
}

impl<'a> Reader<'a> {
    fn get(&mut self, cdf: &QuantizedCdf) -> Result<i32> {
        if let Some(sums) = self.checksums {
            match sums.get(self.index) {
                Some(&c) if c == cdf.checksum() => {}
                _ => return Err(Error::CdfMismatch { position: self.index }),
            }
        }
        self.index += 1;
        let pos = self.dec.position();
        let bin = self.dec.decode(cdf);
        cdf.value_of_bin(bin).ok_or_else(|| Error::CorruptStream {
            position: pos,
            reason: format!("{} stream decoded a tail bin", self.stream),
        })
    }

    fn finish(self) -> Result<usize> {
        let index = self.index;
        self.dec.finish()?;
        Ok(index)
    }
}

pub fn decode_image(bs: &Bitstream, w: &ModelWeights) -> Result<Decoded> {
    check_compatible(&bs.header, w)?;
    let bounds = Bounds::DEFAULT;
    let mut times = StageTimes::default();
    let (yh, yw) = bs.header.y_dims();
    let (zh, zw) = bs.header.z_dims();
    let n = w.z_channels();
    let mc = w.arch.modeled_channels();
    let sums = (!bs.checksums.is_empty()).then_some(&bs.checksums[..]);

    let ztab = timed(&mut times.context, || z_tables(w, bounds));
    let mut r = Reader {
        dec: ArithDecoder::new(&bs.z),
        checksums: sums,
        index: 0,
        stream: "z",
    };
    let mut zvals = Vec::with_capacity(zh * zw * n);
    let t0 = Instant::now();
    for _ in 0..zh * zw {
        for t in &ztab {
            zvals.push(r.get(t)?);
        }
    }
    times.coder += t0.elapsed();
    let used = r.finish()?;
    let z_hat = LatentGrid::new(zh, zw, n, zvals, bounds)?;

    let hs = timed(&mut times.transforms, || hs_forward(&z_hat.to_tensor(), w, w.entropy_kernel(), None))?;
    if hs.context.height() != yh || hs.context.width() != yw {
        return Err(Error::ConfigMismatch("h_s output does not match header dimensions".into()));
    }

    let mut r = Reader {
        dec: ArithDecoder::new(&bs.y1),
        checksums: sums,
        index: used,
        stream: "y",
    };
    let mut known = TensorF::zeros(yh, yw, mc);
    let mut y1 = LatentGrid::zeros(yh, yw, mc, bounds);
    let mut px = vec![0i32; mc];
    for l in 0..yh {
        for k in 0..yw {
            let tables: Vec<QuantizedCdf> = timed(&mut times.context, || -> Result<_> {
                let (mu, sigma) = estimate_position(&hs.context, &known, k, l, w)?;
                Ok(mu.iter().zip(&sigma).map(|(&m, &s)| build_cdf(m, s, bounds)).collect())
            })?;
            let t0 = Instant::now();
            for (slot, t) in px.iter_mut().zip(&tables) {
                *slot = r.get(t)?;
            }
            times.coder += t0.elapsed();
            y1.set_pixel(l, k, &px);
            for (dst, &v) in known.pixel_mut(l, k).iter_mut().zip(&px) {
                *dst = v as f64;
            }
        }
    }
    let used = r.finish()?;

    let y_hat = match w.arch.split {
        None => {
            if !bs.y2.is_empty() {
                return Err(Error::CorruptStream {
                    position: 0,
                    reason: "y2 payload in a non-hybrid stream".into(),
                });
            }
            y1
        }
        Some((_, m2)) => {
            let sigma2 = hs.sigma2.as_ref().expect("hybrid h_s yields σ2");
            let mut r = Reader {
                dec: ArithDecoder::new(&bs.y2),
                checksums: sums,
                index: used,
                stream: "y2",
            };
            let mut vals = Vec::with_capacity(yh * yw * m2);
            for sp in sigma2.data().chunks_exact(m2) {
                let tables: Vec<QuantizedCdf> =
                    timed(&mut times.context, || sp.iter().map(|&s| build_cdf(0.0, s, bounds)).collect());
                let t0 = Instant::now();
                for t in &tables {
                    vals.push(r.get(t)?);
                }
                times.coder += t0.elapsed();
            }
            let used = r.finish()?;
            if let Some(s) = sums {
                if used != s.len() {
                    return Err(Error::CdfMismatch { position: used });
                }
            }
            let y2 = LatentGrid::new(yh, yw, m2, vals, bounds)?;
            LatentGrid::concat_channels(&y1, &y2)?
        }
    };
    if w.arch.split.is_none() {
        if let Some(s) = sums {
            if used != s.len() {
                return Err(Error::CdfMismatch { position: used });
            }
        }
    }

    let x_hat = timed(&mut times.transforms, || gs_forward(&y_hat.to_tensor(), w, None))?;
    let image = Image::from_tensor(&x_hat, bs.header.width as usize, bs.header.height as usize)?;
    Ok(Decoded {
        image,
        y_hat,
        z_hat,
        times,
    })
}
