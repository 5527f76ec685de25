//! PSNR, MS-SSIM (with gradient, for training) and Bjøntegaard delta rate.

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::tensor::TensorF;

/// PSNR in dB on 8-bit data; `f64::INFINITY` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(invalid(format!(
            "psnr of {}x{} and {}x{} images",
            a.width, a.height, b.width, b.height
        )));
    }
    let sse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&p, &q)| {
            let d = p as f64 - q as f64;
            d * d
        })
        .sum();
    let mse = sse / a.data.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

/// `-10 log10(1 - v)`; `f64::INFINITY` when `v = 1`.
pub fn ms_ssim_db(v: f64) -> f64 {
    if v >= 1.0 {
        f64::INFINITY
    } else {
        -10.0 * (1.0 - v).log10()
    }
}

/// Formats a metric value, writing infinities as `inf`.
pub fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.4}")
    }
}

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const GAUSS_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const L: f64 = 255.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    /// Number of scales used; fewer than 5 when the image is small.
    pub scales: usize,
}

impl MsSsim {
    pub fn reduced(&self) -> bool {
        self.scales < MS_SSIM_WEIGHTS.len()
    }
}

fn gaussian() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * GAUSS_SIGMA * GAUSS_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Scales usable for a `h × w` image: the coarsest must still fit the window.
pub fn ms_ssim_scales(h: usize, w: usize) -> usize {
    let mut d = h.min(w);
    let mut s = 0;
    while s < MS_SSIM_WEIGHTS.len() && d >= WINDOW {
        s += 1;
        d /= 2;
    }
    s
}

/// Separable valid Gaussian filter, per channel.
fn blur(t: &TensorF, g: &[f64; WINDOW]) -> TensorF {
    let (h, w, c) = t.shape();
    let ow = w + 1 - WINDOW;
    let oh = h + 1 - WINDOW;
    let mut mid = TensorF::zeros(h, ow, c);
    for y in 0..h {
        for x in 0..ow {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, gv) in g.iter().enumerate() {
                    acc += gv * t.get(y, x + k, ch);
                }
                mid.set(y, x, ch, acc);
            }
        }
    }
    let mut out = TensorF::zeros(oh, ow, c);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, gv) in g.iter().enumerate() {
                    acc += gv * mid.get(y + k, x, ch);
                }
                out.set(y, x, ch, acc);
            }
        }
    }
    out
}

/// Adjoint of `blur`: spreads an `(h-10) × (w-10)` gradient back to `h × w`.
fn blur_adjoint(g_out: &TensorF, h: usize, w: usize, g: &[f64; WINDOW]) -> TensorF {
    let (oh, ow, c) = g_out.shape();
    let mut mid = TensorF::zeros(h, ow, c);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let v = g_out.get(y, x, ch);
                for (k, gv) in g.iter().enumerate() {
                    let i = mid.index(y + k, x, ch);
                    mid.data_mut()[i] += gv * v;
                }
            }
        }
    }
    let mut out = TensorF::zeros(h, w, c);
    for y in 0..h {
        for x in 0..ow {
            for ch in 0..c {
                let v = mid.get(y, x, ch);
                for (k, gv) in g.iter().enumerate() {
                    let i = out.index(y, x + k, ch);
                    out.data_mut()[i] += gv * v;
                }
            }
        }
    }
    out
}

/// 2×2 average pooling (odd trailing row/column dropped).
fn pool(t: &TensorF) -> TensorF {
    let (h, w, c) = t.shape();
    TensorF::from_fn(h / 2, w / 2, c, |y, x, ch| {
        0.25 * (t.get(2 * y, 2 * x, ch) + t.get(2 * y + 1, 2 * x, ch) + t.get(2 * y, 2 * x + 1, ch) + t.get(2 * y + 1, 2 * x + 1, ch))
    })
}

fn pool_adjoint(g: &TensorF, h: usize, w: usize) -> TensorF {
    let mut out = TensorF::zeros(h, w, g.channels());
    for y in 0..g.height() {
        for x in 0..g.width() {
            for ch in 0..g.channels() {
                let v = 0.25 * g.get(y, x, ch);
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    out.set(2 * y + dy, 2 * x + dx, ch, v);
                }
            }
        }
    }
    out
}

struct ScaleStats {
    a: TensorF,
    b: TensorF,
    mu_a: TensorF,
    mu_b: TensorF,
    cs: Vec<f64>,
    lum: Vec<f64>,
    // Denominators, reused by the backward pass.
    v1: Vec<f64>,
    v2: Vec<f64>,
}

fn scale_stats(a: &TensorF, b: &TensorF, g: &[f64; WINDOW]) -> ScaleStats {
    let c1 = (K1 * L) * (K1 * L);
    let c2 = (K2 * L) * (K2 * L);
    let mu_a = blur(a, g);
    let mu_b = blur(b, g);
    let aa = blur(&a.map(|v| v * v), g);
    let bb = blur(&b.map(|v| v * v), g);
    let ab_prod = TensorF::new(a.height(), a.width(), a.channels(), a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect())
        .expect("same shape");
    let ab = blur(&ab_prod, g);
    let n = mu_a.len();
    let (mut cs, mut lum, mut v1, mut v2) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
        let sa = aa.data()[i] - ma * ma;
        let sb = bb.data()[i] - mb * mb;
        let sab = ab.data()[i] - ma * mb;
        let d2 = sa + sb + c2;
        let d1 = ma * ma + mb * mb + c1;
        cs.push((2.0 * sab + c2) / d2);
        lum.push((2.0 * ma * mb + c1) / d1);
        v1.push(d1);
        v2.push(d2);
    }
    ScaleStats {
        a: a.clone(),
        b: b.clone(),
        mu_a,
        mu_b,
        cs,
        lum,
        v1,
        v2,
    }
}

fn relu_mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.map(|x| x.max(0.0)).sum::<f64>() / n as f64
}

fn check_pair(a: &TensorF, b: &TensorF) -> Result<usize> {
    if a.shape() != b.shape() {
        return Err(invalid("ms_ssim inputs differ in shape"));
    }
    let s = ms_ssim_scales(a.height(), a.width());
    if s == 0 {
        return Err(invalid(format!(
            "ms_ssim needs at least {WINDOW}x{WINDOW} pixels, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    Ok(s)
}

fn weights(scales: usize) -> Vec<f64> {
    let w = &MS_SSIM_WEIGHTS[..scales];
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// MS-SSIM of two tensors on the 0–255 scale. Per scale, contrast-structure
/// (and luminance at the coarsest scale) is averaged over all positions and
/// channels after clamping negative values to 0; weights are renormalized
/// when fewer than five scales fit.
pub fn ms_ssim_tensor(a: &TensorF, b: &TensorF) -> Result<MsSsim> {
    let scales = check_pair(a, b)?;
    let g = gaussian();
    let w = weights(scales);
    let (mut a, mut b) = (a.clone(), b.clone());
    let mut value = 1.0;
    for (s, ws) in w.iter().enumerate() {
        let st = scale_stats(&a, &b, &g);
        let n = st.cs.len();
        let m = if s + 1 == scales {
            relu_mean(st.cs.iter().zip(&st.lum).map(|(c, l)| c * l), n)
        } else {
            relu_mean(st.cs.iter().copied(), n)
        };
        value *= m.powf(*ws);
        if s + 1 < scales {
            a = pool(&a);
            b = pool(&b);
        }
    }
    Ok(MsSsim { value, scales })
}

pub fn ms_ssim(a: &Image, b: &Image) -> Result<MsSsim> {
    let t = |im: &Image| TensorF::from_fn(im.height, im.width, 3, |y, x, c| im.get(y, x, c) as f64);
    ms_ssim_tensor(&t(a), &t(b))
}

/// MS-SSIM and its gradient with respect to `b` (the reconstruction).
pub fn ms_ssim_with_grad(a: &TensorF, b: &TensorF) -> Result<(f64, TensorF)> {
    let scales = check_pair(a, b)?;
    let g = gaussian();
    let w = weights(scales);
    let mut stats = Vec::with_capacity(scales);
    let (mut ca, mut cb) = (a.clone(), b.clone());
    for s in 0..scales {
        let st = scale_stats(&ca, &cb, &g);
        if s + 1 < scales {
            ca = pool(&ca);
            cb = pool(&cb);
        }
        stats.push(st);
    }
    let means: Vec<f64> = stats
        .iter()
        .enumerate()
        .map(|(s, st)| {
            let n = st.cs.len();
            if s + 1 == scales {
                relu_mean(st.cs.iter().zip(&st.lum).map(|(c, l)| c * l), n)
            } else {
                relu_mean(st.cs.iter().copied(), n)
            }
        })
        .collect();
    let value: f64 = means.iter().zip(&w).map(|(m, ws)| m.powf(*ws)).product();

    // Backward, coarsest scale first; gradients w.r.t. each scale's `b`.
    let mut grad_b: Option<TensorF> = None;
    for s in (0..scales).rev() {
        let st = &stats[s];
        let n = st.cs.len();
        let d_mean = if means[s] > 0.0 { value * w[s] / means[s] } else { 0.0 };
        // Per-position derivatives of the averaged quantity with respect to
        // μ_b, E[b²] and E[ab] (all blurred maps of b).
        let (oh, ow, ch) = st.mu_a.shape();
        let mut g_mu_b = TensorF::zeros(oh, ow, ch);
        let mut g_bb = TensorF::zeros(oh, ow, ch);
        let mut g_ab = TensorF::zeros(oh, ow, ch);
        for i in 0..n {
            let last = s + 1 == scales;
            let q = if last { st.cs[i] * st.lum[i] } else { st.cs[i] };
            if q <= 0.0 {
                continue;
            }
            let k = d_mean / n as f64;
            let (ma, mb) = (st.mu_a.data()[i], st.mu_b.data()[i]);
            // cs = (2σ_ab + C2) / (σ_a² + σ_b² + C2)
            // σ_b² = E[b²] - μ_b², σ_ab = E[ab] - μ_a μ_b
            let dcs_dsab = 2.0 / st.v2[i];
            let dcs_dsb = -st.cs[i] / st.v2[i];
            let (f_cs, f_lum) = if last { (st.lum[i], st.cs[i]) } else { (1.0, 0.0) };
            let g_sab = k * f_cs * dcs_dsab;
            let g_sb = k * f_cs * dcs_dsb;
            // lum = (2 μ_a μ_b + C1) / (μ_a² + μ_b² + C1)
            let dl_dmb = (2.0 * ma - st.lum[i] * 2.0 * mb) / st.v1[i];
            let g_mb_direct = k * f_lum * dl_dmb;
            g_ab.data_mut()[i] = g_sab;
            g_bb.data_mut()[i] = g_sb;
            g_mu_b.data_mut()[i] = g_mb_direct - g_sab * ma - g_sb * 2.0 * mb;
        }
        let (h, wd, _) = st.b.shape();
        let e_mu = blur_adjoint(&g_mu_b, h, wd, &g);
        let e_bb = blur_adjoint(&g_bb, h, wd, &g);
        let e_ab = blur_adjoint(&g_ab, h, wd, &g);
        let mut gb = TensorF::zeros(h, wd, ch);
        for i in 0..gb.len() {
            gb.data_mut()[i] = e_mu.data()[i] + 2.0 * st.b.data()[i] * e_bb.data()[i] + st.a.data()[i] * e_ab.data()[i];
        }
        if let Some(coarse) = grad_b.take() {
            gb.add_assign(&pool_adjoint(&coarse, h, wd))?;
        }
        grad_b = Some(gb);
    }
    Ok((value, grad_b.expect("at least one scale")))
}

/// One rate-distortion point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    pub bpp: f64,
    pub quality: f64,
}

/// Fit used for a BD-rate curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BdFit {
    /// Monotone piecewise-cubic Hermite interpolation (four or more points).
    Pchip,
    /// Interpolating polynomial of degree `n - 1` (two or three points).
    Polynomial,
}

pub fn bd_fit_for(points: usize) -> BdFit {
    if points >= 4 {
        BdFit::Pchip
    } else {
        BdFit::Polynomial
    }
}

struct Curve {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
    let d: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        if d[i - 1] * d[i] > 0.0 {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() {
            0.0
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            s
        }
    };
    if n == 2 {
        m[0] = d[0];
        m[1] = d[0];
    } else {
        m[0] = end(h[0], h[1], d[0], d[1]);
        m[n - 1] = end(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
    }
    m
}

impl Curve {
    fn new(points: &[RdPoint]) -> Result<Self> {
        if points.len() < 2 {
            return Err(invalid("BD-rate needs at least two points per curve"));
        }
        let mut p: Vec<(f64, f64)> = points
            .iter()
            .map(|p| {
                if p.bpp > 0.0 && p.quality.is_finite() {
                    Ok((p.quality, p.bpp.ln()))
                } else {
                    Err(invalid("BD-rate points need bpp > 0 and finite quality"))
                }
            })
            .collect::<Result<_>>()?;
        p.sort_by(|a, b| a.0.total_cmp(&b.0));
        if p.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid("BD-rate curve has repeated quality values"));
        }
        let x: Vec<f64> = p.iter().map(|v| v.0).collect();
        let y: Vec<f64> = p.iter().map(|v| v.1).collect();
        let slopes = if bd_fit_for(x.len()) == BdFit::Pchip { pchip_slopes(&x, &y) } else { Vec::new() };
        Ok(Self { x, y, slopes })
    }

    fn eval(&self, t: f64) -> f64 {
        if self.slopes.is_empty() {
            // Lagrange form of the interpolating polynomial.
            let n = self.x.len();
            (0..n)
                .map(|i| {
                    let mut l = 1.0;
                    for j in 0..n {
                        if j != i {
                            l *= (t - self.x[j]) / (self.x[i] - self.x[j]);
                        }
                    }
                    l * self.y[i]
                })
                .sum()
        } else {
            let n = self.x.len();
            let i = self.x.partition_point(|&v| v <= t).clamp(1, n - 1) - 1;
            let h = self.x[i + 1] - self.x[i];
            let s = (t - self.x[i]) / h;
            let (s2, s3) = (s * s, s * s * s);
            (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[i]
                + (s3 - 2.0 * s2 + s) * h * self.slopes[i]
                + (-2.0 * s3 + 3.0 * s2) * self.y[i + 1]
                + (s3 - s2) * h * self.slopes[i + 1]
        }
    }

    /// Exact integral over `[lo, hi]`: Simpson's rule is exact for cubics,
    /// applied per Hermite segment (or once for the polynomial fit).
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let simpson = |a: f64, b: f64| (b - a) / 6.0 * (self.eval(a) + 4.0 * self.eval(0.5 * (a + b)) + self.eval(b));
        if self.slopes.is_empty() {
            return simpson(lo, hi);
        }
        let mut cuts = vec![lo];
        cuts.extend(self.x.iter().copied().filter(|&v| v > lo && v < hi));
        cuts.push(hi);
        cuts.windows(2).map(|w| simpson(w[0], w[1])).sum()
    }
}

/// Average rate difference (percent) of `test` against `anchor` at equal
/// quality; negative means `test` needs fewer bits.
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    let a = Curve::new(anchor)?;
    let t = Curve::new(test)?;
    let lo = a.x[0].max(t.x[0]);
    let hi = a.x[a.x.len() - 1].min(t.x[t.x.len() - 1]);
    if !(hi > lo) {
        return Err(invalid("BD-rate curves have no overlapping quality range"));
    }
    let avg = (t.integral(lo, hi) - a.integral(lo, hi)) / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}
