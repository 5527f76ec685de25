//! Strided 2-D convolution and its transpose.
//!
//! Both directions share one geometry: a down convolution maps the "big"
//! grid to the "small" grid, and an up (transposed) convolution is its exact
//! adjoint. Weights are stored `[kh][kw][c_big][c_small]` for either
//! direction, so an up layer and a down layer with the same weights satisfy
//! `<down(x), y> = <x, up(y)>`.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::tensor::{Param, TensorF};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Down,
    Up,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Gdn,
    Igdn,
    Relu,
    Exp,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    Same,
    Valid,
}

/// Which inner kernel evaluates a convolution.
///
/// `Reference` accumulates in a fixed order with no blocking, so its output
/// depends only on IEEE arithmetic. `Gemm` lowers to im2col plus a blocked
/// matrix product and is much faster.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKernel {
    Gemm,
    Reference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvLayerSpec {
    pub filter_count: usize,
    pub filter_h: usize,
    pub filter_w: usize,
    pub stride: usize,
    pub direction: Direction,
    pub activation: Activation,
    pub padding: Padding,
}

impl ConvLayerSpec {
    pub fn down(filters: usize, k: usize, stride: usize, activation: Activation) -> Self {
        Self {
            filter_count: filters,
            filter_h: k,
            filter_w: k,
            stride,
            direction: Direction::Down,
            activation,
            padding: Padding::Same,
        }
    }

    pub fn up(filters: usize, k: usize, stride: usize, activation: Activation) -> Self {
        Self {
            direction: Direction::Up,
            ..Self::down(filters, k, stride, activation)
        }
    }

    pub fn valid(filters: usize, k: usize, activation: Activation) -> Self {
        Self {
            padding: Padding::Valid,
            ..Self::down(filters, k, 1, activation)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(invalid("conv stride must be >= 1"));
        }
        if self.filter_h == 0 || self.filter_w == 0 || self.filter_count == 0 {
            return Err(invalid("conv filter dimensions must be >= 1"));
        }
        Ok(())
    }

    pub fn output_dims(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let g = Geometry::new(self, in_h, in_w)?;
        Ok(match self.direction {
            Direction::Down => (g.small_h, g.small_w),
            Direction::Up => (g.big_h, g.big_w),
        })
    }
}

/// Index bookkeeping shared by a down convolution and its adjoint.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub big_h: usize,
    pub big_w: usize,
    pub small_h: usize,
    pub small_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn same_pad(big: usize, small: usize, k: usize, s: usize) -> usize {
    ((small - 1) * s + k).saturating_sub(big) / 2
}

impl Geometry {
    pub fn new(spec: &ConvLayerSpec, in_h: usize, in_w: usize) -> Result<Self> {
        spec.validate()?;
        let (kh, kw, s) = (spec.filter_h, spec.filter_w, spec.stride);
        if in_h == 0 || in_w == 0 {
            return Err(invalid("conv input must be non-empty"));
        }
        let (big_h, big_w, small_h, small_w) = match (spec.direction, spec.padding) {
            (Direction::Down, Padding::Same) => (in_h, in_w, in_h.div_ceil(s), in_w.div_ceil(s)),
            (Direction::Down, Padding::Valid) => {
                if in_h < kh || in_w < kw {
                    return Err(Error::ShapeMismatch {
                        op: "conv2d",
                        dim: "input smaller than filter",
                        got: in_h.min(in_w),
                        expected: kh.max(kw),
                    });
                }
                (in_h, in_w, (in_h - kh) / s + 1, (in_w - kw) / s + 1)
            }
            (Direction::Up, Padding::Same) => (in_h * s, in_w * s, in_h, in_w),
            (Direction::Up, Padding::Valid) => {
                ((in_h - 1) * s + kh, (in_w - 1) * s + kw, in_h, in_w)
            }
        };
        let (pad_top, pad_left) = match spec.padding {
            Padding::Same => (same_pad(big_h, small_h, kh, s), same_pad(big_w, small_w, kw, s)),
            Padding::Valid => (0, 0),
        };
        Ok(Self {
            big_h,
            big_w,
            small_h,
            small_w,
            kh,
            kw,
            stride: s,
            pad_top,
            pad_left,
        })
    }

    /// Big-grid coordinate touched by small position `o` and tap `k`.
    #[inline]
    fn tap(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        let v = (o * self.stride + k) as isize - pad as isize;
        (v >= 0 && (v as usize) < limit).then_some(v as usize)
    }

    #[inline]
    fn tap_y(&self, oy: usize, ky: usize) -> Option<usize> {
        self.tap(oy, ky, self.pad_top, self.big_h)
    }

    #[inline]
    fn tap_x(&self, ox: usize, kx: usize) -> Option<usize> {
        self.tap(ox, kx, self.pad_left, self.big_w)
    }
}

/// `C = A·B + beta·C` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len());
        assert!(last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Unfolds the big grid into a `(small_h·small_w) × (kh·kw·c)` matrix.
fn im2col(big: &TensorF, g: &Geometry) -> Vec<f64> {
    let c = big.channels();
    let k = g.kh * g.kw * c;
    let mut col = vec![0.0; g.small_h * g.small_w * k];
    for oy in 0..g.small_h {
        for ox in 0..g.small_w {
            let row = &mut col[(oy * g.small_w + ox) * k..][..k];
            for ky in 0..g.kh {
                let Some(iy) = g.tap_y(oy, ky) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.tap_x(ox, kx) else { continue };
                    let dst = (ky * g.kw + kx) * c;
                    row[dst..dst + c].copy_from_slice(big.pixel(iy, ix));
                }
            }
        }
    }
    col
}

/// Adjoint of `im2col`: scatters and accumulates rows back onto the big grid.
fn col2im_add(col: &[f64], g: &Geometry, big: &mut TensorF) {
    let c = big.channels();
    let k = g.kh * g.kw * c;
    for oy in 0..g.small_h {
        for ox in 0..g.small_w {
            let row = &col[(oy * g.small_w + ox) * k..][..k];
            for ky in 0..g.kh {
                let Some(iy) = g.tap_y(oy, ky) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.tap_x(ox, kx) else { continue };
                    let src = (ky * g.kw + kx) * c;
                    for (d, s) in big.pixel_mut(iy, ix).iter_mut().zip(&row[src..src + c]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn fill_bias(t: &mut TensorF, bias: &[f64]) {
    let c = t.channels();
    for px in t.data_mut().chunks_exact_mut(c) {
        px.copy_from_slice(bias);
    }
}

fn down_gemm(big: &TensorF, w: &[f64], bias: &[f64], g: &Geometry, c_small: usize) -> TensorF {
    let k = g.kh * g.kw * big.channels();
    let col = im2col(big, g);
    let mut out = TensorF::zeros(g.small_h, g.small_w, c_small);
    fill_bias(&mut out, bias);
    let p = g.small_h * g.small_w;
    gemm(p, k, c_small, &col, (k, 1), w, (c_small, 1), 1.0, out.data_mut(), (c_small, 1));
    out
}

fn up_gemm(small: &TensorF, w: &[f64], bias: &[f64], g: &Geometry, c_big: usize) -> TensorF {
    let cs = small.channels();
    let k = g.kh * g.kw * c_big;
    let p = g.small_h * g.small_w;
    let mut col = vec![0.0; p * k];
    gemm(p, cs, k, small.data(), (cs, 1), w, (1, cs), 0.0, &mut col, (k, 1));
    let mut out = TensorF::zeros(g.big_h, g.big_w, c_big);
    fill_bias(&mut out, bias);
    col2im_add(&col, g, &mut out);
    out
}

fn down_reference(big: &TensorF, w: &[f64], bias: &[f64], g: &Geometry, c_small: usize) -> TensorF {
    let c_big = big.channels();
    let mut out = TensorF::zeros(g.small_h, g.small_w, c_small);
    fill_bias(&mut out, bias);
    for oy in 0..g.small_h {
        for ox in 0..g.small_w {
            let acc = out.pixel_mut(oy, ox);
            for ky in 0..g.kh {
                let Some(iy) = g.tap_y(oy, ky) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.tap_x(ox, kx) else { continue };
                    let base = (ky * g.kw + kx) * c_big * c_small;
                    for (ci, &xv) in big.pixel(iy, ix).iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &w[base + ci * c_small..][..c_small];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv;
                        }
                    }
                }
            }
        }
    }
    out
}

fn up_reference(small: &TensorF, w: &[f64], bias: &[f64], g: &Geometry, c_big: usize) -> TensorF {
    let cs = small.channels();
    let mut out = TensorF::zeros(g.big_h, g.big_w, c_big);
    fill_bias(&mut out, bias);
    for sy in 0..g.small_h {
        for sx in 0..g.small_w {
            let xs = small.pixel(sy, sx);
            for ky in 0..g.kh {
                let Some(by) = g.tap_y(sy, ky) else { continue };
                for kx in 0..g.kw {
                    let Some(bx) = g.tap_x(sx, kx) else { continue };
                    let base = (ky * g.kw + kx) * c_big * cs;
                    let dst = out.pixel_mut(by, bx);
                    for (cb, d) in dst.iter_mut().enumerate() {
                        let wrow = &w[base + cb * cs..][..cs];
                        let mut acc = 0.0;
                        for (&xv, &wv) in xs.iter().zip(wrow) {
                            acc += xv * wv;
                        }
                        *d += acc;
                    }
                }
            }
        }
    }
    out
}

/// Channel counts on the big and small side of a layer.
fn sides(spec: &ConvLayerSpec, in_channels: usize) -> (usize, usize) {
    match spec.direction {
        Direction::Down => (in_channels, spec.filter_count),
        Direction::Up => (spec.filter_count, in_channels),
    }
}

fn check_weights(spec: &ConvLayerSpec, in_channels: usize, weight: &Param, bias: &[f64]) -> Result<()> {
    let (c_big, c_small) = sides(spec, in_channels);
    let expected = vec![spec.filter_h, spec.filter_w, c_big, c_small];
    if weight.shape != expected {
        let dim = if weight.shape.len() == 4 && weight.shape[..2] == expected[..2] {
            "weight input channels"
        } else {
            "weight shape"
        };
        let (got, want) = match dim {
            "weight input channels" => match spec.direction {
                Direction::Down => (weight.shape[2], c_big),
                Direction::Up => (weight.shape[3], c_small),
            },
            _ => (weight.len(), expected.iter().product()),
        };
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            dim,
            got,
            expected: want,
        });
    }
    if bias.len() != spec.filter_count {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            dim: "bias length",
            got: bias.len(),
            expected: spec.filter_count,
        });
    }
    Ok(())
}

/// Linear part of a convolution layer (the activation is applied by the
/// enclosing network). `weight` has shape `[kh, kw, c_big, c_small]`.
pub fn conv2d(
    input: &TensorF,
    weight: &Param,
    bias: &[f64],
    spec: &ConvLayerSpec,
    kernel: ConvKernel,
) -> Result<TensorF> {
    check_weights(spec, input.channels(), weight, bias)?;
    let g = Geometry::new(spec, input.height(), input.width())?;
    let w = &weight.data;
    Ok(match (spec.direction, kernel) {
        (Direction::Down, ConvKernel::Gemm) => down_gemm(input, w, bias, &g, spec.filter_count),
        (Direction::Down, ConvKernel::Reference) => {
            down_reference(input, w, bias, &g, spec.filter_count)
        }
        (Direction::Up, ConvKernel::Gemm) => up_gemm(input, w, bias, &g, spec.filter_count),
        (Direction::Up, ConvKernel::Reference) => up_reference(input, w, bias, &g, spec.filter_count),
    })
}

/// Gradients of `conv2d` given the saved input. Accumulates into `gw`/`gb`
/// and returns the input gradient.
pub fn conv2d_backward(
    input: &TensorF,
    weight: &Param,
    spec: &ConvLayerSpec,
    grad_out: &TensorF,
    gw: &mut [f64],
    gb: &mut [f64],
) -> Result<TensorF> {
    let g = Geometry::new(spec, input.height(), input.width())?;
    let (c_big, c_small) = sides(spec, input.channels());
    let k = g.kh * g.kw * c_big;
    let p = g.small_h * g.small_w;
    let w = &weight.data;
    match spec.direction {
        Direction::Down => {
            grad_out.ensure_shape("conv2d_backward", (g.small_h, g.small_w, c_small))?;
            let col = im2col(input, &g);
            let gy = grad_out.data();
            gemm(k, p, c_small, &col, (1, k), gy, (c_small, 1), 1.0, gw, (c_small, 1));
            for px in gy.chunks_exact(c_small) {
                for (b, v) in gb.iter_mut().zip(px) {
                    *b += v;
                }
            }
            let mut dcol = vec![0.0; p * k];
            gemm(p, c_small, k, gy, (c_small, 1), w, (1, c_small), 0.0, &mut dcol, (k, 1));
            let mut dx = TensorF::zeros(g.big_h, g.big_w, c_big);
            col2im_add(&dcol, &g, &mut dx);
            Ok(dx)
        }
        Direction::Up => {
            grad_out.ensure_shape("conv2d_backward", (g.big_h, g.big_w, c_big))?;
            let col = im2col(grad_out, &g);
            let x = input.data();
            gemm(k, p, c_small, &col, (1, k), x, (c_small, 1), 1.0, gw, (c_small, 1));
            for px in grad_out.data().chunks_exact(c_big) {
                for (b, v) in gb.iter_mut().zip(px) {
                    *b += v;
                }
            }
            let mut dx = TensorF::zeros(g.small_h, g.small_w, c_small);
            gemm(p, k, c_small, &col, (k, 1), w, (c_small, 1), 0.0, dx.data_mut(), (c_small, 1));
            Ok(dx)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub spec: ConvLayerSpec,
    pub in_channels: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    pub fn new(name: &str, spec: ConvLayerSpec, in_channels: usize, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        if in_channels == 0 {
            return Err(invalid("conv input channels must be >= 1"));
        }
        let (c_big, c_small) = sides(&spec, in_channels);
        let taps = spec.filter_h * spec.filter_w;
        // Effective fan-in of one output sample.
        let fan_in = match spec.direction {
            Direction::Down => taps * c_big,
            Direction::Up => (taps * c_small / (spec.stride * spec.stride)).max(1),
        };
        let bound = (3.0 / fan_in as f64).sqrt();
        let shape = vec![spec.filter_h, spec.filter_w, c_big, c_small];
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Ok(Self {
            spec,
            in_channels,
            weight: Param::new(format!("{name}.weight"), shape, data),
            bias: Param::zeros(format!("{name}.bias"), vec![spec.filter_count]),
        })
    }

    pub fn forward(&self, x: &TensorF, kernel: ConvKernel) -> Result<TensorF> {
        conv2d(x, &self.weight, &self.bias.data, &self.spec, kernel)
    }
}
