//! Analysis/synthesis transforms `g_a`, `g_s`, `h_a`, `h_s` and the model
//! parameter set.
//!
//! Spatial bookkeeping: `g_a` reduces 16× (four stride-2 stages), `h_a`
//! reduces a further 4×, and the synthesis transforms undo exactly that.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::math;
use crate::nn::{Activation, ConvKernel, ConvLayerSpec, Sequential, Tape};
use crate::tensor::{Param, TensorF};

pub const Y_DOWNSCALE: usize = 16;
pub const Z_DOWNSCALE: usize = 4;
/// Image sides must be multiples of this.
pub const BLOCK: usize = Y_DOWNSCALE * Z_DOWNSCALE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Profile {
    Tiny,
    Base,
    Hybrid320,
    Hybrid400,
    Custom,
}

impl Profile {
    pub const ALL: [Profile; 4] = [Profile::Tiny, Profile::Base, Profile::Hybrid320, Profile::Hybrid400];

    pub fn id(self) -> u8 {
        match self {
            Profile::Tiny => 0,
            Profile::Base => 1,
            Profile::Hybrid320 => 2,
            Profile::Hybrid400 => 3,
            Profile::Custom => 255,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        Ok(match id {
            0 => Profile::Tiny,
            1 => Profile::Base,
            2 => Profile::Hybrid320,
            3 => Profile::Hybrid400,
            255 => Profile::Custom,
            _ => return Err(invalid(format!("unknown profile id {id}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Tiny => "tiny",
            Profile::Base => "base",
            Profile::Hybrid320 => "hybrid-320",
            Profile::Hybrid400 => "hybrid-400",
            Profile::Custom => "custom",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        [Profile::Tiny, Profile::Base, Profile::Hybrid320, Profile::Hybrid400, Profile::Custom]
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| invalid(format!("unknown profile '{name}'")))
    }

    pub fn arch(self) -> ArchConfig {
        match self {
            Profile::Tiny => ArchConfig::standard(self, 32, 48, None),
            Profile::Base => ArchConfig::standard(self, 128, 192, None),
            Profile::Hybrid320 => ArchConfig::standard(self, 320, 420, Some((192, 228))),
            Profile::Hybrid400 => ArchConfig::standard(self, 400, 600, Some((192, 408))),
            Profile::Custom => ArchConfig::standard(self, 32, 48, None),
        }
    }
}

/// Network shapes. The layer lists are authoritative; `n`, `m` and the
/// split only describe them.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    pub profile: Profile,
    pub n: usize,
    pub m: usize,
    /// `(M1, M2)` channel split for the hybrid model.
    pub split: Option<(usize, usize)>,
    pub ga: Vec<ConvLayerSpec>,
    pub gs: Vec<ConvLayerSpec>,
    pub ha: Vec<ConvLayerSpec>,
    pub hs: Vec<ConvLayerSpec>,
    pub f: Vec<ConvLayerSpec>,
}

impl ArchConfig {
    /// Four-stage GDN analysis/synthesis pair with a three-stage hyperprior;
    /// `h_s` ends in exponentiation (base model) or a linear layer whose
    /// scale channels are exponentiated separately (hybrid model).
    pub fn standard(profile: Profile, n: usize, m: usize, split: Option<(usize, usize)>) -> Self {
        use Activation::*;
        let modeled = split.map_or(m, |(m1, _)| m1);
        let hs_out = match split {
            Some((m1, m2)) => ConvLayerSpec::up(m1 + m2, 3, 1, Linear),
            None => ConvLayerSpec::up(m, 3, 1, Exp),
        };
        let f_width = 2 * modeled;
        Self {
            profile,
            n,
            m,
            split,
            ga: vec![
                ConvLayerSpec::down(n, 5, 2, Gdn),
                ConvLayerSpec::down(n, 5, 2, Gdn),
                ConvLayerSpec::down(n, 5, 2, Gdn),
                ConvLayerSpec::down(m, 5, 2, Linear),
            ],
            gs: vec![
                ConvLayerSpec::up(n, 5, 2, Igdn),
                ConvLayerSpec::up(n, 5, 2, Igdn),
                ConvLayerSpec::up(n, 5, 2, Igdn),
                ConvLayerSpec::up(3, 5, 2, Linear),
            ],
            ha: vec![
                ConvLayerSpec::down(n, 3, 1, Relu),
                ConvLayerSpec::down(n, 5, 2, Relu),
                ConvLayerSpec::down(n, 5, 2, Linear),
            ],
            hs: vec![
                ConvLayerSpec::up(n, 5, 2, Relu),
                ConvLayerSpec::up(n, 5, 2, Relu),
                hs_out,
            ],
            f: vec![
                ConvLayerSpec::valid(f_width, 2, Relu),
                ConvLayerSpec::valid(f_width, 2, Relu),
                ConvLayerSpec::valid(2 * modeled, 2, Linear),
            ],
        }
    }

    pub fn hybrid(&self) -> bool {
        self.split.is_some()
    }

    /// Channels coded with the context-adaptive model (`M`, or `M1`).
    pub fn modeled_channels(&self) -> usize {
        self.split.map_or(self.m, |(m1, _)| m1)
    }

    /// Channels of the bit-consuming context `c'`.
    pub fn context_channels(&self) -> usize {
        self.modeled_channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(invalid("N and M must be positive"));
        }
        if let Some((m1, m2)) = self.split {
            if m1 == 0 || m2 == 0 || m1 + m2 != self.m {
                return Err(invalid(format!("hybrid split {m1}+{m2} does not sum to M={}", self.m)));
            }
        }
        let last = |v: &[ConvLayerSpec]| v.last().map(|s| s.filter_count);
        let checks = [
            ("g_a output", last(&self.ga), self.m),
            ("g_s output", last(&self.gs), 3),
            ("h_s output", last(&self.hs), self.context_channels() + self.split.map_or(0, |s| s.1)),
            ("f output", last(&self.f), 2 * self.modeled_channels()),
        ];
        for (what, got, expected) in checks {
            if got != Some(expected) {
                return Err(Error::ConfigMismatch(format!(
                    "{what} has {got:?} channels, expected {expected}"
                )));
            }
        }
        for s in self.ga.iter().chain(&self.gs).chain(&self.ha).chain(&self.hs).chain(&self.f) {
            s.validate()?;
        }
        Ok(())
    }
}

/// Compact tag for a rate-distortion trade-off, stored in stream headers.
pub fn lambda_id(lambda: f64) -> u8 {
    (lambda * 500.0).round().clamp(0.0, 254.0) as u8
}

pub const Z_SIGMA_FLOOR: f64 = 1e-6;

/// Every trainable parameter plus the architecture it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub arch: ArchConfig,
    pub lambda: f64,
    pub ga: Sequential,
    pub gs: Sequential,
    pub ha: Sequential,
    pub hs: Sequential,
    pub f: Sequential,
    /// Per-channel log-scale of the zero-mean model for `ẑ`.
    pub z_log_scale: Param,
}

/// Gradient buffers laid out like `ModelWeights`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub ga: Vec<Vec<f64>>,
    pub gs: Vec<Vec<f64>>,
    pub ha: Vec<Vec<f64>>,
    pub hs: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub z_log_scale: Vec<f64>,
}

impl Grads {
    fn parts(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.ga
            .iter()
            .chain(&self.gs)
            .chain(&self.ha)
            .chain(&self.hs)
            .chain(&self.f)
            .chain(std::iter::once(&self.z_log_scale))
    }

    fn parts_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.ga
            .iter_mut()
            .chain(&mut self.gs)
            .chain(&mut self.ha)
            .chain(&mut self.hs)
            .chain(&mut self.f)
            .chain(std::iter::once(&mut self.z_log_scale))
    }

    /// Buffers in `ModelWeights::params()` order.
    pub fn flat(&self) -> Vec<Vec<f64>> {
        self.parts().cloned().collect()
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.parts_mut().zip(other.parts()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in self.parts_mut() {
            a.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.parts().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

impl ModelWeights {
    pub fn init(arch: ArchConfig, lambda: f64, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mc = arch.modeled_channels();
        let ga = Sequential::build("ga", 3, &arch.ga, &mut rng)?;
        let gs = Sequential::build("gs", arch.m, &arch.gs, &mut rng)?;
        let ha = Sequential::build("ha", arch.m, &arch.ha, &mut rng)?;
        let hs = Sequential::build("hs", ha.out_channels(), &arch.hs, &mut rng)?;
        let f = Sequential::build("f", arch.context_channels() + mc, &arch.f, &mut rng)?;
        let z_log_scale = Param::zeros("z.log_scale", vec![ha.out_channels()]);
        Ok(Self {
            arch,
            lambda,
            ga,
            gs,
            ha,
            hs,
            f,
            z_log_scale,
        })
    }

    pub fn profile(&self) -> Profile {
        self.arch.profile
    }

    pub fn lambda_id(&self) -> u8 {
        lambda_id(self.lambda)
    }

    /// Channels of `z` (the last layer of `h_a`).
    pub fn z_channels(&self) -> usize {
        self.ha.out_channels()
    }

    pub fn z_scales(&self) -> Vec<f64> {
        self.z_log_scale
            .data
            .iter()
            .map(|l| math::exp(l.min(30.0)).max(Z_SIGMA_FLOOR))
            .collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for net in [&self.ga, &self.gs, &self.ha, &self.hs, &self.f] {
            v.extend(net.params());
        }
        v.push(&self.z_log_scale);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for net in [&mut self.ga, &mut self.gs, &mut self.ha, &mut self.hs, &mut self.f] {
            v.extend(net.params_mut());
        }
        v.push(&mut self.z_log_scale);
        v
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            ga: self.ga.zero_grads(),
            gs: self.gs.zero_grads(),
            ha: self.ha.zero_grads(),
            hs: self.hs.zero_grads(),
            f: self.f.zero_grads(),
            z_log_scale: vec![0.0; self.z_log_scale.len()],
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for p in self.params() {
            if let Some(i) = p.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {}[{i}]", p.name)));
            }
        }
        Ok(())
    }

    /// Kernel for the networks whose outputs shape CDF tables (`h_s`, `f`).
    pub fn entropy_kernel(&self) -> ConvKernel {
        if math::deterministic_math() {
            ConvKernel::Reference
        } else {
            ConvKernel::Gemm
        }
    }
}

fn check_scale(op: &'static str, dim: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::ShapeMismatch {
            op,
            dim,
            got,
            expected,
        });
    }
    Ok(())
}

/// `y = g_a(x)`; `x` is `H×W×3` in `[-1, 1]` with `H`, `W` multiples of 64.
pub fn ga_forward(x: &TensorF, w: &ModelWeights, tape: Option<&mut Tape>) -> Result<TensorF> {
    check_scale("ga_forward", "channels", x.channels(), 3)?;
    if x.height() % BLOCK != 0 || x.width() % BLOCK != 0 {
        return Err(invalid(format!(
            "image {}x{} is not padded to a multiple of {BLOCK}",
            x.width(),
            x.height()
        )));
    }
    let y = w.ga.forward(x, ConvKernel::Gemm, tape)?;
    check_scale("ga_forward", "height", y.height() * Y_DOWNSCALE, x.height())?;
    check_scale("ga_forward", "width", y.width() * Y_DOWNSCALE, x.width())?;
    Ok(y)
}

/// `x̂ = g_s(ŷ)`.
pub fn gs_forward(y_hat: &TensorF, w: &ModelWeights, tape: Option<&mut Tape>) -> Result<TensorF> {
    check_scale("gs_forward", "channels", y_hat.channels(), w.arch.m)?;
    let x = w.gs.forward(y_hat, ConvKernel::Gemm, tape)?;
    check_scale("gs_forward", "height", x.height(), y_hat.height() * Y_DOWNSCALE)?;
    check_scale("gs_forward", "width", x.width(), y_hat.width() * Y_DOWNSCALE)?;
    Ok(x)
}

/// `z = h_a(ŷ)`.
pub fn ha_forward(y_hat: &TensorF, w: &ModelWeights, tape: Option<&mut Tape>) -> Result<TensorF> {
    check_scale("ha_forward", "channels", y_hat.channels(), w.arch.m)?;
    let z = w.ha.forward(y_hat, ConvKernel::Gemm, tape)?;
    check_scale("ha_forward", "height", z.height() * Z_DOWNSCALE, y_hat.height())?;
    check_scale("ha_forward", "width", z.width() * Z_DOWNSCALE, y_hat.width())?;
    Ok(z)
}

/// Output of `h_s`: the bit-consuming context and, for the hybrid model,
/// the scales of `y2`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsOutput {
    pub context: TensorF,
    pub sigma2: Option<TensorF>,
    /// Pre-exponentiation scale logits (hybrid only), kept for backprop.
    pub log_sigma2: Option<TensorF>,
}

/// Splits the raw output of the `h_s` network into context and scales.
pub fn split_hs_output(raw: TensorF, w: &ModelWeights) -> Result<HsOutput> {
    let mc = w.arch.context_channels();
    match w.arch.split {
        None => {
            check_scale("hs_forward", "channels", raw.channels(), mc)?;
            Ok(HsOutput {
                context: raw,
                sigma2: None,
                log_sigma2: None,
            })
        }
        Some((_, m2)) => {
            if raw.channels() != mc + m2 {
                return Err(Error::ConfigMismatch(format!(
                    "hybrid h_s produced {} channels, expected {} context + {m2} scale",
                    raw.channels(),
                    mc
                )));
            }
            let context = raw.channel_slice(0, mc)?;
            let log_sigma2 = raw.channel_slice(mc, mc + m2)?;
            let sigma2 = log_sigma2.map(|v| math::exp(v.min(crate::nn::sequential::EXP_INPUT_MAX)));
            Ok(HsOutput {
                context,
                sigma2: Some(sigma2),
                log_sigma2: Some(log_sigma2),
            })
        }
    }
}

/// `c' = h_s(ẑ)` (plus `σ2` for the hybrid model).
pub fn hs_forward(
    z_hat: &TensorF,
    w: &ModelWeights,
    kernel: ConvKernel,
    tape: Option<&mut Tape>,
) -> Result<HsOutput> {
    check_scale("hs_forward", "channels", z_hat.channels(), w.z_channels())?;
    let raw = w.hs.forward(z_hat, kernel, tape)?;
    check_scale("hs_forward", "height", raw.height(), z_hat.height() * Z_DOWNSCALE)?;
    check_scale("hs_forward", "width", raw.width(), z_hat.width() * Z_DOWNSCALE)?;
    split_hs_output(raw, w)
}

/// Channel split of `y` into the context-modeled part and the scale-only part.
pub fn hybrid_split(y: &TensorF, arch: &ArchConfig) -> Result<(TensorF, TensorF)> {
    let Some((m1, m2)) = arch.split else {
        return Err(Error::ConfigMismatch("hybrid_split on a non-hybrid model".into()));
    };
    check_scale("hybrid_split", "channels", y.channels(), m1 + m2)?;
    Ok((y.channel_slice(0, m1)?, y.channel_slice(m1, m1 + m2)?))
}

pub fn hybrid_concat(y1: &TensorF, y2: &TensorF) -> Result<TensorF> {
    TensorF::concat_channels(y1, y2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelWeights {
        ModelWeights::init(Profile::Tiny.arch(), 0.1, 7).unwrap()
    }

    fn zero_all(w: &mut ModelWeights) {
        for net in [&mut w.ga, &mut w.gs, &mut w.ha, &mut w.hs] {
            for layer in &mut net.layers {
                if let crate::nn::Layer::Conv(c) = layer {
                    c.weight.data.iter_mut().for_each(|v| *v = 0.0);
                    c.bias.data.iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
    }

    #[test]
    fn shapes_follow_downscale_factors() {
        let w = tiny();
        let x = TensorF::from_fn(64, 64, 3, |y, x, c| ((y + 2 * x + c) % 9) as f64 / 4.5 - 1.0);
        let y = ga_forward(&x, &w, None).unwrap();
        assert_eq!(y.shape(), (4, 4, 48));
        let z = ha_forward(&y.map(f64::round), &w, None).unwrap();
        assert_eq!(z.shape(), (1, 1, 32));
        let hs = hs_forward(&z.map(f64::round), &w, ConvKernel::Reference, None).unwrap();
        assert_eq!(hs.context.shape(), (4, 4, 48));
        assert!(hs.sigma2.is_none());
        let xr = gs_forward(&y.map(f64::round), &w, None).unwrap();
        assert_eq!(xr.shape(), x.shape());
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let mut w = tiny();
        zero_all(&mut w);
        let x = TensorF::from_fn(64, 64, 3, |y, _, _| y as f64 / 64.0);
        assert!(ga_forward(&x, &w, None).unwrap().data().iter().all(|v| *v == 0.0));
        let y = TensorF::zeros(4, 4, 48);
        assert!(gs_forward(&y, &w, None).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(ha_forward(&y, &w, None).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unpadded_input_rejected() {
        let w = tiny();
        let x = TensorF::zeros(48, 64, 3);
        assert!(ga_forward(&x, &w, None).is_err());
    }

    #[test]
    fn synthesis_rejects_wrong_channels() {
        let w = tiny();
        let err = gs_forward(&TensorF::zeros(4, 4, 47), &w, None).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { dim: "channels", .. }));
    }

    #[test]
    fn hybrid_hs_shapes_and_positive_scales() {
        let arch = ArchConfig::standard(Profile::Custom, 8, 12, Some((5, 7)));
        let w = ModelWeights::init(arch, 0.1, 1).unwrap();
        let z = TensorF::from_fn(1, 1, 8, |_, _, c| c as f64 - 3.0);
        let out = hs_forward(&z, &w, ConvKernel::Gemm, None).unwrap();
        assert_eq!(out.context.shape(), (4, 4, 5));
        let s = out.sigma2.unwrap();
        assert_eq!(s.shape(), (4, 4, 7));
        assert!(s.data().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn hybrid_profile_dimensions() {
        let arch = Profile::Hybrid400.arch();
        arch.validate().unwrap();
        assert_eq!((arch.n, arch.split), (400, Some((192, 408))));
        assert_eq!(arch.hs.last().unwrap().filter_count, 192 + 408);
        let h320 = Profile::Hybrid320.arch();
        assert_eq!((h320.n, h320.m, h320.split), (320, 420, Some((192, 228))));
    }

    #[test]
    fn split_roundtrip_and_errors() {
        let arch = Profile::Hybrid400.arch();
        let y = TensorF::from_fn(1, 2, 600, |_, x, c| (x * 600 + c) as f64 * 0.5);
        let (a, b) = hybrid_split(&y, &arch).unwrap();
        assert_eq!((a.channels(), b.channels()), (192, 408));
        assert_eq!(hybrid_concat(&a, &b).unwrap(), y);
        assert!(hybrid_split(&a, &arch).is_err());
        assert!(hybrid_split(&y, &Profile::Base.arch()).is_err());
    }

    #[test]
    fn profile_names_roundtrip() {
        for p in Profile::ALL {
            assert_eq!(Profile::from_name(p.name()).unwrap(), p);
            assert_eq!(Profile::from_id(p.id()).unwrap(), p);
        }
    }
}
