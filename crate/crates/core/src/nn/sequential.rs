use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::conv::{conv2d_backward, Activation, Conv2d, ConvKernel, ConvLayerSpec};
use crate::nn::gdn::Gdn;
use crate::tensor::{Param, TensorF};

/// Inputs above this are clamped before exponentiation so outputs stay finite.
pub const EXP_INPUT_MAX: f64 = 40.0;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Gdn(Gdn),
    Relu,
    Exp,
}

#[derive(Clone, Debug)]
enum Saved {
    Conv(TensorF),
    Gdn(TensorF, Vec<f64>),
    Relu(TensorF),
    Exp(TensorF, TensorF),
}

/// Forward activations saved for one pass through a `Sequential`.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    saved: Vec<Saved>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.saved.is_empty()
    }

    pub fn clear(&mut self) {
        self.saved.clear();
    }
}

/// A fixed chain of convolutions and pointwise nonlinearities.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential {
    pub name: String,
    pub in_channels: usize,
    pub specs: Vec<ConvLayerSpec>,
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn build(
        name: &str,
        in_channels: usize,
        specs: &[ConvLayerSpec],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut c = in_channels;
        for (i, spec) in specs.iter().enumerate() {
            let conv = Conv2d::new(&format!("{name}.{i}"), *spec, c, rng)?;
            c = spec.filter_count;
            layers.push(Layer::Conv(conv));
            match spec.activation {
                Activation::Gdn => layers.push(Layer::Gdn(Gdn::new(&format!("{name}.{i}.gdn"), c, false))),
                Activation::Igdn => layers.push(Layer::Gdn(Gdn::new(&format!("{name}.{i}.igdn"), c, true))),
                Activation::Relu => layers.push(Layer::Relu),
                Activation::Exp => layers.push(Layer::Exp),
                Activation::Linear => {}
            }
        }
        Ok(Self {
            name: name.to_string(),
            in_channels,
            specs: specs.to_vec(),
            layers,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.specs.last().map_or(self.in_channels, |s| s.filter_count)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&c.weight, &c.bias]),
                Layer::Gdn(g) => out.extend([&g.gamma_raw, &g.beta_raw]),
                Layer::Relu | Layer::Exp => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&mut c.weight, &mut c.bias]),
                Layer::Gdn(g) => out.extend([&mut g.gamma_raw, &mut g.beta_raw]),
                Layer::Relu | Layer::Exp => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(_) | Layer::Gdn(_) => 2,
                Layer::Relu | Layer::Exp => 0,
            })
            .sum()
    }

    /// Runs the chain; when `tape` is given, every layer input needed for
    /// the backward pass is recorded there (replacing older contents).
    pub fn forward(&self, x: &TensorF, kernel: ConvKernel, mut tape: Option<&mut Tape>) -> Result<TensorF> {
        if x.channels() != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "sequential",
                dim: "input channels",
                got: x.channels(),
                expected: self.in_channels,
            });
        }
        if let Some(t) = tape.as_deref_mut() {
            t.clear();
        }
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, saved) = match layer {
                Layer::Conv(conv) => {
                    let out = conv.forward(&cur, kernel)?;
                    (out, tape.is_some().then(|| Saved::Conv(cur)))
                }
                Layer::Gdn(g) => {
                    let (out, pool) = g.forward(&cur)?;
                    (out, tape.is_some().then(|| Saved::Gdn(cur, pool)))
                }
                Layer::Relu => {
                    let out = cur.map(|v| v.max(0.0));
                    let saved = tape.is_some().then(|| Saved::Relu(out.clone()));
                    (out, saved)
                }
                Layer::Exp => {
                    let out = cur.map(|v| crate::math::exp(v.min(EXP_INPUT_MAX)));
                    let saved = tape.is_some().then(|| Saved::Exp(cur, out.clone()));
                    (out, saved)
                }
            };
            if let (Some(t), Some(s)) = (tape.as_deref_mut(), saved) {
                t.saved.push(s);
            }
            cur = next;
        }
        cur.check_finite(&self.name)?;
        Ok(cur)
    }

    /// Back-propagates `grad_out`, accumulating parameter gradients into
    /// `grads` (one buffer per parameter in `params()` order), and returns
    /// the gradient with respect to the network input.
    pub fn backward(&self, tape: &Tape, grad_out: &TensorF, grads: &mut [Vec<f64>]) -> Result<TensorF> {
        if tape.is_empty() && !self.layers.is_empty() {
            return Err(Error::BackwardBeforeForward);
        }
        if tape.saved.len() != self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "tape for {} holds {} entries, network has {} layers",
                self.name,
                tape.saved.len(),
                self.layers.len()
            )));
        }
        if grads.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                op: "sequential_backward",
                dim: "gradient buffers",
                got: grads.len(),
                expected: self.param_count(),
            });
        }
        let mut g = grad_out.clone();
        let mut slot = grads.len();
        for (layer, saved) in self.layers.iter().zip(&tape.saved).rev() {
            g = match (layer, saved) {
                (Layer::Conv(conv), Saved::Conv(input)) => {
                    slot -= 2;
                    let (gw, gb) = grads[slot..slot + 2].split_at_mut(1);
                    conv2d_backward(input, &conv.weight, &conv.spec, &g, &mut gw[0], &mut gb[0])?
                }
                (Layer::Gdn(gdn), Saved::Gdn(input, pool)) => {
                    slot -= 2;
                    let (gg, gb) = grads[slot..slot + 2].split_at_mut(1);
                    gdn.backward(input, pool, &g, &mut gg[0], &mut gb[0])?
                }
                (Layer::Relu, Saved::Relu(out)) => {
                    let mut d = g;
                    for (dv, &o) in d.data_mut().iter_mut().zip(out.data()) {
                        if o <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    d
                }
                (Layer::Exp, Saved::Exp(input, out)) => {
                    let mut d = g;
                    for ((dv, &o), &i) in d.data_mut().iter_mut().zip(out.data()).zip(input.data()) {
                        *dv = if i > EXP_INPUT_MAX { 0.0 } else { *dv * o };
                    }
                    d
                }
                _ => return Err(Error::InvalidArgument("tape does not match network".into())),
            };
        }
        Ok(g)
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }
}
