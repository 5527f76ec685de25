//! Analytic gradients against central finite differences. Every check
//! returns the worst relative error it saw and where.

use ctxcodec::entropy::pmf::pmf_with_grad;
use ctxcodec::entropy::rate::bits_with_grad;
use ctxcodec::entropy::{backward_position, forward_position, pmf_gaussian_uniform};
use ctxcodec::metrics::{ms_ssim_tensor, ms_ssim_with_grad};
use ctxcodec::nn::{Activation, ConvKernel, ConvLayerSpec, Sequential, Tape};
use ctxcodec::trainer::step::distortion;
use ctxcodec::trainer::{synthetic_image, train_sample, Conditioning, Metric, Perturbation};
use ctxcodec::transforms::{ArchConfig, ModelWeights, Profile};
use ctxcodec::TensorF;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const LAYER_TOL: f64 = 1e-4;
pub const E2E_TOL: f64 = 1e-3;

#[derive(Clone, Debug, Default)]
pub struct Worst {
    pub err: f64,
    pub at: String,
    pub checked: usize,
}

impl Worst {
    fn see(&mut self, err: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        // NaN counts as worst.
        if !(err <= self.err) {
            self.err = err;
            self.at = at();
        }
    }

    pub fn merge(mut self, o: Worst) -> Worst {
        self.checked += o.checked;
        if !(o.err <= self.err) {
            self.err = o.err;
            self.at = o.at;
        }
        self
    }
}

pub fn rel_err(fd: f64, an: f64, scale: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(scale)
}

/// Five-point central difference: truncation error O(h⁴), so a larger step
/// keeps round-off small.
pub fn fd5(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

pub fn random_tensor(h: usize, w: usize, c: usize, amp: f64, rng: &mut impl Rng) -> TensorF {
    TensorF::from_fn(h, w, c, |_, _, _| rng.gen_range(-amp..amp))
}

/// Parameter and input gradients of `⟨net(x), r⟩`.
pub fn sequential(specs: &[ConvLayerSpec], in_c: usize, h: usize, w: usize, seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Sequential::build("t", in_c, specs, &mut rng).unwrap();
    // Nonzero GDN parameters so every term contributes.
    for p in net.params_mut() {
        if p.name.contains("gdn") {
            for v in &mut p.data {
                *v += rng.gen_range(0.05..0.3);
            }
        }
    }
    let x = random_tensor(h, w, in_c, 1.0, &mut rng);
    let mut tape = Tape::new();
    let y = net.forward(&x, ConvKernel::Reference, Some(&mut tape)).unwrap();
    let r = random_tensor(y.height(), y.width(), y.channels(), 1.0, &mut rng);
    let mut grads = net.zero_grads();
    let dx = net.backward(&tape, &r, &mut grads).unwrap();
    let f = |net: &Sequential, x: &TensorF| net.forward(x, ConvKernel::Reference, None).unwrap().dot(&r);
    let gnorm = grads.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let h_step = 1e-6;

    let mut worst = Worst::default();
    let n_params = net.params().len();
    for pi in 0..n_params {
        let len = net.params()[pi].len();
        for _ in 0..4 {
            let j = rng.gen_range(0..len);
            let orig = net.params()[pi].data[j];
            net.params_mut()[pi].data[j] = orig + h_step;
            let fp = f(&net, &x);
            net.params_mut()[pi].data[j] = orig - h_step;
            let fm = f(&net, &x);
            net.params_mut()[pi].data[j] = orig;
            let fd = (fp - fm) / (2.0 * h_step);
            let an = grads[pi][j];
            worst.see(rel_err(fd, an, 1e-6 * gnorm.max(1.0)), || {
                format!("{} [{j}]: fd {fd} an {an}", net.params()[pi].name)
            });
        }
    }
    for _ in 0..8 {
        let i = rng.gen_range(0..x.len());
        let mut xp = x.clone();
        xp.data_mut()[i] += h_step;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h_step;
        let fd = (f(&net, &xp) - f(&net, &xm)) / (2.0 * h_step);
        let an = dx.data()[i];
        worst.see(rel_err(fd, an, 1e-6), || format!("input [{i}]: fd {fd} an {an}"));
    }
    worst
}

pub fn conv_down_same_with_gdn() -> Worst {
    sequential(
        &[ConvLayerSpec::down(4, 5, 2, Activation::Gdn), ConvLayerSpec::down(3, 3, 1, Activation::Linear)],
        3,
        8,
        8,
        1,
    )
}

pub fn conv_up_with_igdn_and_relu() -> Worst {
    sequential(
        &[ConvLayerSpec::up(4, 5, 2, Activation::Igdn), ConvLayerSpec::up(3, 3, 2, Activation::Relu)],
        3,
        3,
        4,
        2,
    )
}

pub fn conv_with_exp_output() -> Worst {
    sequential(
        &[ConvLayerSpec::down(5, 3, 1, Activation::Relu), ConvLayerSpec::up(2, 3, 1, Activation::Exp)],
        2,
        5,
        5,
        3,
    )
}

pub fn valid_convs() -> Worst {
    sequential(
        &[
            ConvLayerSpec::valid(6, 2, Activation::Relu),
            ConvLayerSpec::valid(6, 2, Activation::Relu),
            ConvLayerSpec::valid(4, 2, Activation::Linear),
        ],
        5,
        4,
        4,
        4,
    )
}

pub fn pmf_and_bits() -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-6;
    let mut worst = Worst::default();
    for _ in 0..500 {
        let v = rng.gen_range(-6.0..6.0f64).round() + rng.gen_range(-0.5..0.5);
        let mu = rng.gen_range(-4.0..4.0);
        let s = rng.gen_range(0.2..5.0);
        let g = pmf_with_grad(v, mu, s);
        let fd_v = (pmf_gaussian_uniform(v + h, mu, s) - pmf_gaussian_uniform(v - h, mu, s)) / (2.0 * h);
        let fd_m = (pmf_gaussian_uniform(v, mu + h, s) - pmf_gaussian_uniform(v, mu - h, s)) / (2.0 * h);
        let fd_s = (pmf_gaussian_uniform(v, mu, s + h) - pmf_gaussian_uniform(v, mu, s - h)) / (2.0 * h);
        for (name, fd, an) in [("dv", fd_v, g.d_value), ("dmu", fd_m, g.d_mu), ("dsigma", fd_s, g.d_sigma)] {
            worst.see(rel_err(fd, an, 1e-7), || format!("pmf {name} v={v} mu={mu} s={s}: {fd} vs {an}"));
        }
        let b = bits_with_grad(v, mu, s);
        if b.bits < 15.0 {
            let bits = |v: f64, mu: f64, s: f64| -pmf_gaussian_uniform(v, mu, s).log2();
            let fd = (bits(v, mu, s + h) - bits(v, mu, s - h)) / (2.0 * h);
            worst.see(rel_err(fd, b.d_sigma, 1e-7), || format!("bits dsigma v={v} mu={mu} s={s}"));
            let fd = (bits(v + h, mu, s) - bits(v - h, mu, s)) / (2.0 * h);
            worst.see(rel_err(fd, b.d_value, 1e-7), || format!("bits dv v={v} mu={mu} s={s}"));
        }
    }
    worst
}

pub fn estimator_positions() -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = jitter_biases(ModelWeights::init(Profile::Tiny.arch(), 0.1, 8).unwrap(), &mut rng);
    let context = random_tensor(4, 4, 48, 1.0, &mut rng);
    let known = random_tensor(4, 4, 48, 2.0, &mut rng);
    [(2, 2), (0, 3), (0, 0), (3, 1)]
        .into_iter()
        .map(|(k, l)| position(&w, &context, &known, k, l, &mut rng))
        .fold(Worst::default(), Worst::merge)
}

fn position(w: &ModelWeights, context: &TensorF, known: &TensorF, k: usize, l: usize, rng: &mut impl Rng) -> Worst {
    let dmu: Vec<f64> = (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dsig: Vec<f64> = (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let obj = |w: &ModelWeights, c: &TensorF, y: &TensorF| {
        let e = forward_position(c, y, k, l, w, ConvKernel::Reference).unwrap();
        e.mu.iter().zip(&dmu).map(|(a, b)| a * b).sum::<f64>() + e.sigma.iter().zip(&dsig).map(|(a, b)| a * b).sum::<f64>()
    };
    let est = forward_position(context, known, k, l, w, ConvKernel::Reference).unwrap();
    let mut fg = w.f.zero_grads();
    let mut dc = TensorF::zeros(4, 4, 48);
    let mut dk = TensorF::zeros(4, 4, 48);
    backward_position(&est, &dmu, &dsig, k, l, w, &mut fg, &mut dc, &mut dk).unwrap();
    let h = 1e-6;
    let mut worst = Worst::default();
    for _ in 0..12 {
        let i = rng.gen_range(0..context.len());
        let mut p = context.clone();
        p.data_mut()[i] += h;
        let mut m = context.clone();
        m.data_mut()[i] -= h;
        let fd = (obj(w, &p, known) - obj(w, &m, known)) / (2.0 * h);
        worst.see(rel_err(fd, dc.data()[i], 1e-6), || format!("({k},{l}) c' [{i}] {fd} vs {}", dc.data()[i]));
        let mut p = known.clone();
        p.data_mut()[i] += h;
        let mut m = known.clone();
        m.data_mut()[i] -= h;
        let fd = (obj(w, context, &p) - obj(w, context, &m)) / (2.0 * h);
        worst.see(rel_err(fd, dk.data()[i], 1e-6), || format!("({k},{l}) c'' [{i}] {fd} vs {}", dk.data()[i]));
    }
    let mut w2 = w.clone();
    for pi in 0..fg.len() {
        for _ in 0..3 {
            let j = rng.gen_range(0..fg[pi].len());
            let orig = w2.f.params()[pi].data[j];
            w2.f.params_mut()[pi].data[j] = orig + h;
            let fp = obj(&w2, context, known);
            w2.f.params_mut()[pi].data[j] = orig - h;
            let fm = obj(&w2, context, known);
            w2.f.params_mut()[pi].data[j] = orig;
            let fd = (fp - fm) / (2.0 * h);
            worst.see(rel_err(fd, fg[pi][j], 1e-6), || format!("({k},{l}) f param {pi}[{j}] {fd} vs {}", fg[pi][j]));
        }
    }
    worst
}

pub fn distortions() -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_tensor(32, 32, 3, 0.9, &mut rng);
    let xh = TensorF::from_fn(32, 32, 3, |y, xx, c| x.get(y, xx, c) + 0.1 * ((y * 7 + xx * 3 + c) as f64).sin());
    let mut worst = Worst::default();
    for metric in [Metric::Mse, Metric::MsSsim] {
        let (_, g) = distortion(&x, &xh, metric).unwrap();
        for _ in 0..10 {
            let i = rng.gen_range(0..xh.len());
            let fd = fd5(
                |d| {
                    let mut p = xh.clone();
                    p.data_mut()[i] += d;
                    distortion(&x, &p, metric).unwrap().0
                },
                1e-4,
            );
            worst.see(rel_err(fd, g.data()[i], 1e-6), || format!("{metric:?} [{i}] {fd} vs {}", g.data()[i]));
        }
    }
    let a = x.map(|v| (v + 1.0) * 127.5);
    let b = xh.map(|v| (v + 1.0) * 127.5);
    let (v, _) = ms_ssim_with_grad(&a, &b).unwrap();
    assert_eq!(v, ms_ssim_tensor(&a, &b).unwrap().value);
    worst
}

/// Zero-initialized biases put ReLUs fed by zero-padded window cells exactly
/// on their kink, where a central difference sees half a slope.
pub fn jitter_biases(mut w: ModelWeights, rng: &mut impl Rng) -> ModelWeights {
    for p in w.params_mut() {
        if p.name.ends_with("bias") {
            for v in &mut p.data {
                *v += rng.gen_range(-0.05..0.05);
            }
        }
    }
    w
}

/// Full loss with frozen noise, rounding residuals and positions: the
/// largest-gradient entry plus one random entry of every parameter tensor.
pub fn end_to_end(arch: ArchConfig, metric: Metric, mode: Conditioning, rate_points: usize, seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = jitter_biases(ModelWeights::init(arch, 0.1, seed).unwrap(), &mut rng);
    let x = synthetic_image(64, 64, seed).to_tensor();
    let pert = Perturbation::draw(&w, 64, 64, rate_points, &mut rng);
    let out = train_sample(&x, &w, metric, mode, pert).unwrap();
    let frozen = out.perturbation.clone();
    let floored = out.rates.y1_sampled.floored + out.rates.y2.floored + out.rates.z.floored;
    assert_eq!(floored, 0, "probability floor active; gradient is straight-through there");
    let flat = out.grads.flat();
    let gnorm = flat.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let loss = |w: &ModelWeights| train_sample(&x, w, metric, mode, frozen.clone()).unwrap().loss;

    let mut w2 = w.clone();
    let n = w2.params().len();
    let mut worst = Worst::default();
    for pi in 0..n {
        let len = w2.params()[pi].len();
        let jmax = (0..len).max_by(|&a, &b| flat[pi][a].abs().total_cmp(&flat[pi][b].abs())).unwrap();
        for j in [jmax, rng.gen_range(0..len)] {
            let orig = w2.params()[pi].data[j];
            let fd = fd5(
                |d| {
                    w2.params_mut()[pi].data[j] = orig + d;
                    loss(&w2)
                },
                1e-4 * orig.abs().max(0.1),
            );
            w2.params_mut()[pi].data[j] = orig;
            let an = flat[pi][j];
            worst.see(rel_err(fd, an, 1e-4 * gnorm), || format!("{} [{j}]: fd {fd} an {an}", w2.params()[pi].name));
        }
    }
    assert_eq!(worst.checked, 2 * n);
    worst
}

pub fn small_hybrid_arch() -> ArchConfig {
    ArchConfig::standard(Profile::Custom, 24, 40, Some((24, 16)))
}
