use rand::Rng;

use crate::tensor::TensorF;

/// `len` i.i.d. draws from `U(-1/2, 1/2)`.
pub fn uniform_noise(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen::<f64>() - 0.5).collect()
}

/// `ỹ = y + u` with `u ~ U(-1/2, 1/2)`. Training-time surrogate for
/// quantization, used only as input to the entropy model.
pub fn add_uniform_noise(y: &TensorF, rng: &mut impl Rng) -> TensorF {
    let noise = uniform_noise(y.len(), rng);
    add_noise(y, &noise)
}

pub fn add_noise(y: &TensorF, noise: &[f64]) -> TensorF {
    let mut out = y.clone();
    for (v, u) in out.data_mut().iter_mut().zip(noise) {
        *v += u;
    }
    out
}
