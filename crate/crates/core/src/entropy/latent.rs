use crate::error::{invalid, Result};
use crate::tensor::TensorF;

/// Inclusive value range of quantized latents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bounds {
    pub min: i32,
    pub max: i32,
}

impl Bounds {
    pub const DEFAULT: Bounds = Bounds { min: -128, max: 127 };

    pub fn new(min: i32, max: i32) -> Result<Self> {
        if !(min <= 0 && 0 <= max) {
            return Err(invalid(format!("latent bounds [{min}, {max}] must contain 0")));
        }
        Ok(Self { min, max })
    }

    pub fn alphabet_size(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    pub fn contains(&self, v: i32) -> bool {
        (self.min..=self.max).contains(&v)
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Integer latent tensor (`ŷ`, `ẑ`) with declared bounds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatentGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<i32>,
    bounds: Bounds,
}

impl LatentGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<i32>, bounds: Bounds) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(crate::Error::ShapeMismatch {
                op: "LatentGrid::new",
                dim: "values length",
                got: values.len(),
                expected: height * width * channels,
            });
        }
        if let Some(v) = values.iter().find(|v| !bounds.contains(**v)) {
            return Err(invalid(format!("latent value {v} outside [{}, {}]", bounds.min, bounds.max)));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
            bounds,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize, bounds: Bounds) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![0; height * width * channels],
            bounds,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> i32 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[i32] {
        let s = (y * self.width + x) * self.channels;
        &self.values[s..s + self.channels]
    }

    /// Writes one position; values must already be in bounds.
    pub fn set_pixel(&mut self, y: usize, x: usize, vals: &[i32]) {
        debug_assert!(vals.iter().all(|v| self.bounds.contains(*v)));
        let s = (y * self.width + x) * self.channels;
        self.values[s..s + self.channels].copy_from_slice(vals);
    }

    pub fn to_tensor(&self) -> TensorF {
        let data = self.values.iter().map(|&v| v as f64).collect();
        TensorF::new(self.height, self.width, self.channels, data).expect("shape checked at construction")
    }

    pub fn channel_slice(&self, start: usize, end: usize) -> LatentGrid {
        let mut values = Vec::with_capacity(self.height * self.width * (end - start));
        for px in self.values.chunks_exact(self.channels) {
            values.extend_from_slice(&px[start..end]);
        }
        LatentGrid {
            height: self.height,
            width: self.width,
            channels: end - start,
            values,
            bounds: self.bounds,
        }
    }

    pub fn concat_channels(a: &LatentGrid, b: &LatentGrid) -> Result<LatentGrid> {
        if (a.height, a.width) != (b.height, b.width) || a.bounds != b.bounds {
            return Err(invalid("concat of latent grids with different shapes or bounds"));
        }
        let mut values = Vec::with_capacity(a.values.len() + b.values.len());
        for i in 0..a.height * a.width {
            values.extend_from_slice(&a.values[i * a.channels..(i + 1) * a.channels]);
            values.extend_from_slice(&b.values[i * b.channels..(i + 1) * b.channels]);
        }
        LatentGrid::new(a.height, a.width, a.channels + b.channels, values, a.bounds)
    }
}

/// Result of quantizing a real tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantized {
    pub grid: LatentGrid,
    /// Elements whose rounded value fell outside the bounds.
    pub clamped: usize,
}

/// Rounds half away from zero, then clamps into `bounds`.
pub fn quantize(y: &TensorF, bounds: Bounds) -> Quantized {
    let mut clamped = 0;
    let values = y
        .data()
        .iter()
        .map(|&v| {
            let r = v.round();
            if r < bounds.min as f64 {
                clamped += 1;
                bounds.min
            } else if r > bounds.max as f64 {
                clamped += 1;
                bounds.max
            } else {
                r as i32
            }
        })
        .collect();
    let (h, w, c) = y.shape();
    Quantized {
        grid: LatentGrid {
            height: h,
            width: w,
            channels: c,
            values,
            bounds,
        },
        clamped,
    }
}

/// Straight-through gradient of `quantize`: the identity.
pub fn quantize_backward(grad: &TensorF) -> TensorF {
    grad.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(v: f64) -> i32 {
        let t = TensorF::new(1, 1, 1, vec![v]).unwrap();
        quantize(&t, Bounds::DEFAULT).grid.values()[0]
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(q(0.4), 0);
        assert_eq!(q(-1.7), -2);
        assert_eq!(q(0.5), 1);
        assert_eq!(q(-0.5), -1);
        assert_eq!(q(2.5), 3);
    }

    #[test]
    fn clamps_and_counts() {
        let t = TensorF::new(1, 1, 3, vec![300.0, -500.0, 3.0]).unwrap();
        let out = quantize(&t, Bounds::DEFAULT);
        assert_eq!(out.grid.values(), &[127, -128, 3]);
        assert_eq!(out.clamped, 2);
    }

    #[test]
    fn straight_through_gradient_is_identity() {
        let g = TensorF::from_fn(2, 2, 2, |y, x, c| (y + x + c) as f64 - 1.5);
        assert_eq!(quantize_backward(&g), g);
    }

    #[test]
    fn bounds_must_contain_zero() {
        assert!(Bounds::new(1, 5).is_err());
        assert!(Bounds::new(-3, -1).is_err());
        assert!(Bounds::new(0, 0).is_ok());
    }

    proptest! {
        #[test]
        fn quantize_is_sign_symmetric_and_within_half(v in -120.0f64..120.0) {
            prop_assert_eq!(q(v), -q(-v));
            prop_assert!((q(v) as f64 - v).abs() <= 0.5);
        }
    }
}
