//! Training images: an in-repo synthetic generator and PPM directories.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::image::{to_u8, Image};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
}

impl Dataset {
    pub fn new(images: Vec<Image>) -> Result<Self> {
        if images.is_empty() {
            return Err(invalid("dataset is empty"));
        }
        Ok(Self { images })
    }

    /// `count` synthetic `size × size` images derived from `seed`.
    pub fn synthetic(count: usize, size: usize, seed: u64) -> Result<Self> {
        Self::new((0..count).map(|i| synthetic_image(size, size, seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64))).collect())
    }

    /// Every `.ppm` file in `dir`, in name order. Unreadable files are
    /// skipped with a warning on stderr; the skip count is returned.
    pub fn from_dir(dir: &Path) -> Result<(Self, usize)> {
        let (images, skipped) = crate::report::read_ppm_dir(dir)?;
        Ok((Self::new(images.into_iter().map(|(_, img)| img).collect())?, skipped))
    }

    /// A random `crop × crop` patch. Images smaller than the crop are
    /// edge-replicated.
    pub fn sample_crop(&self, crop: usize, rng: &mut impl Rng) -> Image {
        let img = &self.images[rng.gen_range(0..self.images.len())];
        let top = rng.gen_range(0..=img.height.saturating_sub(crop));
        let left = rng.gen_range(0..=img.width.saturating_sub(crop));
        Image::from_fn(crop, crop, |y, x, c| {
            img.get((top + y).min(img.height - 1), (left + x).min(img.width - 1), c)
        })
    }
}

/// Smooth gradients, sinusoidal stripes, anti-aliased flat shapes and
/// band-limited noise.
pub fn synthetic_image(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = vec![[0.0f64; 3]; width * height];

    let base: [f64; 3] = [rng.gen_range(40.0..200.0), rng.gen_range(40.0..200.0), rng.gen_range(40.0..200.0)];
    let grad: [[f64; 2]; 3] = std::array::from_fn(|_| [rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2)]);
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                px[y * width + x][c] = base[c] + grad[c][0] * x as f64 + grad[c][1] * y as f64;
            }
        }
    }

    if rng.gen_bool(0.6) {
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let period: f64 = rng.gen_range(8.0..24.0);
        let amp: f64 = rng.gen_range(10.0..50.0);
        let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.3..1.0));
        let (s, co) = angle.sin_cos();
        for y in 0..height {
            for x in 0..width {
                let t = (x as f64 * co + y as f64 * s) / period * std::f64::consts::TAU;
                let v = amp * t.sin();
                for c in 0..3 {
                    px[y * width + x][c] += v * tint[c];
                }
            }
        }
    }

    for _ in 0..rng.gen_range(1..5) {
        let color: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..255.0));
        let cx = rng.gen_range(0.0..width as f64);
        let cy = rng.gen_range(0.0..height as f64);
        let r = rng.gen_range(4.0..(width.min(height) as f64 / 2.0).max(5.0));
        let disc = rng.gen_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                // Signed distance outside the edge, then one pixel of coverage ramp.
                let d = if disc {
                    (dx * dx + dy * dy).sqrt() - r
                } else {
                    (dx.abs() - r).max(dy.abs() - r * 0.6)
                };
                let a = (0.5 - d).clamp(0.0, 1.0);
                if a > 0.0 {
                    let p = &mut px[y * width + x];
                    for c in 0..3 {
                        p[c] += a * (color[c] - p[c]);
                    }
                }
            }
        }
    }

    // A few low-frequency sinusoids; no energy above a quarter of Nyquist.
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(2.0..8.0),
            )
        })
        .collect();
    for y in 0..height {
        for x in 0..width {
            let n: f64 = waves.iter().map(|&(fx, fy, ph, a)| a * (fx * x as f64 + fy * y as f64 + ph).sin()).sum();
            for c in 0..3 {
                px[y * width + x][c] += n;
            }
        }
    }

    let mut data = Vec::with_capacity(width * height * 3);
    for p in px {
        for v in p {
            data.push(to_u8(v / 127.5 - 1.0));
        }
    }
    Image::new(width, height, data).expect("sized buffer")
}
