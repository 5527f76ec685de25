//! 8-bit RGB images, binary PPM (P6) I/O, and conversion to the `[-1, 1]`
//! tensors the transforms consume.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::TensorF;
use crate::transforms::BLOCK;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "image {width}x{height} needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { width, height, data }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// Normalized to `[-1, 1]` without padding.
    pub fn to_tensor(&self) -> TensorF {
        TensorF::from_fn(self.height, self.width, 3, |y, x, c| self.get(y, x, c) as f64 / 127.5 - 1.0)
    }

    /// Normalized and padded to multiples of the transform block by edge
    /// replication.
    pub fn to_padded_tensor(&self) -> TensorF {
        let (h, w) = padded_dims(self.height, self.width);
        TensorF::from_fn(h, w, 3, |y, x, c| {
            self.get(y.min(self.height - 1), x.min(self.width - 1), c) as f64 / 127.5 - 1.0
        })
    }

    /// Inverse of `to_tensor`: clips to `[-1, 1]`, rounds to 8 bits and crops
    /// to `width × height` from the top-left corner.
    pub fn from_tensor(t: &TensorF, width: usize, height: usize) -> Result<Self> {
        if t.channels() != 3 || t.width() < width || t.height() < height {
            return Err(Error::ShapeMismatch {
                op: "Image::from_tensor",
                dim: "tensor smaller than crop or not RGB",
                got: t.len(),
                expected: width * height * 3,
            });
        }
        Ok(Self::from_fn(width, height, |y, x, c| to_u8(t.get(y, x, c))))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(crate::error::invalid("crop outside image"));
        }
        Ok(Self::from_fn(width, height, |y, x, c| self.get(top + y, left + x, c)))
    }
}

/// `[-1, 1]` → `0..=255`, clipping out-of-range values.
pub fn to_u8(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn padded_dims(height: usize, width: usize) -> (usize, usize) {
    (height.div_ceil(BLOCK) * BLOCK, width.div_ceil(BLOCK) * BLOCK)
}

fn skip_ws_and_comments(b: &[u8], mut i: usize) -> usize {
    loop {
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < b.len() && b[i] == b'#' {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
        } else {
            return i;
        }
    }
}

fn header_number(b: &[u8], i: &mut usize) -> Result<usize> {
    *i = skip_ws_and_comments(b, *i);
    let start = *i;
    while *i < b.len() && b[*i].is_ascii_digit() {
        *i += 1;
    }
    std::str::from_utf8(&b[start..*i])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad PPM header number at byte {start}")))
}

pub fn parse_ppm(b: &[u8]) -> Result<Image> {
    if b.len() < 2 || &b[..2] != b"P6" {
        return Err(Error::Format("not a binary PPM (P6)".into()));
    }
    let mut i = 2;
    let width = header_number(b, &mut i)?;
    let height = header_number(b, &mut i)?;
    let maxval = header_number(b, &mut i)?;
    if maxval != 255 {
        return Err(Error::Format(format!("PPM maxval {maxval}; only 8-bit (255) is supported")));
    }
    if i >= b.len() || !b[i].is_ascii_whitespace() {
        return Err(Error::Format("PPM header not terminated".into()));
    }
    i += 1;
    let need = width * height * 3;
    if b.len() < i + need {
        return Err(Error::Format(format!("PPM pixel data truncated: {} of {need} bytes", b.len() - i)));
    }
    Image::new(width, height, b[i..i + need].to_vec())
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    parse_ppm(&std::fs::read(path)?)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, &encode_ppm(img))
}
