use crate::error::{Error, Result};

/// Dense `height × width × channels` grid of reals, row-major with the
/// channel index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorF {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl TensorF {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                op: "TensorF::new",
                dim: "data length",
                got: data.len(),
                expected,
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// All channels at one spatial position.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f64] {
        let start = (y * self.width + x) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape(&self, other: &TensorF) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_shape(&self, op: &'static str, shape: (usize, usize, usize)) -> Result<()> {
        let (h, w, c) = shape;
        let dims = [
            ("height", self.height, h),
            ("width", self.width, w),
            ("channels", self.channels, c),
        ];
        for (dim, got, expected) in dims {
            if got != expected {
                return Err(Error::ShapeMismatch {
                    op,
                    dim,
                    got,
                    expected,
                });
            }
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &TensorF) -> Result<()> {
        other.ensure_shape("add_assign", self.shape())?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &TensorF) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Channel-wise slice `[start, end)`.
    pub fn channel_slice(&self, start: usize, end: usize) -> Result<TensorF> {
        if start > end || end > self.channels {
            return Err(Error::ShapeMismatch {
                op: "channel_slice",
                dim: "channels",
                got: end,
                expected: self.channels,
            });
        }
        let c = end - start;
        let mut data = Vec::with_capacity(self.height * self.width * c);
        for px in self.data.chunks_exact(self.channels.max(1)) {
            data.extend_from_slice(&px[start..end]);
        }
        TensorF::new(self.height, self.width, c, data)
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &TensorF, b: &TensorF) -> Result<TensorF> {
        b.ensure_shape("concat_channels", (a.height, a.width, b.channels))?;
        let c = a.channels + b.channels;
        let mut data = Vec::with_capacity(a.height * a.width * c);
        for i in 0..a.height * a.width {
            data.extend_from_slice(&a.data[i * a.channels..(i + 1) * a.channels]);
            data.extend_from_slice(&b.data[i * b.channels..(i + 1) * b.channels]);
        }
        TensorF::new(a.height, a.width, c, data)
    }
}

/// A named trainable parameter of arbitrary rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
