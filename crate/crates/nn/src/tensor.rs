//! Dense `height x width x channels` feature maps stored row-major with the
//! channel axis innermost.

use crate::NnError;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, NnError> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(NnError::Shape(format!(
                "tensor dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(NnError::Shape(format!(
                "tensor {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "tensor dimensions must be positive");
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut t = Self::zeros(height, width, channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    t.data[(r * width + c) * channels + ch] = f(r, c, ch);
                }
            }
        }
        t
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

    /// `(height, width, channels)`
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn ensure_shape(&self, expected: (usize, usize, usize), what: &str) -> Result<(), NnError> {
        if self.shape() != expected {
            return Err(NnError::Shape(format!(
                "{what}: expected {:?}, got {:?}",
                expected,
                self.shape()
            )));
        }
        Ok(())
    }

    /// Element-wise sum; shapes must match exactly (no broadcasting).
    pub fn add(&self, other: &Tensor3) -> Result<Tensor3, NnError> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Tensor3) -> Result<(), NnError> {
        other.ensure_shape(self.shape(), "element-wise sum")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn map_inplace(&mut self, f: impl Fn(f32) -> f32) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(parts: &[&Tensor3]) -> Result<Tensor3, NnError> {
        let first = parts.first().ok_or_else(|| NnError::Shape("nothing to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        let mut total = 0;
        for p in parts {
            if p.height != h || p.width != w {
                return Err(NnError::Shape(format!(
                    "channel concat: spatial mismatch {}x{} vs {}x{}",
                    h, w, p.height, p.width
                )));
            }
            total += p.channels;
        }
        let mut data = Vec::with_capacity(h * w * total);
        for i in 0..h * w {
            for p in parts {
                data.extend_from_slice(&p.data[i * p.channels..(i + 1) * p.channels]);
            }
        }
        Tensor3::new(h, w, total, data)
    }

    /// Stable 64-bit FNV-1a hash over shape and bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                hash ^= u64::from(*b);
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(&(self.height as u64).to_le_bytes());
        feed(&(self.width as u64).to_le_bytes());
        feed(&(self.channels as u64).to_le_bytes());
        for v in &self.data {
            feed(&v.to_bits().to_le_bytes());
        }
        hash
    }
}
