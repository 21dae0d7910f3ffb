//! Mask algebra: binary masks, the joint label map holding all surfaces of an
//! image, click encoding and the run-length wire format.

mod clicks;
mod joint;
mod rle;

pub use clicks::{assemble_interaction, encode_clicks, Click, ClickMaps, InteractionTensor, Polarity};
pub use joint::JointMask;
pub use rle::RleMask;

use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaskError {
    #[error("mask dimensions must be positive, got {height}x{width}")]
    EmptyDimensions { height: usize, width: usize },
    #[error("expected {expected} values for the mask, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("surface id {id} outside 1..={surface_count}")]
    InvalidSurface { id: u16, surface_count: u16 },
    #[error("label {label} at pixel {index} exceeds surface count {surface_count}")]
    LabelOutOfRange { label: u16, index: usize, surface_count: u16 },
    #[error("click ({row}, {col}) lies outside the {height}x{width} image")]
    ClickOutOfBounds { row: usize, col: usize, height: usize, width: usize },
    #[error("run lengths sum to {got}, mask has {expected} pixels")]
    RleCountMismatch { expected: u64, got: u64 },
}

fn check_dims(height: usize, width: usize) -> Result<(), MaskError> {
    if height == 0 || width == 0 {
        return Err(MaskError::EmptyDimensions { height, width });
    }
    Ok(())
}

/// `H x W` boolean grid in row-major order.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    /// All-background mask.
    pub fn new(height: usize, width: usize) -> Result<Self, MaskError> {
        check_dims(height, width)?;
        Ok(Self { height, width, bits: vec![false; height * width] })
    }

    pub fn full(height: usize, width: usize) -> Result<Self, MaskError> {
        check_dims(height, width)?;
        Ok(Self { height, width, bits: vec![true; height * width] })
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, MaskError> {
        check_dims(height, width)?;
        if bits.len() != height * width {
            return Err(MaskError::LengthMismatch { expected: height * width, got: bits.len() });
        }
        Ok(Self { height, width, bits })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self, MaskError> {
        check_dims(height, width)?;
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Ok(Self { height, width, bits })
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
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// True when no pixel is set.
    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// `(row, col)` of every set pixel in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i / w, i % w))
    }

    pub fn ensure_same_dims(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch { left: self.dims(), right: other.dims() });
        }
        Ok(())
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask, MaskError> {
        self.ensure_same_dims(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect();
        Ok(BinaryMask { height: self.height, width: self.width, bits })
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.zip_with(other, |a, b| a || b)
    }

    /// `self AND NOT other`
    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.zip_with(other, |a, b| a && !b)
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMask {}x{} ({} set)", self.height, self.width, self.count())?;
        if self.height * self.width <= 4096 {
            for r in 0..self.height {
                let row: String = (0..self.width).map(|c| if self.get(r, c) { '#' } else { '.' }).collect();
                writeln!(f, "  {row}")?;
            }
        }
        Ok(())
    }
}

/// Intersection over union in percentage points. Two empty masks score 100.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MaskError> {
    a.ensure_same_dims(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        return Ok(100.0);
    }
    Ok(inter as f64 / union as f64 * 100.0)
}
