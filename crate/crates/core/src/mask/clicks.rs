use serde::{Deserialize, Serialize};

use super::{BinaryMask, MaskError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// A user (or simulated) click: pixel coordinate plus foreground/background.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Click {
    pub row: usize,
    pub col: usize,
    pub polarity: Polarity,
}

impl Click {
    pub fn positive(row: usize, col: usize) -> Self {
        Self { row, col, polarity: Polarity::Positive }
    }

    pub fn negative(row: usize, col: usize) -> Self {
        Self { row, col, polarity: Polarity::Negative }
    }

    pub fn is_positive(&self) -> bool {
        self.polarity == Polarity::Positive
    }

    pub fn check_bounds(&self, height: usize, width: usize) -> Result<(), MaskError> {
        if self.row >= height || self.col >= width {
            return Err(MaskError::ClickOutOfBounds { row: self.row, col: self.col, height, width });
        }
        Ok(())
    }
}

/// Disk rasterisations of the positive and negative clicks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClickMaps {
    pub positive: BinaryMask,
    pub negative: BinaryMask,
    pub disk_radius: u32,
}

/// Pixel `(r, c)` is set in a polarity's map iff it lies within Euclidean
/// distance `radius` of a click of that polarity.
pub fn encode_clicks(clicks: &[Click], height: usize, width: usize, radius: u32) -> Result<ClickMaps, MaskError> {
    let mut positive = BinaryMask::new(height, width)?;
    let mut negative = BinaryMask::new(height, width)?;
    let r = radius as usize;
    let r2 = u64::from(radius) * u64::from(radius);
    for click in clicks {
        click.check_bounds(height, width)?;
        let target = if click.is_positive() { &mut positive } else { &mut negative };
        for row in click.row.saturating_sub(r)..=(click.row + r).min(height - 1) {
            let dr = row.abs_diff(click.row) as u64;
            for col in click.col.saturating_sub(r)..=(click.col + r).min(width - 1) {
                let dc = col.abs_diff(click.col) as u64;
                if dr * dr + dc * dc <= r2 {
                    target.set(row, col, true);
                }
            }
        }
    }
    Ok(ClickMaps { positive, negative, disk_radius: radius })
}

/// The 3-plane network input `[positive disks; negative disks; previous mask]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionTensor {
    height: usize,
    width: usize,
    planes: [Vec<f32>; 3],
}

impl InteractionTensor {
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Channel `0` positive, `1` negative, `2` previous mask.
    pub fn plane(&self, channel: usize) -> &[f32] {
        &self.planes[channel]
    }

    /// Row-major values with the three channels interleaved per pixel.
    pub fn to_interleaved(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = Vec::with_capacity(3 * n);
        for i in 0..n {
            out.extend(self.planes.iter().map(|p| p[i]));
        }
        out
    }
}

fn plane(mask: &BinaryMask) -> Vec<f32> {
    mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

pub fn assemble_interaction(
    clicks: &[Click],
    prev_mask: &BinaryMask,
    radius: u32,
) -> Result<InteractionTensor, MaskError> {
    let (h, w) = prev_mask.dims();
    let maps = encode_clicks(clicks, h, w, radius)?;
    Ok(InteractionTensor {
        height: h,
        width: w,
        planes: [plane(&maps.positive), plane(&maps.negative), plane(prev_mask)],
    })
}
