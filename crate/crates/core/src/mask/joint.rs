use super::{check_dims, BinaryMask, MaskError};

/// Label map over `{0..=L}` holding all surfaces of one image; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct JointMask {
    height: usize,
    width: usize,
    surface_count: u16,
    labels: Vec<u16>,
}

impl JointMask {
    /// All-background joint mask for `surface_count` surfaces.
    pub fn new(height: usize, width: usize, surface_count: u16) -> Result<Self, MaskError> {
        check_dims(height, width)?;
        Ok(Self { height, width, surface_count, labels: vec![0; height * width] })
    }

    pub fn from_labels(height: usize, width: usize, surface_count: u16, labels: Vec<u16>) -> Result<Self, MaskError> {
        check_dims(height, width)?;
        if labels.len() != height * width {
            return Err(MaskError::LengthMismatch { expected: height * width, got: labels.len() });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > surface_count) {
            return Err(MaskError::LabelOutOfRange { label, index, surface_count });
        }
        Ok(Self { height, width, surface_count, labels })
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
    pub fn surface_count(&self) -> u16 {
        self.surface_count
    }

    #[inline]
    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn surface_ids(&self) -> impl Iterator<Item = u16> {
        1..=self.surface_count
    }

    fn check_surface(&self, k: u16) -> Result<(), MaskError> {
        if k == 0 || k > self.surface_count {
            return Err(MaskError::InvalidSurface { id: k, surface_count: self.surface_count });
        }
        Ok(())
    }

    fn check_mask(&self, k: u16, mask: &BinaryMask) -> Result<(), MaskError> {
        self.check_surface(k)?;
        if mask.dims() != self.dims() {
            return Err(MaskError::DimensionMismatch { left: self.dims(), right: mask.dims() });
        }
        Ok(())
    }

    /// Paste `mask` as surface `k`: its pixels become `k`, the rest keep
    /// their label. Later insertions win on overlap.
    pub fn insert_classical(&self, k: u16, mask: &BinaryMask) -> Result<JointMask, MaskError> {
        self.check_mask(k, mask)?;
        let labels = self.labels.iter().zip(mask.bits()).map(|(&l, &m)| if m { k } else { l }).collect();
        Ok(JointMask { labels, ..self.clone() })
    }

    /// Re-insert a revisited surface `k`: its pixels become `k`, pixels that
    /// were `k` but are no longer in `mask` fall back to background, all other
    /// pixels keep their label.
    pub fn insert_revisit(&self, k: u16, mask: &BinaryMask) -> Result<JointMask, MaskError> {
        self.check_mask(k, mask)?;
        let labels = self
            .labels
            .iter()
            .zip(mask.bits())
            .map(|(&l, &m)| match (m, l == k) {
                (true, _) => k,
                (false, true) => 0,
                (false, false) => l,
            })
            .collect();
        Ok(JointMask { labels, ..self.clone() })
    }

    /// Binary mask of the pixels labelled `k`.
    pub fn extract(&self, k: u16) -> Result<BinaryMask, MaskError> {
        self.check_surface(k)?;
        BinaryMask::from_bits(self.height, self.width, self.labels.iter().map(|&l| l == k).collect())
    }

    /// Pixels whose label differs between `self` and `other`.
    pub fn diff(&self, other: &JointMask) -> Result<BinaryMask, MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch { left: self.dims(), right: other.dims() });
        }
        BinaryMask::from_bits(self.height, self.width, self.labels.iter().zip(&other.labels).map(|(a, b)| a != b).collect())
    }
}
