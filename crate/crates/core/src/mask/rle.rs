use serde::{Deserialize, Serialize};

use super::{BinaryMask, MaskError};

/// Row-major run lengths alternating background/foreground, always starting
/// with a (possibly empty) background run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    #[serde(rename = "h")]
    pub height: usize,
    #[serde(rename = "w")]
    pub width: usize,
    pub counts: Vec<u64>,
}

impl RleMask {
    pub fn encode(mask: &BinaryMask) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for &bit in mask.bits() {
            if bit != current {
                counts.push(run);
                run = 0;
                current = bit;
            }
            run += 1;
        }
        counts.push(run);
        Self { height: mask.height(), width: mask.width(), counts }
    }

    pub fn decode(&self) -> Result<BinaryMask, MaskError> {
        let expected = (self.height * self.width) as u64;
        let got = self.counts.iter().try_fold(0u64, |acc, &c| acc.checked_add(c)).unwrap_or(u64::MAX);
        if got != expected {
            return Err(MaskError::RleCountMismatch { expected, got });
        }
        let mut bits = Vec::with_capacity(expected as usize);
        for (i, &run) in self.counts.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, run as usize));
        }
        BinaryMask::from_bits(self.height, self.width, bits)
    }
}
