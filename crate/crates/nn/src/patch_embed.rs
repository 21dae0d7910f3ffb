//! Multi-scale patch embedding of the 3-channel interaction tensor
//! (positive disks, negative disks, previous mask). Level `i` is a convolution
//! with kernel = stride = `i`, so every output cell sees exactly its own
//! `i x i` block of the input.

use crate::backbone::check_divisible;
use crate::fpn::{FeaturePyramid, STRIDES};
use crate::init::ParamInit;
use crate::ops::{Conv2d, LayerNorm};
use crate::{NnError, Tensor3};

#[derive(Clone, Debug)]
pub struct MsPatchEmbed {
    pub dims: [usize; 4],
    pub convs: [Conv2d; 4],
    pub norms: [LayerNorm; 4],
}

impl MsPatchEmbed {
    pub fn new(init: &mut ParamInit, dims: [usize; 4]) -> Self {
        let convs = [0, 1, 2, 3].map(|i| Conv2d::new(init, 3, dims[i], STRIDES[i], STRIDES[i], 0));
        let norms = dims.map(LayerNorm::new);
        Self { dims, convs, norms }
    }

    fn check_input(&self, interaction: &Tensor3) -> Result<(), NnError> {
        if interaction.channels() != 3 {
            return Err(NnError::Shape(format!(
                "interaction tensor needs 3 channels, got {}",
                interaction.channels()
            )));
        }
        check_divisible(interaction.height(), interaction.width(), 32, "interaction tensor")
    }

    /// Convolution outputs before normalisation.
    pub fn pre_activation(&self, interaction: &Tensor3) -> Result<[Tensor3; 4], NnError> {
        self.check_input(interaction)?;
        Ok([
            self.convs[0].forward(interaction)?,
            self.convs[1].forward(interaction)?,
            self.convs[2].forward(interaction)?,
            self.convs[3].forward(interaction)?,
        ])
    }

    pub fn forward(&self, interaction: &Tensor3) -> Result<FeaturePyramid, NnError> {
        let [a, b, c, d] = self.pre_activation(interaction)?;
        Ok(FeaturePyramid {
            levels: [
                self.norms[0].forward(&a)?,
                self.norms[1].forward(&b)?,
                self.norms[2].forward(&c)?,
                self.norms[3].forward(&d)?,
            ],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_interaction_gives_zero_pyramid() {
        let mut init = ParamInit::new(0);
        let embed = MsPatchEmbed::new(&mut init, [8, 16, 24, 32]);
        let p = embed.forward(&Tensor3::zeros(64, 64, 3)).unwrap();
        assert_eq!(p.shapes(), [(16, 16, 8), (8, 8, 16), (4, 4, 24), (2, 2, 32)]);
        assert!(p.levels.iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn corner_click_touches_only_corner_cells() {
        let mut init = ParamInit::new(0);
        let embed = MsPatchEmbed::new(&mut init, [8, 16, 24, 32]);
        let mut x = Tensor3::zeros(64, 64, 3);
        x.data_mut()[0] = 1.0;
        for level in embed.pre_activation(&x).unwrap() {
            for r in 0..level.height() {
                for c in 0..level.width() {
                    let nonzero = level.pixel(r, c).iter().any(|&v| v != 0.0);
                    assert_eq!(nonzero, (r, c) == (0, 0), "cell ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut init = ParamInit::new(0);
        let embed = MsPatchEmbed::new(&mut init, [8, 8, 8, 8]);
        assert!(embed.forward(&Tensor3::zeros(48, 64, 3)).is_err());
        assert!(embed.forward(&Tensor3::zeros(64, 64, 2)).is_err());
    }
}
