//! Seeded parameter initialisation. Every module draws from one ChaCha stream
//! in construction order, so a seed fully determines a network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub struct ParamInit {
    rng: ChaCha8Rng,
}

impl ParamInit {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn normal(&mut self, len: usize, std: f32) -> Vec<f32> {
        let dist = Normal::new(0.0f32, std).expect("std must be finite and non-negative");
        (0..len).map(|_| dist.sample(&mut self.rng)).collect()
    }

    /// Normal samples redrawn until they fall within two standard deviations.
    pub fn trunc_normal(&mut self, len: usize, std: f32) -> Vec<f32> {
        let dist = Normal::new(0.0f32, std).expect("std must be finite and non-negative");
        (0..len)
            .map(|_| loop {
                let v = dist.sample(&mut self.rng);
                if v.abs() <= 2.0 * std {
                    break v;
                }
            })
            .collect()
    }
}
