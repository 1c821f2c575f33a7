//! Counter-based reproducible random streams.
//!
//! Every Monte Carlo sample draws from its own ChaCha substream, derived from
//! the master seed and the sample index. Results are therefore bit-identical
//! for a fixed master seed under any parallel schedule or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct RngPlan {
    master_seed: u64,
}

impl RngPlan {
    pub fn new(master_seed: u64) -> Self {
        RngPlan { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Independent substream for one sample/trajectory index.
    pub fn substream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(index);
        rng
    }

    /// A derived plan for a named sub-experiment, so nested estimators do
    /// not reuse the parent's substream indices.
    pub fn fork(&self, tag: u64) -> RngPlan {
        // splitmix64 step keeps forks decorrelated
        let mut z = self.master_seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngPlan {
            master_seed: z ^ (z >> 31),
        }
    }
}
