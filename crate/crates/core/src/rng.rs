//! Seed substreams.
//!
//! Every random draw in a run comes from one top-level seed. Each consumer
//! (stage, segment, channel) gets its own ChaCha stream addressed by those
//! coordinates, so adding or reordering a stage never shifts the draws of
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Pipeline stages that consume randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Stage {
    Emission = 1,
    Wdm = 2,
    Survival = 3,
    Analyzer = 4,
    Mode = 5,
    Detection = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    key: [u8; 32],
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        let mut state = seed;
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        SeedTree { key }
    }

    /// Independent generator for `(stage, segment, channel)`.
    pub fn stream(&self, stage: Stage, segment: u32, channel: u16) -> SimRng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        let id = ((stage as u64) << 56) | ((segment as u64) << 16) | channel as u64;
        rng.set_stream(id);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
