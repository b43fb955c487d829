//! Named, independent random streams derived from one root seed.
//!
//! Every consumer of randomness asks for a stream by name plus a tuple of
//! indices (round, client, ...). Streams never share state, so enabling a
//! feature in one part of the pipeline cannot shift the draws seen elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Well-known stream names.
pub mod names {
    pub const INIT: &str = "init";
    pub const PARTITION: &str = "partition";
    pub const NOISE: &str = "noise";
    pub const CLIENTS: &str = "client-sampling";
    pub const SHUFFLE: &str = "client-shuffle";
    pub const AT_SAMPLING: &str = "at-sampling";
    pub const IFOREST: &str = "iforest";
    pub const SYNTH_TRAIN: &str = "synth-train";
    pub const SYNTH_TEST: &str = "synth-test";
    pub const SYNTH_OPEN_SET: &str = "synth-open-set";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    root: u64,
}

impl RngStreams {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Seed of the stream `name` at `indices`.
    pub fn seed(&self, name: &str, indices: &[u64]) -> u64 {
        let mut state = splitmix64(self.root ^ fnv1a(name.as_bytes()));
        for &index in indices {
            state = splitmix64(state ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)));
        }
        state
    }

    pub fn stream(&self, name: &str, indices: &[u64]) -> StreamRng {
        StreamRng::seed_from_u64(self.seed(name, indices))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
