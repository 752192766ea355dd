//! Per-call seed derivation. All randomness in the crate flows from seeds built here,
//! never from shared generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Order-sensitive seed builder.
#[derive(Clone, Copy, Debug)]
pub struct SeedMixer(u64);

impl SeedMixer {
    pub fn new(seed: u64) -> Self {
        Self(splitmix64(seed))
    }

    pub fn with_str(self, s: &str) -> Self {
        Self(splitmix64(self.0 ^ fnv1a(s.as_bytes())))
    }

    pub fn with_u64(self, v: u64) -> Self {
        Self(splitmix64(self.0 ^ splitmix64(v)))
    }

    pub fn finish(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Uniform value in `[0, 1)` from a seed, without building a generator.
pub fn unit_interval(seed: u64) -> f64 {
    (splitmix64(seed) >> 11) as f64 / (1u64 << 53) as f64
}
