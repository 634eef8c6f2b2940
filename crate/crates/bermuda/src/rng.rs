//! Splittable random number streams.
//!
//! Every consumer of randomness (a training set, a testing set, a repetition,
//! a single trajectory) gets its own stream derived from a master seed and a
//! chain of namespace tags. Streams are independent of thread scheduling:
//! trajectory `i` always draws from the same generator no matter which worker
//! simulates it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer, used to mix tags into seed material.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Identifier of an independent random stream: a master seed plus a
/// namespace built up by [`StreamKey::child`] calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    seed: u64,
    namespace: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey { seed, namespace: 0 }
    }

    /// Derive a sub-stream; distinct tags give statistically independent streams.
    pub fn child(&self, tag: u64) -> StreamKey {
        StreamKey {
            seed: self.seed,
            namespace: mix(self.namespace ^ mix(tag)),
        }
    }

    /// Generator for item `index` (e.g. one trajectory) within this stream.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let a = mix(self.seed ^ mix(self.namespace ^ mix(index)));
        let b = mix(a);
        let c = mix(b);
        let d = mix(c);
        let mut bytes = [0u8; 32];
        bytes[..8].copy_from_slice(&a.to_le_bytes());
        bytes[8..16].copy_from_slice(&b.to_le_bytes());
        bytes[16..24].copy_from_slice(&c.to_le_bytes());
        bytes[24..].copy_from_slice(&d.to_le_bytes());
        ChaCha8Rng::from_seed(bytes)
    }
}

/// Well-known namespace tags so that training, testing and repetition
/// streams can never collide.
pub mod tags {
    pub const TRAINING: u64 = 0x7261696e;
    pub const TESTING: u64 = 0x74657374;
    pub const LEVEL: u64 = 0x6c65766c;
    pub const REPETITION: u64 = 0x72657065;
    pub const REFERENCE: u64 = 0x72656665;
}
