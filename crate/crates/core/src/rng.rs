//! Named random sub-streams derived from a single run seed.
//!
//! Every random draw in a run goes through one of these streams. Each
//! stream is seeded from `(run seed, stream label)` so that removing draws
//! from one stream (e.g. disabling wandering) leaves the others aligned.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    World,
    Exploration,
    Wandering,
    Observation,
}

impl Stream {
    pub fn label(self) -> &'static str {
        match self {
            Stream::World => "world",
            Stream::Exploration => "exploration",
            Stream::Wandering => "wandering",
            Stream::Observation => "observation",
        }
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a, stable across platforms and releases
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Continuous stream for `label` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> StreamRng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(label_hash(stream.label()))))
}

/// Stream keyed additionally by a step index. Used where draws at step `t`
/// must not depend on how many draws earlier steps consumed.
pub fn stream_at(seed: u64, stream: Stream, t: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(label_hash(stream.label()))) ^ mix(t)))
}
