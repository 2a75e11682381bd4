//! Counter-based seed derivation.
//!
//! Every random quantity in an episode is drawn from its own ChaCha stream
//! whose seed is a hash of `(parent seed, purpose, index...)`. Streams never
//! depend on evaluation order, so parallel and sequential runs agree and
//! adding a sweep cell does not shift the draws of any other cell.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tags keep streams for different subsystems disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Setup = 1,
    Deployment = 2,
    UePlacement = 3,
    ShadowInit = 4,
    ShadowStep = 5,
    SmallScale = 6,
    Payload = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed, a purpose tag and indices.
pub fn derive_seed(parent: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix64(parent ^ splitmix64(stream as u64));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn substream(parent: u64, stream: Stream, indices: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(parent, stream, indices))
}
