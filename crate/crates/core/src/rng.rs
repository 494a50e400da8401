//! Deterministic random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed by
//! `(seed, stream_id)`: the seed expands to the 256-bit key and the stream id
//! selects the 64-bit nonce, so distinct ids give non-overlapping, independent
//! sequences and the block counter plays the role of the draw index.
//! Standard normal draws use the ziggurat sampler of `rand_distr`, which is a
//! fixed deterministic transform of the underlying uniform words.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Well-known stream ids. Trial-indexed streams are derived with [`trial_stream`].
pub mod streams {
    pub const DESIGN: u64 = 0;
    pub const INIT: u64 = 1;
    pub const DIRECTION: u64 = 2;
    pub const FLIPS: u64 = 3;
    pub const LOO_SAMPLE: u64 = 4;
    pub const POWER: u64 = 5;
    pub const PROBE: u64 = 6;
    pub const SIGNAL: u64 = 7;
}

const TRIAL_BASE: u64 = 1 << 32;
const PURPOSES_PER_TRIAL: u64 = 16;

/// Stream id for `purpose` inside Monte-Carlo trial `trial`.
pub fn trial_stream(trial: u64, purpose: u64) -> u64 {
    debug_assert!(purpose < PURPOSES_PER_TRIAL);
    TRIAL_BASE + trial * PURPOSES_PER_TRIAL + purpose
}

pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

pub fn gaussian_vec(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn rademacher(rng: &mut impl Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}
