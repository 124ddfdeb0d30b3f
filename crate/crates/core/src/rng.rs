//! Counter-style random streams.
//!
//! Every chain owns an independent ChaCha stream selected by its index, so a
//! sampler's output is a pure function of `(seed, chain index)` and does not
//! depend on how chains are split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream offset reserved for non-chain uses (parameter draws, projections).
pub const AUX_STREAM_BASE: u64 = 1 << 40;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    stream_rng(seed, chain as u64)
}

pub fn aux_rng(seed: u64, purpose: u64) -> ChaCha8Rng {
    stream_rng(seed, AUX_STREAM_BASE + purpose)
}

pub fn fill_standard_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}
