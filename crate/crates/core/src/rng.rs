//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `(seed, stream tag)` and selected by an index (usually the path number).
//! A path's draws therefore never depend on how paths are scheduled across
//! threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Real;

/// Stream tags. Distinct purposes never share a key.
pub mod stream {
    pub const SIMULATE: u64 = 1;
    pub const FEYNMAN_KAC: u64 = 2;
    pub const GENERATOR: u64 = 3;
    pub const FIELD: u64 = 4;
    pub const GROWTH_CHECK: u64 = 5;
    pub const VERIFY: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a user seed with a stream tag into a 64-bit key.
pub fn derive_key(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_mul(0xd1b5_4a32_d192_ed03)))
}

/// The generator for `(seed, tag, index)`.
pub fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_key(seed, tag));
    rng.set_stream(index);
    rng
}

/// One standard normal draw converted to `T`.
///
/// Draws are always generated in `f64` so that `f32` and `f64` runs consume
/// identical streams.
#[inline]
pub fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = rng.sample(StandardNormal);
    T::lit(z)
}

/// Uniform draw in `[lo, hi)`.
#[inline]
pub fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, lo: T, hi: T) -> T {
    let u: f64 = rng.random();
    lo + (hi - lo) * T::lit(u)
}
