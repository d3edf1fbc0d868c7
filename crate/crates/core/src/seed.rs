//! Deterministic seeding helpers.
//!
//! All randomness in the crate flows through [`rng`], a ChaCha8 stream keyed
//! by a 64-bit seed, so identical seeds reproduce identical bits on every
//! platform. [`mix`] derives sub-seeds from a parent seed and a field value;
//! the sweep runner uses it to give every (cell, trial) its own independent
//! stream regardless of execution order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// SplitMix64 finalizer (Steele, Lea & Flood). Bijective on u64.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `seed` and a field `value`. Not commutative:
/// `mix(mix(s, a), b)` chains fields in order.
pub fn mix(seed: u64, value: u64) -> u64 {
    splitmix64(seed ^ splitmix64(value))
}

/// Deterministic generator for the given seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Vector with iid standard normal entries drawn in index order.
pub fn gaussian_vector<R: Rng>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Matrix with iid standard normal entries drawn in column-major order.
pub fn gaussian_matrix<R: Rng>(rng: &mut R, nrows: usize, ncols: usize) -> DMatrix<f64> {
    DMatrix::from_iterator(
        nrows,
        ncols,
        (0..nrows * ncols).map(|_| rng.sample::<f64, _>(StandardNormal)),
    )
}
