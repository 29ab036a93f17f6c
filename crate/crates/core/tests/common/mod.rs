#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamconv_core::SignalTensor;

pub fn white_noise(seed: u64, n: usize) -> SignalTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SignalTensor::mono((0..n).map(|_| rng.random_range(-1.0f32..=1.0)).collect())
}

/// Largest `|causal[i + shift] - original[i]|` over `i >= skip`.
///
/// Samples before `skip` may differ: the original graph sees zero padding at
/// every layer there while the rewritten graph sees its own start-up values.
pub fn shifted_max_err(
    original: &SignalTensor,
    causal: &SignalTensor,
    shift: usize,
    skip: usize,
) -> f32 {
    let (a, b) = (original.data(), causal.data());
    assert_eq!(a.len(), b.len());
    assert!(skip + shift < a.len(), "signal too short for shift {shift} + skip {skip}");
    (skip..a.len() - shift)
        .map(|i| (b[i + shift] - a[i]).abs())
        .fold(0.0, f32::max)
}
