//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfmlab_core::ValueProfile;

/// `n` values drawn uniformly from `[0, hi)` with a fixed seed.
pub fn random_profile(n: usize, hi: f64, seed: u64) -> ValueProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..hi)).collect();
    ValueProfile::from_values(&values)
}

/// Mechanisms benchmarked at block size `k`, with their reserve where one applies.
pub const BOUNDED: [(&str, Option<f64>); 8] = [
    ("first_price", None),
    ("posted_price_all_burn", Some(1.0)),
    ("second_price_no_burn", None),
    ("second_price_reserve_burn", Some(0.5)),
    ("posted_price_random_burn", Some(1.0)),
    ("pay_nothing", None),
    ("signal_oca", None),
    ("multi_bid_signal", Some(2.0)),
];
