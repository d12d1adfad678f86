//! Shared fixtures for the benchmarks.

use safeod::experiments::{gen_synthetic, SyntheticSpec};
use safeod::numerics::seeded_rng;
use safeod::DesignProblem;

/// Synthetic instance with `K = 100` actions.
pub fn synthetic(d: usize, alpha: f64, seed: u64) -> DesignProblem {
    let mut rng = seeded_rng(seed);
    gen_synthetic(&SyntheticSpec { d, k: 100, alpha, seed }, &mut rng).expect("valid spec")
}
