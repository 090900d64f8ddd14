//! Seeded random number generation.
//!
//! Every stochastic routine draws from [`SimRng`], the ChaCha stream cipher
//! with 8 rounds (`rand_chacha::ChaCha8Rng`). ChaCha is counter based and its
//! output stream is specified independently of platform and word size, so a
//! seed reproduces the same draws everywhere.

use rand::{Rng, SeedableRng};

pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Derive an independent child seed for a labelled sub-stream.
pub fn child_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Exponential variate with the given rate, by inversion.
pub fn exponential(rng: &mut SimRng, rate: f64) -> f64 {
    // gen::<f64>() is in [0, 1); 1 - u is in (0, 1]
    let u: f64 = rng.gen();
    -(1.0 - u).ln() / rate
}

pub fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = seeded(7);
        let mut b = seeded(7);
        for _ in 0..10 {
            assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        }
    }

    #[test]
    fn child_seeds_differ() {
        assert_ne!(child_seed(1, 0), child_seed(1, 1));
        assert_ne!(child_seed(1, 0), child_seed(2, 0));
    }

    #[test]
    fn exponential_mean() {
        let mut rng = seeded(3);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| exponential(&mut rng, 4.0)).sum::<f64>() / n as f64;
        assert!((mean - 0.25).abs() < 0.005, "{mean}");
    }
}
