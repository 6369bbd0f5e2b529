//! Counter-based Brownian increments.
//!
//! An increment is a pure function of `(seed, particle label, step, coordinate)`:
//! ChaCha is keyed by `(seed, label)` and the stream selects the step. Restarts,
//! Yosida ladders and policy comparisons therefore replay identical noise, and
//! the result does not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed for a named purpose.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    mix64(seed ^ mix64(purpose.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub(crate) const PURPOSE_INIT: u64 = 1;
pub(crate) const PURPOSE_NOISE: u64 = 2;
pub(crate) const PURPOSE_RANDOMIZER: u64 = 3;

/// A ChaCha generator keyed by `(seed, label)` positioned on `stream`.
pub fn keyed_rng(seed: u64, label: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&label.to_le_bytes());
    key[16..24].copy_from_slice(&mix64(seed ^ label.rotate_left(17)).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStream {
    pub seed: u64,
    /// Each step's increment is the sum of this many finer increments, so a
    /// grid with `M` steps and `r` substeps shares its Brownian path with a
    /// grid of `M r` steps.
    pub substeps: usize,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, substeps: 1 }
    }

    pub fn with_substeps(seed: u64, substeps: usize) -> Self {
        Self {
            seed,
            substeps: substeps.max(1),
        }
    }

    /// Writes the Brownian increment `Delta B` over `step` (length `dt`) into `out`.
    pub fn increment(&self, label: usize, step: usize, dt: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let r = self.substeps;
        let scale = (dt / r as f64).sqrt();
        for q in 0..r {
            let mut rng = keyed_rng(self.seed, label as u64, (step * r + q) as u64);
            for v in out.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += scale * z;
            }
        }
    }
}

/// Uniform `[0,1)` randomizer for particle `label`, independent of the noise.
pub fn randomizer(seed: u64, label: usize) -> f64 {
    let mut rng = keyed_rng(derive_seed(seed, PURPOSE_RANDOMIZER), label as u64, 0);
    rng.random::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{mean, variance};

    #[test]
    fn increments_are_reproducible_and_keyed() {
        let ns = NoiseStream::new(42);
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        ns.increment(5, 17, 0.01, &mut a);
        ns.increment(5, 17, 0.01, &mut b);
        assert_eq!(a, b);
        ns.increment(6, 17, 0.01, &mut b);
        assert_ne!(a, b);
        ns.increment(5, 18, 0.01, &mut b);
        assert_ne!(a, b);
    }

    #[test]
    fn substeps_share_the_fine_path() {
        let coarse = NoiseStream::with_substeps(9, 4);
        let fine = NoiseStream::new(9);
        let mut c = [0.0; 2];
        coarse.increment(3, 2, 0.4, &mut c);
        let mut sum = [0.0; 2];
        let mut f = [0.0; 2];
        for q in 0..4 {
            fine.increment(3, 2 * 4 + q, 0.1, &mut f);
            sum[0] += f[0];
            sum[1] += f[1];
        }
        assert!((c[0] - sum[0]).abs() < 1e-15 && (c[1] - sum[1]).abs() < 1e-15);
    }

    #[test]
    fn increments_have_variance_dt() {
        let ns = NoiseStream::new(1);
        let dt = 0.25;
        let xs: Vec<f64> = (0..20_000)
            .map(|i| {
                let mut o = [0.0];
                ns.increment(i, 0, dt, &mut o);
                o[0]
            })
            .collect();
        let se_mean = (dt / xs.len() as f64).sqrt();
        assert!(mean(&xs).abs() < 4.0 * se_mean);
        assert!((variance(&xs) - dt).abs() < 4.0 * dt * (2.0 / xs.len() as f64).sqrt());
    }

    #[test]
    fn randomizers_are_uniform() {
        let rs: Vec<f64> = (0..10_000).map(|i| randomizer(3, i)).collect();
        assert!(rs.iter().all(|r| (0.0..1.0).contains(r)));
        assert!((mean(&rs) - 0.5).abs() < 4.0 * (1.0 / 12.0 / 10_000.0f64).sqrt());
    }
}
