//! Counter-based Gaussian noise.
//!
//! Every standard normal is addressed by `(seed, stream, step, channel)`:
//! ChaCha8 is keyed by `seed`, `stream` selects the ChaCha stream and each
//! step consumes a fixed block of the keystream. Trajectories are therefore
//! identical regardless of how ensembles are scheduled across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 32-bit keystream words consumed per Box–Muller pair (two `u64` draws).
const WORDS_PER_PAIR: u128 = 4;

#[derive(Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    channels: usize,
    pairs_per_step: usize,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64, channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, channels, pairs_per_step: channels.div_ceil(2) }
    }

    /// Positions the stream at the first draw of `step`.
    pub fn seek(&mut self, step: u64) {
        self.rng.set_word_pos(step as u128 * self.pairs_per_step as u128 * WORDS_PER_PAIR);
    }

    /// Writes the `channels` standard normals of the current step and
    /// advances to the next step.
    pub fn fill(&mut self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        for p in 0..self.pairs_per_step {
            let (z0, z1) = box_muller(self.rng.next_u64(), self.rng.next_u64());
            out[2 * p] = z0;
            if 2 * p + 1 < self.channels {
                out[2 * p + 1] = z1;
            }
        }
    }
}

#[inline]
fn box_muller(a: u64, b: u64) -> (f64, f64) {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    // u1 in (0, 1], u2 in [0, 1)
    let u1 = ((a >> 11) + 1) as f64 * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Mixes a base seed with an index into an independent 64-bit seed
/// (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seek_matches_sequential_draws() {
        for channels in [1, 2, 3] {
            let mut seq = NoiseStream::new(7, 3, channels);
            let mut draws = Vec::new();
            for _ in 0..50 {
                let mut z = vec![0.0; channels];
                seq.fill(&mut z);
                draws.push(z);
            }
            let mut jump = NoiseStream::new(7, 3, channels);
            for step in [37u64, 2, 49, 0] {
                jump.seek(step);
                let mut z = vec![0.0; channels];
                jump.fill(&mut z);
                assert_eq!(z, draws[step as usize]);
            }
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = NoiseStream::new(1, 0, 1);
        let mut b = NoiseStream::new(1, 1, 1);
        let (mut za, mut zb) = ([0.0], [0.0]);
        a.fill(&mut za);
        b.fill(&mut zb);
        assert_ne!(za, zb);
    }

    #[test]
    fn moments_are_standard_normal() {
        let mut s = NoiseStream::new(42, 0, 2);
        let n = 200_000;
        let (mut m1, mut m2, mut m4) = (0.0, 0.0, 0.0);
        let mut z = [0.0; 2];
        for _ in 0..n / 2 {
            s.fill(&mut z);
            for v in z {
                m1 += v;
                m2 += v * v;
                m4 += v.powi(4);
            }
        }
        let n = n as f64;
        assert!((m1 / n).abs() < 0.01);
        assert!((m2 / n - 1.0).abs() < 0.015);
        assert!((m4 / n - 3.0).abs() < 0.08);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|i| derive_seed(5, i)).collect();
        assert_eq!(seeds.len(), 10_000);
    }
}
