//! Counter-based seed derivation and hashed uniforms.
//!
//! Every stream is keyed by `(master, replication, label)`. The derivation is
//!
//! ```text
//! key  = mix64(master ^ mix64(fnv1a(label)))
//! seed = mix64(key + replication * GOLDEN)
//! ```
//!
//! where `mix64` is the splitmix64 finaliser. For fixed `(master, label)` the map
//! `replication -> seed` is a bijection on `u64`, so streams never collide.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Increment of the splitmix64 sequence (odd, so multiplication by it is a bijection).
pub const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// The generator used for all sequential sampling.
pub type SimRng = ChaCha8Rng;

#[inline]
pub const fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a(label: &str) -> u64 {
    label
        .bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Seed of replication `rep` on the stream named `label`.
pub fn derive_seed(master: u64, rep: u64, label: &str) -> u64 {
    let key = mix64(master ^ mix64(fnv1a(label)));
    mix64(key.wrapping_add(rep.wrapping_mul(GOLDEN)))
}

/// A 64-bit seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    pub fn derive(self, rep: u64, label: &str) -> Seed {
        Seed(derive_seed(self.0, rep, label))
    }

    pub fn child(self, label: &str) -> Seed {
        self.derive(0, label)
    }

    pub fn rng(self) -> SimRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

/// Map 64 random bits to a uniform in `[0, 1)` with 53-bit resolution.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Hashed uniform addressed by `(seed, a, b, slot)`.
///
/// Used where the same object must receive the same uniform regardless of the
/// order (or subset) in which objects are visited, e.g. for coupled sampling
/// across kernel parameters.
#[inline]
pub fn hashed_uniform(seed: u64, a: u64, b: u64, slot: u64) -> f64 {
    unit_f64(hashed_bits(seed, a, b, slot))
}

#[inline]
pub fn hashed_bits(seed: u64, a: u64, b: u64, slot: u64) -> u64 {
    let h = mix64(seed ^ a.wrapping_mul(GOLDEN));
    let h = mix64(h ^ b.wrapping_mul(0xd1b5_4a32_d192_ed03));
    mix64(h.wrapping_add(slot.wrapping_mul(GOLDEN)))
}

/// A small splitmix64 stream, handy for short keyed sequences.
#[derive(Debug, Clone)]
pub struct SplitMix(pub u64);

impl SplitMix {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(GOLDEN);
        mix64(self.0)
    }
}

/// 64 independent Bernoulli(p) bits, by comparing a lazily revealed uniform
/// with the binary expansion of `p` bit by bit.
#[inline]
pub fn bernoulli_word(stream: &mut SplitMix, p: f64) -> u64 {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return u64::MAX;
    }
    let mut frac = p;
    let mut out = 0u64;
    let mut undecided = u64::MAX;
    for _ in 0..53 {
        frac *= 2.0;
        let r = stream.next_u64();
        if frac >= 1.0 {
            frac -= 1.0;
            out |= undecided & !r;
            undecided &= r;
        } else {
            undecided &= !r;
        }
        if undecided == 0 || frac == 0.0 {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn labels_separate_streams() {
        assert_ne!(derive_seed(7, 0, "env"), derive_seed(7, 0, "perc"));
        assert_eq!(derive_seed(7, 3, "env"), derive_seed(7, 3, "env"));
    }

    #[test]
    fn million_seeds_do_not_collide() {
        let mut seen = HashSet::with_capacity(1_000_000);
        for rep in 0..1_000_000u64 {
            assert!(seen.insert(derive_seed(42, rep, "rep")));
        }
    }

    #[test]
    fn derivation_is_pinned() {
        // Frozen so that dumps stay reproducible across releases.
        assert_eq!(mix64(0), 0);
        assert_eq!(fnv1a(""), FNV_OFFSET);
        assert_eq!(fnv1a("a"), 0xaf63_dc4c_8601_ec8c);
        let s = derive_seed(1, 2, "x");
        assert_eq!(s, derive_seed(1, 2, "x"));
    }

    #[test]
    fn bernoulli_word_frequency() {
        let mut st = SplitMix(11);
        let p = 0.3;
        let mut ones = 0u64;
        let words = 20_000;
        for _ in 0..words {
            ones += bernoulli_word(&mut st, p).count_ones() as u64;
        }
        let n = (words * 64) as f64;
        let sd = (p * (1.0 - p) / n).sqrt();
        assert!((ones as f64 / n - p).abs() < 4.0 * sd);
    }
}
