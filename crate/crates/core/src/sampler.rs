//! Uniform `s`-subsets of `{0, .., n-1}` from a reproducible stream.
//!
//! The generator is xoshiro256** seeded by SplitMix64 from a single `u64`:
//! SplitMix64 adds `0x9E3779B97F4A7C15` to its state and mixes with the
//! multipliers `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB` (shifts 30, 27,
//! 31); its first four outputs form the xoshiro state. Bounded integers in
//! `[0, k)` use Lemire's multiply-and-reject method on one 64-bit output
//! (reject while the low word is below `2^64 mod k`). A draw runs a partial
//! Fisher-Yates shuffle on the identity array `[0, n)` for `s` positions,
//! swapping position `i` with `i + below(n - i)`, then sorts the first `s`
//! entries. Indices are zero-based.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::{Error, Result};

/// Largest `C(n, s)` that [`enumerate_k_subsets`] will materialize by default.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

#[derive(Clone, Debug)]
pub struct SubsetRng {
    inner: Xoshiro256StarStar,
}

impl SubsetRng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Self { inner: Xoshiro256StarStar::seed_from_u64(seed) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `[0, bound)`. `bound` must be nonzero.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        let mut m = u128::from(self.next_u64()) * u128::from(bound);
        if (m as u64) < bound {
            let threshold = bound.wrapping_neg() % bound;
            while (m as u64) < threshold {
                m = u128::from(self.next_u64()) * u128::from(bound);
            }
        }
        (m >> 64) as u64
    }
}

/// One draw of the index set for iteration `iteration`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsetSample {
    /// Strictly increasing, zero-based.
    pub indices: Vec<usize>,
    pub iteration: u64,
}

fn check_batch(n: usize, s: usize) -> Result<()> {
    if s == 0 || s > n {
        Err(Error::InvalidBatchSize { s, n })
    } else {
        Ok(())
    }
}

/// Draws a uniformly random `s`-subset of `[0, n)`, sorted ascending.
pub fn sample_k_subset(rng: &mut SubsetRng, n: usize, s: usize) -> Result<Vec<usize>> {
    check_batch(n, s)?;
    let mut scratch: Vec<usize> = (0..n).collect();
    Ok(draw_into(rng, &mut scratch, s))
}

fn draw_into(rng: &mut SubsetRng, scratch: &mut [usize], s: usize) -> Vec<usize> {
    let n = scratch.len();
    for (i, slot) in scratch.iter_mut().enumerate() {
        *slot = i;
    }
    for i in 0..s {
        let j = i + rng.below((n - i) as u64) as usize;
        scratch.swap(i, j);
    }
    let mut picked = scratch[..s].to_vec();
    picked.sort_unstable();
    picked
}

/// Owns the generator of one run and numbers its draws.
#[derive(Clone, Debug)]
pub struct Sampler {
    rng: SubsetRng,
    n: usize,
    s: usize,
    scratch: Vec<usize>,
    iteration: u64,
}

impl Sampler {
    pub fn new(seed: u64, n: usize, s: usize) -> Result<Self> {
        check_batch(n, s)?;
        Ok(Self { rng: SubsetRng::seed_from_u64(seed), n, s, scratch: vec![0; n], iteration: 0 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn batch_size(&self) -> usize {
        self.s
    }

    pub fn next_sample(&mut self) -> SubsetSample {
        // The full batch needs no randomness and leaves the stream untouched.
        let indices =
            if self.s == self.n { (0..self.n).collect() } else { draw_into(&mut self.rng, &mut self.scratch, self.s) };
        let sample = SubsetSample { indices, iteration: self.iteration };
        self.iteration += 1;
        sample
    }
}

/// `C(n, s)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, s: usize) -> u128 {
    if s > n {
        return 0;
    }
    let k = s.min(n - s) as u128;
    let n = n as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) is exact at every step.
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// All `s`-subsets of `[0, n)` in lexicographic order.
pub fn enumerate_k_subsets(n: usize, s: usize) -> Result<Vec<Vec<usize>>> {
    enumerate_k_subsets_capped(n, s, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_k_subsets_capped(n: usize, s: usize, cap: usize) -> Result<Vec<Vec<usize>>> {
    check_batch(n, s)?;
    let count = binomial(n, s);
    if count > cap as u128 {
        return Err(Error::EnumerationTooLarge { n, s, count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut cur: Vec<usize> = (0..s).collect();
    loop {
        out.push(cur.clone());
        // Rightmost position that can still advance.
        let Some(pos) = (0..s).rev().find(|&i| cur[i] < n - s + i) else {
            break;
        };
        cur[pos] += 1;
        for j in pos + 1..s {
            cur[j] = cur[j - 1] + 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    /// Reference SplitMix64 + xoshiro256** written from the published constants.
    struct Reference {
        s: [u64; 4],
    }

    impl Reference {
        fn new(seed: u64) -> Self {
            let mut sm = seed;
            let mut next = || {
                sm = sm.wrapping_add(0x9E37_79B9_7F4A_7C15);
                let mut z = sm;
                z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
                z ^ (z >> 31)
            };
            Self { s: [next(), next(), next(), next()] }
        }

        fn next(&mut self) -> u64 {
            let s = &mut self.s;
            let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
            let t = s[1] << 17;
            s[2] ^= s[0];
            s[3] ^= s[1];
            s[1] ^= s[2];
            s[0] ^= s[3];
            s[2] ^= t;
            s[3] = s[3].rotate_left(45);
            result
        }
    }

    #[test]
    fn stream_matches_documented_algorithm() {
        for seed in [0u64, 1, 42, u64::MAX] {
            let mut ours = SubsetRng::seed_from_u64(seed);
            let mut reference = Reference::new(seed);
            for _ in 0..64 {
                assert_eq!(ours.next_u64(), reference.next());
            }
        }
    }

    #[test]
    fn full_batch_is_everything() {
        let mut rng = SubsetRng::seed_from_u64(7);
        for _ in 0..10 {
            assert_eq!(sample_k_subset(&mut rng, 5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn invalid_batch_sizes() {
        let mut rng = SubsetRng::seed_from_u64(7);
        assert!(matches!(sample_k_subset(&mut rng, 3, 0), Err(Error::InvalidBatchSize { .. })));
        assert!(matches!(sample_k_subset(&mut rng, 3, 4), Err(Error::InvalidBatchSize { .. })));
        assert!(Sampler::new(1, 50, 60).is_err());
    }

    #[test]
    fn pairs_of_three_are_uniform() {
        let mut rng = SubsetRng::seed_from_u64(2024);
        let draws = 300_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..draws {
            *counts.entry(sample_k_subset(&mut rng, 3, 2).unwrap()).or_default() += 1;
        }
        assert_eq!(counts.len(), 3);
        let mut chi2 = 0.0;
        for c in counts.values() {
            let freq = *c as f64 / draws as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.005, "{freq}");
            let expected = draws as f64 / 3.0;
            chi2 += (*c as f64 - expected).powi(2) / expected;
        }
        // 99.9% quantile of chi-square with 2 degrees of freedom.
        assert!(chi2 < 13.82, "chi2 = {chi2}");
    }

    #[test]
    fn singletons_of_five_are_uniform() {
        let mut rng = SubsetRng::seed_from_u64(99);
        let draws = 500_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            counts[sample_k_subset(&mut rng, 5, 1).unwrap()[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.2).abs() < 0.003);
        }
    }

    #[test]
    fn inclusion_probability_is_s_over_n() {
        let (n, s, draws) = (10usize, 3usize, 100_000usize);
        let mut sampler = Sampler::new(5, n, s).unwrap();
        let mut counts = vec![0usize; n];
        for _ in 0..draws {
            for i in sampler.next_sample().indices {
                counts[i] += 1;
            }
        }
        let p = s as f64 / n as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma + 1.0);
        }
    }

    #[test]
    fn sampler_is_deterministic_and_numbers_draws() {
        let mut a = Sampler::new(11, 20, 4).unwrap();
        let mut b = Sampler::new(11, 20, 4).unwrap();
        for t in 0..100 {
            let x = a.next_sample();
            assert_eq!(x, b.next_sample());
            assert_eq!(x.iteration, t);
            assert_eq!(x.indices.len(), 4);
            assert!(x.indices.windows(2).all(|w| w[0] < w[1]));
            assert!(x.indices.iter().all(|&i| i < 20));
        }
    }

    #[test]
    fn enumeration_small_cases() {
        assert_eq!(enumerate_k_subsets(3, 2).unwrap(), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(enumerate_k_subsets(4, 1).unwrap(), vec![vec![0], vec![1], vec![2], vec![3]]);
        let all = enumerate_k_subsets(6, 3).unwrap();
        assert_eq!(all.len(), 20);
        assert_eq!(all.iter().collect::<HashSet<_>>().len(), 20);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn enumeration_is_capped() {
        assert!(matches!(enumerate_k_subsets(40, 20), Err(Error::EnumerationTooLarge { .. })));
        assert_eq!(binomial(40, 20), 137_846_528_820);
        assert_eq!(binomial(6, 3), 20);
    }
}
