//! Deterministic random source.
//!
//! The generator is xoshiro256** seeded through splitmix64. The algorithm is
//! part of the reproducibility contract: the same 64-bit seed produces the
//! same stream on every platform, and every draw advances the state by a
//! fixed amount. Do not swap the algorithm without bumping checkpoint and
//! golden-test expectations.

/// Seeded, portable PRNG. Single-owner: never share one instance across
/// concurrent tasks.
#[derive(Debug, Clone)]
pub struct RandomSource {
    state: [u64; 4],
    seed: u64,
}

const ALGORITHM: &str = "xoshiro256**";

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        let mut s = seed;
        let state = [
            splitmix64(&mut s),
            splitmix64(&mut s),
            splitmix64(&mut s),
            splitmix64(&mut s),
        ];
        RandomSource { state, seed }
    }

    pub fn algorithm(&self) -> &'static str {
        ALGORITHM
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
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

    /// Uniform integer in `[0, n)`, rejection-sampled so every value is
    /// exactly equally likely. `n` must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let limit = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < limit {
                return v % n;
            }
        }
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit_f64()
    }

    /// Bernoulli draw: true with probability `p`.
    pub fn coin(&mut self, p: f64) -> bool {
        self.unit_f64() < p
    }
}

/// Uniform Fisher-Yates permutation of `0..n`, drawn from `rng`.
pub fn seeded_permutation(n: usize, rng: &mut RandomSource) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = RandomSource::new(42);
        let mut b = RandomSource::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = RandomSource::new(1);
        let mut b = RandomSource::new(2);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn permutation_trivial_sizes() {
        let mut rng = RandomSource::new(7);
        assert_eq!(seeded_permutation(0, &mut rng), Vec::<usize>::new());
        assert_eq!(seeded_permutation(1, &mut rng), vec![0]);
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut rng = RandomSource::new(3);
        for n in [2usize, 5, 17, 100] {
            let mut p = seeded_permutation(n, &mut rng);
            p.sort_unstable();
            assert_eq!(p, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn permutation_golden_seed_7() {
        // Pinned from the first run; guards the generator and the
        // shuffle order against accidental changes.
        let mut rng = RandomSource::new(7);
        assert_eq!(seeded_permutation(5, &mut rng), vec![1, 3, 0, 2, 4]);
    }

    #[test]
    fn permutation_uniformity_n3() {
        let mut rng = RandomSource::new(11);
        let mut counts = [0usize; 6];
        let index_of = |p: &[usize]| -> usize {
            match (p[0], p[1], p[2]) {
                (0, 1, 2) => 0,
                (0, 2, 1) => 1,
                (1, 0, 2) => 2,
                (1, 2, 0) => 3,
                (2, 0, 1) => 4,
                (2, 1, 0) => 5,
                _ => unreachable!(),
            }
        };
        let draws = 100_000;
        for _ in 0..draws {
            counts[index_of(&seeded_permutation(3, &mut rng))] += 1;
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - 1.0 / 6.0).abs() < 0.01,
                "permutation frequency {freq} out of tolerance"
            );
        }
    }

    #[test]
    fn unit_f64_in_range() {
        let mut rng = RandomSource::new(5);
        for _ in 0..10_000 {
            let u = rng.unit_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
