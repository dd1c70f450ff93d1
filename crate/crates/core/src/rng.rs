//! Deterministic pseudo-random numbers for reproducible inputs.
//!
//! The generator is xoshiro256** (Blackman & Vigna), seeded through the
//! splitmix64 finalizer, both with their published constants. Every random
//! quantity in this crate (synthetic tensors, workload sampling, eviction
//! masks) flows through this module so a reimplementation in another
//! language can reproduce inputs bit for bit from the same `u64` seed.
//!
//! Integer ranges use plain modulo reduction. The bias is irrelevant for the
//! range sizes used here and keeping the reduction trivial is worth more
//! than uniformity in the 2^-40 digit.

/// splitmix64 output finalizer.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and an index.
///
/// Used wherever one logical seed fans out into many samples (corpus
/// generation, per-case bench tensors) so samples stay reproducible
/// individually, not just as a whole sequence.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut s = seed ^ index.wrapping_mul(0xA24B_AED4_963E_E407);
    let a = splitmix64(&mut s);
    let b = splitmix64(&mut s);
    a ^ b.rotate_left(32)
}

/// xoshiro256** stream.
#[derive(Clone, Debug)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, n)`. Panics if `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        self.next_u64() % n
    }

    /// Uniform over an inclusive range.
    pub fn usize_in(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi, "inverted range {lo}..={hi}");
        lo + self.below((hi - lo + 1) as u64) as usize
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn f64_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-1, 1)`.
    pub fn symmetric(&mut self) -> f64 {
        2.0 * self.f64_unit() - 1.0
    }

    /// Bernoulli draw; always consumes exactly one `u64` from the stream.
    pub fn chance(&mut self, p: f64) -> bool {
        self.f64_unit() < p
    }

    /// Fills a buffer with uniform `[-1, 1)` values.
    pub fn fill_symmetric(&mut self, buf: &mut [f64]) {
        for x in buf.iter_mut() {
            *x = self.symmetric();
        }
    }
}
