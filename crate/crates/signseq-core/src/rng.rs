//! Seeded pseudo-random generation, xorshift64* family.
//!
//! Every stochastic component in the crate (parameter init, batch sampling,
//! corpus synthesis, bootstrap resampling) draws from this generator so that
//! results reproduce byte-for-byte from a seed across builds and platforms.

/// 64-bit xorshift* generator.
#[derive(Debug, Clone)]
pub struct XorShiftStar {
    state: u64,
}

const MIX: u64 = 0x9E37_79B9_7F4A_7C15;
const MUL: u64 = 0x2545_F491_4F6C_DD1D;

impl XorShiftStar {
    pub fn new(seed: u64) -> Self {
        // state must never be zero
        let mut rng = XorShiftStar { state: seed.wrapping_mul(MIX) | 1 };
        rng.next_u64();
        rng.next_u64();
        rng
    }

    /// Independent stream keyed by (seed, stream index).
    ///
    /// Used wherever work items need schedule-independent randomness, e.g.
    /// one stream per bootstrap resample or per synthesized sample.
    pub fn derive(seed: u64, stream: u64) -> Self {
        XorShiftStar::new(seed ^ stream.wrapping_add(1).wrapping_mul(MIX))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(MUL)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform index in [0, n). Lemire multiply-shift; bias is < 2^-53 for
    /// any n that fits a corpus.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn next_range(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.next_index(hi - lo + 1)
    }

    pub fn next_bool(&mut self, p_true: f64) -> bool {
        self.next_f64() < p_true
    }

    /// Standard normal via Box-Muller.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.next_f64();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
