//! Deterministic randomness: PCG-XSH-RR 64/32 streams seeded through a
//! splitmix64 expander.
//!
//! Everything random in this crate (initialization, sensor draws, batch
//! shuffles, sketch matrices, synthetic noise) goes through [`Pcg32`], so a
//! run is reproduced exactly by its seeds on any platform. One master seed
//! is expanded into independent purpose-specific seeds with
//! [`derive_seed`]; the stream ids used by the trainer are documented on
//! [`crate::train::TrainConfig`].

use alloc::vec::Vec;

use crate::real::Real;

/// One step of the splitmix64 sequence (Steele, Lea & Flood's finalizer).
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Expand a master seed into the seed for an independent, numbered stream.
///
/// Distinct `stream` values give unrelated sequences even for adjacent
/// master seeds.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut s = master ^ stream.wrapping_mul(0xA24B_AED4_963E_E407);
    splitmix64(&mut s)
}

/// FNV-1a over a byte string; used to derive per-name parameter init
/// streams, so initialization is independent of registration order.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Minimal PCG-XSH-RR 64/32 generator (O'Neill 2014).
#[derive(Debug, Clone)]
pub struct Pcg32 {
    state: u64,
    inc: u64,
}

const PCG_MULT: u64 = 6_364_136_223_846_793_005;

impl Pcg32 {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = Pcg32 {
            state: 0,
            inc: (stream << 1) | 1,
        };
        rng.next_u32();
        rng.state = rng.state.wrapping_add(seed);
        rng.next_u32();
        rng
    }

    pub fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.state = old.wrapping_mul(PCG_MULT).wrapping_add(self.inc);
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    pub fn next_u64(&mut self) -> u64 {
        (self.next_u32() as u64) << 32 | self.next_u32() as u64
    }

    /// Uniform in `[0, 1)` with 53 random mantissa bits.
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform<T: Real>(&mut self, lo: T, hi: T) -> T {
        lo + (hi - lo) * T::from_f64(self.uniform_f64())
    }

    /// Standard normal via Box–Muller.
    pub fn normal_f64(&mut self) -> f64 {
        let mut u1 = self.uniform_f64();
        while u1 <= 0.0 {
            u1 = self.uniform_f64();
        }
        let u2 = self.uniform_f64();
        let r = Real::sqrt(-2.0 * Real::ln(u1));
        r * Real::cos(2.0 * core::f64::consts::PI * u2)
    }

    pub fn normal<T: Real>(&mut self) -> T {
        T::from_f64(self.normal_f64())
    }

    /// Unbiased integer in `[0, bound)` by rejection.
    pub fn below(&mut self, bound: u32) -> u32 {
        debug_assert!(bound > 0);
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let r = self.next_u32();
            if r >= threshold {
                return r % bound;
            }
        }
    }

    /// `k` distinct indices from `0..n` by partial Fisher–Yates; order is the
    /// draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u32) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    pub fn shuffle<S>(&mut self, xs: &mut [S]) {
        for i in (1..xs.len()).rev() {
            let j = self.below((i + 1) as u32) as usize;
            xs.swap(i, j);
        }
    }
}
