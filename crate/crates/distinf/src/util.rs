//! Seed derivation and compensated summation helpers shared across modules.
//!
//! Every random stream in this crate is keyed by a 64-bit seed derived with
//! [`mix64`] from a master seed plus structural coordinates (role, index,
//! purpose tag, ...). Derived streams are stable across platforms and worker
//! counts, which is what makes sweeps byte-reproducible.

/// SplitMix64 finalizer step.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds an ordered list of 64-bit components into one seed.
///
/// The fold is order-sensitive, so `mix64(&[a, b]) != mix64(&[b, a])` in
/// general; callers encode structure (role tags, indices) positionally.
pub fn mix64(parts: &[u64]) -> u64 {
    let mut h = 0x6a09_e667_f3bc_c909u64; // sqrt(2) fraction, arbitrary fixed start
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

/// Kahan-Babuska compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}
