//! Deterministic scalar draws from a seeded ChaCha20 stream.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::normal;

/// Maps 64 random bits to the open interval (0, 1) using the top 52 bits.
pub fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Uniform, normal and bounded-uniform draws in a fixed order.
pub struct Stream {
    inner: ChaCha20Rng,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream {
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self) -> f64 {
        open_unit(self.inner.next_u64())
    }

    /// Uniform on `(-half_width, half_width)`.
    pub fn symmetric(&mut self, half_width: f64) -> f64 {
        half_width * (2.0 * self.uniform() - 1.0)
    }

    /// Standard normal by inversion.
    pub fn normal(&mut self) -> f64 {
        normal::quantile(self.uniform())
    }
}
