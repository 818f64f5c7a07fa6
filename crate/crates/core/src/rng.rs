//! Seeded random streams.
//!
//! Every random quantity in a run is drawn from a [`Stream`] derived from a
//! run seed and a [`StreamId`], so that each draw can be traced back to
//! exactly one named seed. The generator is ChaCha20 (counter based, with
//! published reference vectors); normals come from the Box–Muller transform
//! so the whole pipeline only depends on IEEE arithmetic plus `ln`, `sqrt`,
//! `cos` and `sin`.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Named sub-streams of a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamId {
    InitialNoise = 1,
    Timesteps = 2,
    FreshNoise = 3,
    Cameras = 4,
    WorldMap = 5,
    BlendNoise = 6,
    Probe = 7,
    Scene = 8,
}

#[derive(Debug, Clone)]
pub struct Stream {
    inner: ChaCha20Rng,
    spare: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        Self::with_stream(seed, id as u64)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, spare: None }
    }

    /// Child stream for the `index`-th member of an ensemble (view, seed, ...).
    pub fn child(seed: u64, id: StreamId, index: u64) -> Self {
        Self::with_stream(seed, ((id as u64) << 40) ^ index.wrapping_add(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box–Muller; the second value of each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - u lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * angle.sin());
        r * angle.cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}
