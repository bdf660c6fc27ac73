//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a stream addressed by
//! `(seed, purpose, k, i)`. The stream for a particle does not depend on how
//! many other particles exist or which thread handles it, so serial and
//! parallel runs produce identical numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Part of the stream key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Initial = 1,
    Forward = 2,
    Backward = 3,
    Centers = 4,
    Sgd = 5,
    Resample = 6,
    Truth = 7,
    Observation = 8,
    Bootstrap = 9,
    Replication = 10,
    Diagnostic = 11,
    Test = 12,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derived family, e.g. one per replication of a rate study.
    pub fn child(&self, index: u64) -> Streams {
        let mut s = self.seed ^ 0xA076_1D64_78BD_642F;
        let a = splitmix64(&mut s);
        let mut t = a ^ index.wrapping_mul(0xE703_7ED1_A0B4_28DB);
        Streams::new(splitmix64(&mut t))
    }

    pub fn stream(&self, purpose: Purpose, k: u64, i: u64) -> StreamRng {
        let mut state = self.seed;
        let mut key = [0u8; 32];
        let words = [
            splitmix64(&mut state),
            splitmix64(&mut state) ^ (purpose as u64).wrapping_mul(0x9FB2_1C65_1E98_DF25),
            splitmix64(&mut state) ^ k,
            splitmix64(&mut state),
        ];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(i);
        rng
    }
}

/// Fills `out` with independent N(0, var) draws.
pub fn fill_normal<R: Rng + ?Sized>(rng: &mut R, var: f64, out: &mut [f64]) {
    let sd = var.sqrt();
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = sd * z;
    }
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, var: f64, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    fill_normal(rng, var, &mut v);
    v
}
