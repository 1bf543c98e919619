//! Counter-addressed standard normal draws keyed by `(seed, replicate, i)`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const TWO_POW_MINUS_53: f64 = 1.0 / 9_007_199_254_740_992.0;

/// Standard normals from a ChaCha8 stream: the seed selects the key, the
/// replicate selects the stream and draw `i` reads the two 64-bit words at
/// word position `4i`. Any draw can be recomputed in isolation.
#[derive(Clone, Debug)]
pub struct NormalStream {
    rng: ChaCha8Rng,
}

fn box_muller(x: u64, y: u64) -> f64 {
    // u1 in (0, 1], u2 in [0, 1)
    let u1 = ((x >> 11) + 1) as f64 * TWO_POW_MINUS_53;
    let u2 = (y >> 11) as f64 * TWO_POW_MINUS_53;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl NormalStream {
    pub fn new(seed: u64, replicate: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replicate);
        Self { rng }
    }

    /// Positions the stream so that the next draw is draw `i`.
    pub fn seek(&mut self, i: u64) {
        self.rng.set_word_pos(4 * i as u128);
    }

    pub fn next_normal(&mut self) -> f64 {
        let x = self.rng.next_u64();
        let y = self.rng.next_u64();
        box_muller(x, y)
    }

    /// Draw `i` of stream `(seed, replicate)`.
    pub fn at(seed: u64, replicate: u64, i: u64) -> f64 {
        let mut s = Self::new(seed, replicate);
        s.seek(i);
        s.next_normal()
    }

    pub fn take(seed: u64, replicate: u64, n: usize) -> Vec<f64> {
        let mut s = Self::new(seed, replicate);
        (0..n).map(|_| s.next_normal()).collect()
    }
}
