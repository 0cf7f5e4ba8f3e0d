use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Matrix;

/// Counter-based random stream identified by `(seed, stream_id)`.
///
/// Streams with the same seed and different ids are independent, so work can
/// be split across environments or threads without shared generator state.
/// The position within a stream is the ChaCha word counter.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha12Rng,
}

/// Serializable position of an [`RngStream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: u64,
    pub stream_id: u64,
    pub counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u64 {
        self.rng.get_word_pos() as u64
    }

    pub fn snapshot(&self) -> RngSnapshot {
        RngSnapshot {
            seed: self.seed,
            stream_id: self.stream_id,
            counter: self.counter(),
        }
    }

    pub fn restore(snap: &RngSnapshot) -> Self {
        let mut s = Self::new(snap.seed, snap.stream_id);
        s.rng.set_word_pos(snap.counter as u128);
        s
    }

    /// A new independent stream sharing this stream's seed.
    pub fn sibling(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}

/// A `rows x cols` matrix of i.i.d. standard normal draws.
pub fn gaussian_draw(stream: &mut RngStream, rows: usize, cols: usize) -> Matrix {
    let mut data = vec![0.0; rows * cols];
    stream.fill_normal(&mut data);
    Matrix::from_raw(rows, cols, data)
}
