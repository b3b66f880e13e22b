//! Seeded random streams.
//!
//! Every stochastic choice in the crate draws from a [`Rng`], which wraps
//! ChaCha8 (`rand_chacha`). A run seed is expanded to a 256-bit key with
//! `seed_from_u64`, and each purpose gets its own ChaCha stream id, so draws
//! for negatives never perturb draws for batching. The full generator state
//! is `(seed, stream, word position)`, which is what checkpoints persist.

use rand::seq::{index, SliceRandom};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Independent purposes a run draws randomness for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stream {
    Init,
    Negatives,
    Splits,
    Synthetic,
    Batches,
}

impl Stream {
    pub const ALL: [Stream; 5] = [
        Stream::Init,
        Stream::Negatives,
        Stream::Splits,
        Stream::Synthetic,
        Stream::Batches,
    ];

    pub fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Negatives => 2,
            Stream::Splits => 3,
            Stream::Synthetic => 4,
            Stream::Batches => 5,
        }
    }

    pub fn from_id(id: u64) -> Option<Stream> {
        Stream::ALL.into_iter().find(|s| s.id() == id)
    }
}

/// Snapshot of a generator, enough to resume it bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: Stream,
    pub word_pos: u128,
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: Stream,
    inner: ChaCha8Rng,
}

impl PartialEq for Rng {
    fn eq(&self, other: &Self) -> bool {
        self.state() == other.state()
    }
}

impl Rng {
    pub fn new(seed: u64, stream: Stream) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream.id());
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.stream,
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn restore(state: RngState) -> Self {
        let mut rng = Self::new(state.seed, state.stream);
        rng.inner.set_word_pos(state.word_pos);
        rng
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[lo, hi)`.
    pub fn below(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..hi)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        xs.shuffle(&mut self.inner);
    }

    /// `amount` distinct indices from `0..n`.
    pub fn sample_indices(&mut self, n: usize, amount: usize) -> Vec<usize> {
        index::sample(&mut self.inner, n, amount).into_vec()
    }
}
