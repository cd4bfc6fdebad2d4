//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream, keyed by
//! the experiment seed and a purpose tag. ChaCha is counter based, so the
//! full generator state is `(seed, stream, word position)` and can be
//! persisted and restored exactly.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamId {
    Init,
    Shuffle,
    PruneRandom,
    /// Free-form stream for tests and analysis tools.
    Aux(u32),
}

impl StreamId {
    fn code(self) -> u64 {
        match self {
            StreamId::Init => 0,
            StreamId::Shuffle => 1,
            StreamId::PruneRandom => 2,
            StreamId::Aux(k) => (1u64 << 32) | k as u64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: StreamId,
    /// Word position, decimal encoded (128-bit).
    pub word_pos: String,
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: StreamId,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: StreamId) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream.code());
        RngStream {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }

    /// Uniform sample on `[0, 1)` with 24 bits of resolution.
    pub fn unit_f32(&mut self) -> f32 {
        self.inner.gen::<f32>()
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.stream,
            word_pos: self.inner.get_word_pos().to_string(),
        }
    }

    pub fn from_state(state: &RngState) -> crate::Result<Self> {
        let pos: u128 = state
            .word_pos
            .parse()
            .map_err(|e| crate::Error::Persistence(format!("bad rng word position: {e}")))?;
        let mut rng = RngStream::new(state.seed, state.stream);
        rng.inner.set_word_pos(pos);
        Ok(rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_reproduce() {
        let mut a = RngStream::new(7, StreamId::Shuffle);
        let mut b = RngStream::new(7, StreamId::Shuffle);
        let xs: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn streams_differ() {
        let mut a = RngStream::new(7, StreamId::Init);
        let mut b = RngStream::new(7, StreamId::Shuffle);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn known_answer_is_platform_independent() {
        // Expected words computed with a separate implementation of the
        // PCG32 seed expansion and the 8-round ChaCha block function.
        let mut r = RngStream::new(0, StreamId::Init);
        let got: Vec<u32> = (0..3).map(|_| r.next_u32()).collect();
        assert_eq!(got, vec![2811902828, 3045455719, 3134767159]);
        let mut r = RngStream::new(0, StreamId::Shuffle);
        let got: Vec<u32> = (0..3).map(|_| r.next_u32()).collect();
        assert_eq!(got, vec![3369373459, 3244981007, 1867878502]);
    }

    #[test]
    fn state_round_trip_resumes_sequence() {
        let mut r = RngStream::new(3, StreamId::PruneRandom);
        for _ in 0..37 {
            r.next_u32();
        }
        let saved = r.state();
        let tail: Vec<u32> = (0..16).map(|_| r.next_u32()).collect();
        let mut resumed = RngStream::from_state(&saved).unwrap();
        let tail2: Vec<u32> = (0..16).map(|_| resumed.next_u32()).collect();
        assert_eq!(tail, tail2);
    }

    #[test]
    fn unit_samples_in_range() {
        let mut r = RngStream::new(1, StreamId::Aux(9));
        for _ in 0..1000 {
            let u = r.unit_f32();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
