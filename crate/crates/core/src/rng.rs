//! Named random streams derived from a single root seed.
//!
//! Every consumer asks for `(stream, index...)` and gets an independent
//! ChaCha8 generator keyed by the root seed and a 64-bit stream id. Nothing
//! depends on how many draws another consumer made, so runs replay exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    Data,
    Init,
    Dropout,
    Hyper,
    Edge,
    Pbt,
    Search,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Init => 2,
            Stream::Dropout => 3,
            Stream::Hyper => 4,
            Stream::Edge => 5,
            Stream::Pbt => 6,
            Stream::Search => 7,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of words into one well-distributed 64-bit key.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
}

impl Seeds {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    /// Child seed set, e.g. one per agent or trial.
    pub fn child(&self, index: u64) -> Seeds {
        Seeds::new(mix(&[self.root, 0xC41D, index]))
    }

    pub fn rng(&self, stream: Stream, index: &[u64]) -> ChaCha8Rng {
        let mut key = vec![stream.tag()];
        key.extend_from_slice(index);
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(mix(&key));
        rng
    }

    /// Plain 64-bit seed for APIs that take one (e.g. `drop_edge`).
    pub fn derive(&self, stream: Stream, index: &[u64]) -> u64 {
        let mut key = vec![self.root, stream.tag()];
        key.extend_from_slice(index);
        mix(&key)
    }
}
