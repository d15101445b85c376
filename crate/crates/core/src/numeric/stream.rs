//! Seedable, path-addressed random streams.
//!
//! A [`RandomStream`] names a stream by a master seed plus a path of
//! `(label, index)` pairs, e.g. `[("source", 3), ("replicate", 17), ("look", 50)]`.
//! The path is hashed with SHA-256 into the 256-bit key of a ChaCha8
//! generator, so any two distinct paths get unrelated keystreams and a given
//! path always replays the same draws, independent of thread scheduling.
//!
//! Hash input layout (all integers little-endian):
//! `"predstop/stream/v1" || master_seed:u64 || for each step: len(label):u32 || label || index:u64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Generator handed out by [`RandomStream::rng`].
pub type StreamRng = ChaCha8Rng;

const DOMAIN_TAG: &[u8] = b"predstop/stream/v1";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    master_seed: u64,
    path: Vec<(String, u64)>,
}

impl RandomStream {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            path: Vec::new(),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    /// Derive a sub-stream one level deeper.
    pub fn child(&self, label: &str, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push((label.to_owned(), index));
        Self {
            master_seed: self.master_seed,
            path,
        }
    }

    pub fn key(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(DOMAIN_TAG);
        hasher.update(self.master_seed.to_le_bytes());
        for (label, index) in &self.path {
            hasher.update((label.len() as u32).to_le_bytes());
            hasher.update(label.as_bytes());
            hasher.update(index.to_le_bytes());
        }
        hasher.finalize().into()
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::from_seed(self.key())
    }
}

/// Stable 64-bit fingerprint of any serializable value; used to key streams
/// by configuration rather than by position in a list.
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> u64 {
    let bytes = serde_json::to_vec(value).expect("fingerprinted values serialize");
    let digest = Sha256::digest(&bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
