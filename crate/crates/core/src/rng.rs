//! Named random streams split from one global seed.
//!
//! Each stream is a ChaCha8 generator keyed by SHA-256 of the global seed, a
//! stream label and a list of integer coordinates. Any two distinct
//! `(label, coordinates)` pairs draw from independent keys, so the order in
//! which parallel jobs consume randomness cannot change their results.
//!
//! Labels in use:
//!
//! | label         | coordinates            | consumer                          |
//! |---------------|------------------------|-----------------------------------|
//! | `init`        | `[layer]`              | weight initialisation             |
//! | `data`        | `[split]`              | synthetic dataset generation      |
//! | `shuffle`     | `[session, epoch]`     | minibatch order                   |
//! | `train-noise` | `[session, epoch]`     | noise injected during training    |
//! | `program`     | `[rep, layer]`         | programming noise, drift exponents|
//! | `eval-rep`    | `[rep]`                | read noise during evaluation      |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, label: &str, coords: &[u64]) -> StreamRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for c in coords {
        h.update(c.to_le_bytes());
    }
    let key: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(key)
}

/// Derive a child seed, e.g. one per sweep job.
pub fn derive_seed(seed: u64, label: &str, coords: &[u64]) -> u64 {
    use rand::RngCore;
    stream(seed, label, coords).next_u64()
}
