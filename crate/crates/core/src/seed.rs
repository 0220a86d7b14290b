//! Deterministic derivation of per-consumer seeds from a single root seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Consumers of randomness. Each gets its own ChaCha stream of the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Data = 1,
    Init = 2,
    Shuffle = 3,
    GradCheck = 4,
}

pub fn derive_seed(root: u64, stream: SeedStream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream as u64);
    rng.next_u64()
}

pub fn rng_for(root: u64, stream: SeedStream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ_and_repeat() {
        let a = derive_seed(7, SeedStream::Data);
        let b = derive_seed(7, SeedStream::Init);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(7, SeedStream::Data));
        assert_ne!(a, derive_seed(8, SeedStream::Data));
    }
}
