//! Deterministic random streams.
//!
//! Every stochastic decision draws from a stream keyed by
//! `(master seed, generation, role, index)`. The key is written verbatim into
//! a ChaCha8 seed, so distinct keys give independent streams and no RNG state
//! ever needs to be checkpointed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Part of the derivation key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Role {
    Init = 1,
    Selection = 2,
    Crossover = 3,
    MutationGate = 4,
    Mutation = 5,
    Noise = 6,
    Test = 0xFFFF,
}

#[derive(Clone, Debug)]
pub struct RngStream(ChaCha8Rng);

impl RngStream {
    pub fn derive(master_seed: u64, generation: u64, role: Role, index: u64) -> Self {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&generation.to_le_bytes());
        seed[16..24].copy_from_slice(&(role as u64).to_le_bytes());
        seed[24..].copy_from_slice(&index.to_le_bytes());
        RngStream(ChaCha8Rng::from_seed(seed))
    }

    /// Convenience stream for tests and benches.
    pub fn from_seed(seed: u64) -> Self {
        Self::derive(seed, 0, Role::Test, 0)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}
