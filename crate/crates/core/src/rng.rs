//! Named random sub-streams derived from one master seed.
//!
//! Each consumer owns its own ChaCha stream, so changing how many draws one
//! component makes never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    AliceBases = 1,
    BobBases = 2,
    Quantum = 3,
    RoundSelection = 4,
    RoleSelection = 5,
    RandomBits = 6,
    Adversary = 7,
    EveGuess = 8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, which: Stream) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(which as u64);
        rng
    }
}

/// Seed of repetition `index` under `master`; repetition 0 uses `master` itself.
pub fn repetition_seed(master: u64, index: u64) -> u64 {
    master.wrapping_add(index)
}
