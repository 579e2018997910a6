//! Seeded random streams.
//!
//! Every stochastic step draws from its own ChaCha stream derived from a
//! master seed, so independent stages never share state and a run can be
//! replayed exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers for the stages of one optimization run.
pub mod stream {
    pub const CHANNELS: u64 = 1;
    pub const INIT_SELECTION: u64 = 2;
    pub const INIT_REFLECT: u64 = 3;
    /// Inner-loop randomization of outer iteration `t` uses `INNER_BASE + 2t`.
    pub const INNER_BASE: u64 = 1_000;
    /// CEM sampling of outer iteration `t` uses `CEM_BASE + 2t`.
    pub const CEM_BASE: u64 = 1_001;
}

/// Returns the RNG for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
