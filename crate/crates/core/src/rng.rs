//! Seed-derived random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream derived from the
//! run seed, so sequential and threaded execution draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const INIT_STREAM: u64 = 1 << 32;
const PLAN_STREAM: u64 = (1 << 32) + 1;
const HOST_STREAM_BASE: u64 = 1 << 40;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream used for weight initialization.
pub fn init_rng(seed: u64) -> Rng {
    stream(seed, INIT_STREAM)
}

/// Stream used when assigning private nodes to hosts.
pub fn plan_rng(seed: u64) -> Rng {
    stream(seed, PLAN_STREAM)
}

/// Sampling stream owned by one host.
pub fn host_rng(seed: u64, host: usize) -> Rng {
    stream(seed, HOST_STREAM_BASE + host as u64)
}
