use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Disjoint RNG stream families of the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Ber = 1,
    Sparsity = 2,
    Convergence = 3,
    /// Self-checks and oracle comparisons.
    Check = 4,
}

impl Stream {
    /// Stream id of trial `trial` at grid point `point`.
    pub fn id(self, point: usize, trial: usize) -> u64 {
        debug_assert!(point < 1 << 24 && trial < 1 << 32);
        ((self as u64) << 56) | ((point as u64) << 32) | trial as u64
    }
}

/// Independent generator for one trial: the master seed selects the key and
/// `stream` the ChaCha stream, so trials never share draws.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
