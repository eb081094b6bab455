//! Minimal dense numeric kernel: matrices, tanh MLPs with exact
//! reverse-mode gradients, and Adam. All arithmetic is f64.

pub mod adam;
pub mod mat;
pub mod mlp;

pub use adam::{AdamState, AdamVec, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use mat::Mat;
pub use mlp::{ForwardTrace, Mlp, MlpGrads, CHECKPOINT_FORMAT};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG stream. Every stochastic component draws from its own
/// (seed, stream) pair so adding a consumer does not shift the others.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
