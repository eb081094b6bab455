//! Learning stabilization control from state-only expert observations.
//!
//! The pipeline has two stages. First a scalar landscape model is trained on
//! expert state transitions so that it looks like a Lyapunov function along
//! the data: zero at the equilibrium, positive elsewhere, and decreasing at
//! a fixed rate. Second that landscape is turned into a dense reward and a
//! policy is optimized against it with PPO. A GAN-style discriminator
//! baseline, quadratic and sign-only landscape baselines, simulated
//! environments, scripted experts and an experiment harness round out the
//! suite.

pub mod envs;
pub mod error;
pub mod expert;
pub mod gaifo;
pub mod harness;
pub mod lyapunov;
pub mod numkit;
pub mod policyopt;
pub mod reward;

pub use error::{Error, Result};
