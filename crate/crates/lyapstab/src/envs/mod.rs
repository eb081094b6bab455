//! Deterministic continuous-time control environments discretized with
//! classical RK4. Each environment declares an equilibrium and a residual
//! coordinate map that places that equilibrium at the origin; landscape
//! models and policies both operate on residual coordinates.

pub mod acrobot;
pub mod car;
pub mod quadrotor;

pub use acrobot::AcrobotEnv;
pub use car::{CarEnv, RefPath};
pub use quadrotor::QuadrotorEnv;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numkit::rng_stream;

/// Static description of an environment.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub residual_dim: usize,
    pub action_dim: usize,
    pub dt: f64,
    pub horizon: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Rollouts terminate early once the residual norm exceeds this bound.
    pub divergence_bound: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(Error::Config(format!("{}: dt must be positive", self.name)));
        }
        if self.horizon == 0 {
            return Err(Error::Config(format!("{}: horizon must be >= 1", self.name)));
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(Error::Config(format!("{}: action bound dims", self.name)));
        }
        for (lo, hi) in self.action_low.iter().zip(&self.action_high) {
            if lo >= hi {
                return Err(Error::Config(format!("{}: action bounds lo >= hi", self.name)));
            }
        }
        Ok(())
    }

    pub fn clamp_action(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
            .collect()
    }
}

/// Raw simulator state plus the step index within the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub x: Vec<f64>,
    pub t: usize,
}

pub trait Env: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Time derivative of the raw state under clamped action `u`.
    fn deriv(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;

    /// Residual coordinates: zero exactly at the stabilization target.
    fn residual(&self, x: &[f64]) -> Vec<f64>;

    /// Raw state at the stabilization target.
    fn equilibrium(&self) -> Vec<f64>;

    /// Action that holds the equilibrium.
    fn trim_action(&self) -> Vec<f64>;

    /// Draws an initial raw state from the environment's start distribution.
    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;

    /// Evaluation-only task reward; never shown to the landscape learner.
    fn task_reward(&self, x: &[f64], u: &[f64]) -> f64;

    /// Re-wraps periodic coordinates after an integration step.
    fn wrap_state(&self, _x: &mut [f64]) {}
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Classical fourth-order Runge-Kutta step with zero-order-hold action.
/// The action is clamped to the environment bounds before evaluation and
/// periodic coordinates are re-wrapped afterwards.
pub fn rk4_step(env: &dyn Env, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
    if dt <= 0.0 {
        return Err(Error::Config("rk4 step requires dt > 0".into()));
    }
    let u = env.spec().clamp_action(u);
    let k1 = env.deriv(x, &u)?;
    let x2: Vec<f64> = x.iter().zip(&k1).map(|(xi, ki)| xi + 0.5 * dt * ki).collect();
    let k2 = env.deriv(&x2, &u)?;
    let x3: Vec<f64> = x.iter().zip(&k2).map(|(xi, ki)| xi + 0.5 * dt * ki).collect();
    let k3 = env.deriv(&x3, &u)?;
    let x4: Vec<f64> = x.iter().zip(&k3).map(|(xi, ki)| xi + dt * ki).collect();
    let k4 = env.deriv(&x4, &u)?;
    let mut next: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    env.wrap_state(&mut next);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite state after rk4 step in {}",
            env.spec().name
        )));
    }
    Ok(next)
}

/// Deterministic initial state for the given seed.
pub fn env_reset(env: &dyn Env, seed: u64) -> EnvState {
    let mut rng = rng_stream(seed, 0x5eed);
    EnvState {
        x: env.sample_initial(&mut rng),
        t: 0,
    }
}

/// Advances one environment step. Returns the next state and whether the
/// episode ended by divergence (`terminal`) or by reaching the horizon
/// (`truncated`).
pub struct StepOutcome {
    pub state: EnvState,
    pub terminal: bool,
    pub truncated: bool,
}

pub fn env_step(env: &dyn Env, state: &EnvState, u: &[f64]) -> Result<StepOutcome> {
    let spec = env.spec();
    let x = rk4_step(env, &state.x, u, spec.dt)?;
    let t = state.t + 1;
    let res = env.residual(&x);
    let rnorm = res.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(StepOutcome {
        state: EnvState { x, t },
        terminal: rnorm > spec.divergence_bound,
        truncated: t >= spec.horizon,
    })
}

/// Builds an environment by name: "car", "car-hw", "quadrotor", "acrobot".
pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    make_env_with_path(name, None)
}

/// Like `make_env`, with an optional waypoint CSV for the car's reference
/// path.
pub fn make_env_with_path(name: &str, path_csv: Option<&std::path::Path>) -> Result<Box<dyn Env>> {
    let refpath = match path_csv {
        Some(p) => Some(RefPath::from_csv(p)?),
        None => None,
    };
    match name {
        "car" => Ok(Box::new(CarEnv::sim(refpath))),
        "car-hw" => Ok(Box::new(CarEnv::hardware(refpath))),
        "quadrotor" => Ok(Box::new(QuadrotorEnv::new())),
        "acrobot" => Ok(Box::new(AcrobotEnv::new())),
        other => Err(Error::Config(format!("unknown environment '{other}'"))),
    }
}
