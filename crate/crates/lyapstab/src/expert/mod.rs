//! Scripted stabilizing controllers and the generator for state-only
//! demonstration datasets.
//!
//! Each environment gets a classical controller: Stanley steering plus
//! proportional speed control for the car, LQR about hover for the
//! quadrotor, and energy-shaping swing-up with an LQR catch for the
//! acrobot. The collector runs these closed loop, records residual states
//! only, and truncates every rollout at the first step that enters the
//! convergence tolerance so kept trajectories end at (numerically) the
//! equilibrium.

pub mod dataset;
pub mod lqr;

use std::f64::consts::PI;

use crate::envs::{env_reset, rk4_step, AcrobotEnv, Env};
use crate::error::{Error, Result};
use crate::numkit::Mat;

pub use dataset::{load_dataset, save_dataset, Trajectory, TransitionBatch};

/// Residual-norm threshold below which a rollout counts as converged.
pub const CONVERGENCE_TOL: f64 = 0.05;

/// Swing-up and catch parameters for the acrobot expert.
pub struct AcrobotExpert {
    /// LQR gain about upright.
    pub gain: Mat,
    /// Riccati cost matrix; r'Pr measures distance to upright in the
    /// controller's own metric.
    pub cost: Mat,
    /// Switch to the LQR catch once r'Pr drops below this level.
    pub catch_level: f64,
    pub swing_amplitude: f64,
    pub swing_slope: f64,
    /// Seconds of lookahead on the shoulder rate; compensates the elbow
    /// servo lag around rate zero crossings.
    pub swing_lead: f64,
    pub energy_gain: f64,
    pub kp: f64,
    pub kd: f64,
}

/// Stateless feedback law for one environment.
pub enum ExpertController {
    /// Stanley steering: delta = heading error + atan2(k * cross_track, v),
    /// with proportional speed tracking toward the target speed.
    Car { cross_gain: f64, speed_gain: f64 },
    /// u = trim - K x about hover.
    Quadrotor { gain: Mat },
    /// Energy-regulated swing-up on the elbow, switching to an LQR catch
    /// near the upright configuration.
    Acrobot(AcrobotExpert),
}

impl ExpertController {
    /// Build the controller for an environment, solving any required
    /// Riccati equations once up front.
    pub fn for_env(env: &dyn Env) -> Result<Self> {
        match env.spec().name.as_str() {
            "car" | "car-hw" => Ok(ExpertController::Car {
                cross_gain: 1.5,
                speed_gain: 1.0,
            }),
            "quadrotor" => {
                let x0 = env.equilibrium();
                let u0 = env.trim_action();
                let q = [
                    10.0, 10.0, 10.0, // position
                    1.0, 1.0, 1.0, // velocity
                    10.0, 10.0, 10.0, // attitude
                    1.0, 1.0, 1.0, // body rates
                ];
                let r = [1.0, 1.0, 1.0, 1.0];
                let gain = lqr::lqr_gain_about(env, &x0, &u0, &q, &r)?;
                Ok(ExpertController::Quadrotor { gain })
            }
            "acrobot" => {
                let x0 = env.equilibrium();
                let u0 = env.trim_action();
                let q = [10.0, 10.0, 1.0, 1.0];
                let r = [1.0];
                let (gain, cost) = lqr::lqr_solution_about(env, &x0, &u0, &q, &r)?;
                Ok(ExpertController::Acrobot(AcrobotExpert {
                    gain,
                    cost,
                    catch_level: 1200.0,
                    swing_amplitude: 2.0,
                    swing_slope: 6.0,
                    swing_lead: 0.35,
                    energy_gain: 0.2,
                    kp: 40.0,
                    kd: 6.0,
                }))
            }
            other => Err(Error::Config(format!("no expert defined for env '{other}'"))),
        }
    }

    /// Deterministic action at a raw (non-residual) state.
    pub fn action(&self, env: &dyn Env, x: &[f64]) -> Result<Vec<f64>> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("expert queried at non-finite state".into()));
        }
        match self {
            ExpertController::Car {
                cross_gain,
                speed_gain,
            } => {
                let r = env.residual(x);
                // residual = [v_target - v, heading error, cross-track error]
                let v = x[3];
                let theta_e = r[1];
                let d_e = r[2];
                let steer = theta_e + (cross_gain * d_e).atan2(v.max(0.2));
                let accel = speed_gain * r[0];
                Ok(vec![accel, steer])
            }
            ExpertController::Quadrotor { gain } => {
                let trim = env.trim_action();
                let delta = gain.matvec(x);
                Ok(trim.iter().zip(delta.iter()).map(|(t, d)| t - d).collect())
            }
            ExpertController::Acrobot(a) => {
                let r = env.residual(x);
                if lqr::quad_form(&a.cost, &r) <= a.catch_level {
                    let tau = -a.gain.matvec(&r)[0];
                    return Ok(vec![tau]);
                }
                let (t1, t2, w1, w2) = (x[0], x[1], x[2], x[3]);
                let energy = AcrobotEnv::energy(x);
                let energy_err = AcrobotEnv::upright_energy() - energy;
                // pump (or drain) energy by servoing the elbow in (or out of)
                // phase with the shoulder rate
                let modulation = (a.energy_gain * energy_err).clamp(-1.0, 1.0);
                // anticipate the shoulder rate so the elbow reverses before
                // the swing turns around instead of a servo-lag behind it
                let a1_free = env.deriv(x, &[0.0])?[2];
                let w1_ahead = w1 + a.swing_lead * a1_free;
                // a rollout can start at a near-dead hang where the velocity
                // law has nothing to lock onto; bend the elbow until the
                // shoulder itself starts swinging, then let the pump run
                let shoulder_activity = (t1 / 0.4).powi(2) + (w1 / 0.4).powi(2);
                let kick = 0.8 * (1.0 - shoulder_activity).max(0.0) * modulation.max(0.0);
                let q2d = a.swing_amplitude * modulation * (2.0 / PI)
                    * (a.swing_slope * w1_ahead).atan()
                    + kick;
                let v2 = a.kp * (q2d - t2) - a.kd * w2;
                // collocated feedback linearization: torque realizing
                // elbow acceleration v2 given the shoulder is unactuated
                let (d11, d12, d22) = AcrobotEnv::mass_matrix(t2);
                let s2 = t2.sin();
                let m2l1lc2 = 1.0 * 1.0 * 0.5;
                let phi2 = 0.5 * 9.8 * (t1 + t2 - PI / 2.0).cos();
                let phi1 = -m2l1lc2 * w2 * w2 * s2 - 2.0 * m2l1lc2 * w2 * w1 * s2
                    + (1.0 * 0.5 + 1.0 * 1.0) * 9.8 * (t1 - PI / 2.0).cos()
                    + phi2;
                let tau = (d22 - d12 * d12 / d11) * v2 - (d12 / d11) * phi1
                    + m2l1lc2 * w1 * w1 * s2
                    + phi2;
                Ok(vec![tau])
            }
        }
    }
}

/// Convenience wrapper matching the "name in, action out" shape used by the
/// command-line tools. Builds the controller on every call, so prefer
/// [`ExpertController`] directly inside loops.
pub fn expert_action(env: &dyn Env, x: &[f64]) -> Result<Vec<f64>> {
    ExpertController::for_env(env)?.action(env, x)
}

/// Roll the expert closed loop and keep `count` trajectories that reach the
/// convergence tolerance. Attempt seeds are `seed`, `seed+1`, ... so the
/// result is reproducible byte for byte. More than 50% failed attempts is
/// reported as a dataset error (a mis-tuned expert, not bad luck).
pub fn collect_trajectories(
    env: &dyn Env,
    count: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return Err(Error::Dataset("requested zero trajectories".into()));
    }
    let spec = env.spec();
    let horizon = if horizon == 0 { spec.horizon } else { horizon };
    let ctrl = ExpertController::for_env(env)?;
    let mut kept = Vec::with_capacity(count);
    let max_attempts = 2 * count;
    let mut attempts = 0;
    while kept.len() < count && attempts < max_attempts {
        let attempt_seed = seed.wrapping_add(attempts as u64);
        attempts += 1;
        if let Some(traj) = run_expert_once(env, &ctrl, attempt_seed, horizon)? {
            kept.push(traj);
        }
    }
    if kept.len() < count {
        return Err(Error::Dataset(format!(
            "expert failed too often on {}: kept {} of {} attempts",
            spec.name,
            kept.len(),
            attempts
        )));
    }
    Ok(kept)
}

/// One expert rollout. Returns None when the rollout never enters the
/// convergence tolerance (or diverges outright).
fn run_expert_once(
    env: &dyn Env,
    ctrl: &ExpertController,
    seed: u64,
    horizon: usize,
) -> Result<Option<Trajectory>> {
    let spec = env.spec();
    let mut x = env_reset(env, seed).x;
    let mut states = vec![env.residual(&x)];
    let mut converged = false;
    for step in 0..horizon {
        let u = ctrl.action(env, &x)?;
        x = rk4_step(env, &x, &u, spec.dt)?;
        let r = env.residual(&x);
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > spec.divergence_bound {
            return Ok(None);
        }
        states.push(r);
        // require at least one transition before gating so every kept
        // trajectory yields (s, s') pairs
        if step >= 1 && norm < CONVERGENCE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Ok(None);
    }
    Ok(Some(Trajectory {
        env: spec.name.clone(),
        dt: spec.dt,
        seed,
        states,
    }))
}
