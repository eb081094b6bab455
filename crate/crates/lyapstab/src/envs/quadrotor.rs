//! Twelve-state rigid-body quadrotor in a plus configuration.
//!
//! State: inertial position (x, y, z), velocity, Euler angles
//! (roll, pitch, yaw) and body rates. Actions are the four rotor speeds in
//! per-unit form: a rotor speed of 1 produces a quarter of the hover thrust,
//! so (1, 1, 1, 1) holds the hover exactly. The stabilization target is the
//! hover at the origin, which makes the residual map the identity.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{wrap_angle, Env, EnvSpec};
use crate::error::{Error, Result};

pub const MASS: f64 = 0.5;
pub const ARM: f64 = 0.25;
pub const GRAVITY: f64 = 9.81;
pub const INERTIA_X: f64 = 5.0e-3;
pub const INERTIA_Y: f64 = 5.0e-3;
pub const INERTIA_Z: f64 = 9.0e-3;
/// Thrust per rotor at unit speed; chosen so four rotors at 1 equal the
/// weight.
pub const THRUST_COEF: f64 = MASS * GRAVITY / 4.0;
/// Yaw moment coefficient.
pub const YAW_COEF: f64 = 0.03;

pub struct QuadrotorEnv {
    spec: EnvSpec,
}

impl QuadrotorEnv {
    pub fn new() -> Self {
        QuadrotorEnv {
            spec: EnvSpec {
                name: "quadrotor".into(),
                state_dim: 12,
                residual_dim: 12,
                action_dim: 4,
                dt: 0.02,
                horizon: 500,
                action_low: vec![0.0; 4],
                action_high: vec![2.0; 4],
                divergence_bound: 25.0,
            },
        }
    }
}

impl Default for QuadrotorEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for QuadrotorEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn deriv(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let (phi, theta, psi) = (x[6], x[7], x[8]);
        let (p, q, r) = (x[9], x[10], x[11]);
        let w2: Vec<f64> = u.iter().map(|&w| w * w).collect();
        let thrust = THRUST_COEF * (w2[0] + w2[1] + w2[2] + w2[3]);
        // rotors 2 and 4 sit on the +y / -y arms, rotors 1 and 3 on +x / -x
        let tau_x = THRUST_COEF * ARM * (w2[1] - w2[3]);
        let tau_y = THRUST_COEF * ARM * (w2[2] - w2[0]);
        let tau_z = YAW_COEF * (w2[0] - w2[1] + w2[2] - w2[3]);

        let (sp, cp) = (phi.sin(), phi.cos());
        let (st, ct) = (theta.sin(), theta.cos());
        let (spsi, cpsi) = (psi.sin(), psi.cos());
        let acc = thrust / MASS;

        let mut d = vec![0.0; 12];
        d[0] = x[3];
        d[1] = x[4];
        d[2] = x[5];
        d[3] = acc * (cp * st * cpsi + sp * spsi);
        d[4] = acc * (cp * st * spsi - sp * cpsi);
        d[5] = acc * cp * ct - GRAVITY;
        // Euler-angle kinematics; the tilt singularity at |theta| = pi/2 is
        // cut off by the divergence bound before it can be reached
        let tt = st / ct;
        d[6] = p + tt * (q * sp + r * cp);
        d[7] = q * cp - r * sp;
        d[8] = (q * sp + r * cp) / ct;
        d[9] = ((INERTIA_Y - INERTIA_Z) * q * r + tau_x) / INERTIA_X;
        d[10] = ((INERTIA_Z - INERTIA_X) * p * r + tau_y) / INERTIA_Y;
        d[11] = ((INERTIA_X - INERTIA_Y) * p * q + tau_z) / INERTIA_Z;
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite derivative in {} at state {:?}",
                self.spec.name, x
            )));
        }
        Ok(d)
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn equilibrium(&self) -> Vec<f64> {
        vec![0.0; 12]
    }

    fn trim_action(&self) -> Vec<f64> {
        vec![1.0; 4]
    }

    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut x = vec![0.0; 12];
        for i in 0..3 {
            x[i] = rng.random_range(-0.3..0.3); // position
        }
        for i in 3..6 {
            x[i] = rng.random_range(-0.2..0.2); // velocity
        }
        for i in 6..9 {
            x[i] = rng.random_range(-0.2..0.2); // angles
        }
        for i in 9..12 {
            x[i] = rng.random_range(-0.2..0.2); // rates
        }
        x
    }

    fn task_reward(&self, x: &[f64], _u: &[f64]) -> f64 {
        let pos = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        let vel = x[3] * x[3] + x[4] * x[4] + x[5] * x[5];
        let ang = x[6] * x[6] + x[7] * x[7] + x[8] * x[8];
        let rate = x[9] * x[9] + x[10] * x[10] + x[11] * x[11];
        let cost = pos + 0.1 * vel + 0.5 * ang + 0.05 * rate;
        -cost.min(50.0)
    }

    fn wrap_state(&self, x: &mut [f64]) {
        for i in 6..9 {
            x[i] = wrap_angle(x[i]);
        }
    }
}
