//! Two-link underactuated acrobot with a continuous torque on the elbow
//! joint. Angle convention follows the classic formulation: theta1 = 0 means
//! the first link hangs straight down, theta1 = pi is upright. The
//! stabilization target is the upright configuration at rest, so residual
//! coordinates are (wrapped distance from upright, elbow angle, both rates).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{wrap_angle, Env, EnvSpec};
use crate::error::{Error, Result};

pub const LINK_MASS_1: f64 = 1.0;
pub const LINK_MASS_2: f64 = 1.0;
pub const LINK_LENGTH_1: f64 = 1.0;
pub const LINK_COM_1: f64 = 0.5;
pub const LINK_COM_2: f64 = 0.5;
pub const LINK_INERTIA_1: f64 = 1.0;
pub const LINK_INERTIA_2: f64 = 1.0;
pub const GRAVITY: f64 = 9.8;
pub const TORQUE_LIMIT: f64 = 6.0;

pub struct AcrobotEnv {
    spec: EnvSpec,
}

impl AcrobotEnv {
    pub fn new() -> Self {
        AcrobotEnv {
            spec: EnvSpec {
                name: "acrobot".into(),
                state_dim: 4,
                residual_dim: 4,
                action_dim: 1,
                dt: 0.05,
                horizon: 400,
                action_low: vec![-TORQUE_LIMIT],
                action_high: vec![TORQUE_LIMIT],
                divergence_bound: 100.0,
            },
        }
    }

    /// Mass matrix entries (d11, d12, d22) at elbow angle theta2.
    pub fn mass_matrix(theta2: f64) -> (f64, f64, f64) {
        let c2 = theta2.cos();
        let d11 = LINK_MASS_1 * LINK_COM_1 * LINK_COM_1
            + LINK_MASS_2
                * (LINK_LENGTH_1 * LINK_LENGTH_1
                    + LINK_COM_2 * LINK_COM_2
                    + 2.0 * LINK_LENGTH_1 * LINK_COM_2 * c2)
            + LINK_INERTIA_1
            + LINK_INERTIA_2;
        let d12 = LINK_MASS_2 * (LINK_COM_2 * LINK_COM_2 + LINK_LENGTH_1 * LINK_COM_2 * c2)
            + LINK_INERTIA_2;
        let d22 = LINK_MASS_2 * LINK_COM_2 * LINK_COM_2 + LINK_INERTIA_2;
        (d11, d12, d22)
    }

    /// Total mechanical energy; zero datum at the hanging rest state is not
    /// used, potential is measured from the pivot.
    pub fn energy(x: &[f64]) -> f64 {
        let (t1, t2, w1, w2) = (x[0], x[1], x[2], x[3]);
        let (d11, d12, d22) = Self::mass_matrix(t2);
        let kinetic = 0.5 * (d11 * w1 * w1 + 2.0 * d12 * w1 * w2 + d22 * w2 * w2);
        let potential = -(LINK_MASS_1 * LINK_COM_1 + LINK_MASS_2 * LINK_LENGTH_1)
            * GRAVITY
            * t1.cos()
            - LINK_MASS_2 * LINK_COM_2 * GRAVITY * (t1 + t2).cos();
        kinetic + potential
    }

    /// Energy of the upright rest configuration.
    pub fn upright_energy() -> f64 {
        (LINK_MASS_1 * LINK_COM_1 + LINK_MASS_2 * LINK_LENGTH_1) * GRAVITY
            + LINK_MASS_2 * LINK_COM_2 * GRAVITY
    }

    /// Height of the tip above the pivot, in [-2, 2] for unit links.
    pub fn tip_height(x: &[f64]) -> f64 {
        -x[0].cos() - (x[0] + x[1]).cos()
    }
}

impl Default for AcrobotEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for AcrobotEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn deriv(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let (t1, t2, w1, w2) = (x[0], x[1], x[2], x[3]);
        let tau = u[0];
        let (d1, d2, d22_part) = {
            let (d11, d12, _) = Self::mass_matrix(t2);
            (d11, d12, LINK_MASS_2 * LINK_COM_2 * LINK_COM_2 + LINK_INERTIA_2)
        };
        let s2 = t2.sin();
        let phi2 = LINK_MASS_2 * LINK_COM_2 * GRAVITY * (t1 + t2 - std::f64::consts::FRAC_PI_2).cos();
        let phi1 = -LINK_MASS_2 * LINK_LENGTH_1 * LINK_COM_2 * w2 * w2 * s2
            - 2.0 * LINK_MASS_2 * LINK_LENGTH_1 * LINK_COM_2 * w2 * w1 * s2
            + (LINK_MASS_1 * LINK_COM_1 + LINK_MASS_2 * LINK_LENGTH_1)
                * GRAVITY
                * (t1 - std::f64::consts::FRAC_PI_2).cos()
            + phi2;
        let a2 = (tau + d2 / d1 * phi1
            - LINK_MASS_2 * LINK_LENGTH_1 * LINK_COM_2 * w1 * w1 * s2
            - phi2)
            / (d22_part - d2 * d2 / d1);
        let a1 = -(d2 * a2 + phi1) / d1;
        let d = vec![w1, w2, a1, a2];
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite derivative in {} at state {:?}",
                self.spec.name, x
            )));
        }
        Ok(d)
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        vec![
            wrap_angle(x[0] - std::f64::consts::PI),
            wrap_angle(x[1]),
            x[2],
            x[3],
        ]
    }

    fn equilibrium(&self) -> Vec<f64> {
        vec![std::f64::consts::PI, 0.0, 0.0, 0.0]
    }

    fn trim_action(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        // near hanging down
        vec![
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
        ]
    }

    fn task_reward(&self, x: &[f64], _u: &[f64]) -> f64 {
        let h = Self::tip_height(x);
        let height_cost = (2.0 - h) / 2.0;
        let cost = height_cost * height_cost + 0.01 * (x[2] * x[2] + x[3] * x[3]);
        -cost.min(10.0)
    }

    fn wrap_state(&self, x: &mut [f64]) {
        x[0] = wrap_angle(x[0]);
        x[1] = wrap_angle(x[1]);
    }
}
