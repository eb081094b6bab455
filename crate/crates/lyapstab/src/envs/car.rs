//! Automobile path tracking with a kinematic bicycle model.
//!
//! Raw state is (x, y, yaw, v); actions are acceleration and steering angle.
//! The residual coordinates are the tracking errors (speed error, heading
//! error, signed cross-track distance) against a reference path, all zero at
//! perfect tracking. The sign convention for the cross-track distance is
//! positive when the path lies to the left of the vehicle.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use super::{wrap_angle, Env, EnvSpec};
use crate::error::{Error, Result};

/// Reference path resampled to roughly uniform arc length, with a heading
/// per sample.
#[derive(Debug, Clone)]
pub struct RefPath {
    xs: Vec<f64>,
    ys: Vec<f64>,
    yaws: Vec<f64>,
}

/// Result of a nearest-point query against the path.
#[derive(Debug, Clone, Copy)]
pub struct PathPoint {
    /// Signed cross-track distance, positive when the path is to the left.
    pub d_e: f64,
    /// Path heading at the projection.
    pub yaw_ref: f64,
}

impl RefPath {
    /// Builds a path from waypoints, resampling at spacing `ds`.
    pub fn from_waypoints(pts: &[(f64, f64)], ds: f64) -> Result<Self> {
        if pts.len() < 2 {
            return Err(Error::Config("reference path needs >= 2 waypoints".into()));
        }
        if ds <= 0.0 {
            return Err(Error::Config("path resample spacing must be positive".into()));
        }
        // resample by walking cumulative arc length
        let mut xs = vec![pts[0].0];
        let mut ys = vec![pts[0].1];
        let mut carry = 0.0;
        for w in pts.windows(2) {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            let seg = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
            if seg < 1e-12 {
                continue;
            }
            let mut s = ds - carry;
            while s <= seg {
                let f = s / seg;
                xs.push(x0 + f * (x1 - x0));
                ys.push(y0 + f * (y1 - y0));
                s += ds;
            }
            carry = (carry + seg) % ds;
        }
        if xs.len() < 2 {
            return Err(Error::Config("reference path shorter than resample spacing".into()));
        }
        let n = xs.len();
        let mut yaws = vec![0.0; n];
        for i in 0..n {
            let (ahead, behind) = (usize::min(i + 1, n - 1), i.saturating_sub(1));
            yaws[i] = (ys[ahead] - ys[behind]).atan2(xs[ahead] - xs[behind]);
        }
        Ok(RefPath { xs, ys, yaws })
    }

    /// Loads waypoints from a CSV of `x,y` rows (optional header).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut pts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if i == 0 && line.chars().any(|c| c.is_ascii_alphabetic()) {
                continue; // header row
            }
            let mut cols = line.split(',');
            let parse = |v: Option<&str>| -> Result<f64> {
                v.ok_or_else(|| Error::Parse {
                    line: i + 1,
                    msg: "expected x,y".into(),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
            };
            let x = parse(cols.next())?;
            let y = parse(cols.next())?;
            pts.push((x, y));
        }
        Self::from_waypoints(&pts, 0.1)
    }

    /// Gentle sine curve used as the default track.
    pub fn default_sine(length: f64, amplitude: f64, wavenumber: f64) -> Self {
        let mut pts = Vec::new();
        let mut x = 0.0;
        while x <= length {
            pts.push((x, amplitude * (wavenumber * x).sin()));
            x += 0.25;
        }
        Self::from_waypoints(&pts, 0.1).expect("default path construction")
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn point(&self, i: usize) -> (f64, f64, f64) {
        (self.xs[i], self.ys[i], self.yaws[i])
    }

    /// Projects (px, py) onto the path: nearest sample, refined onto the
    /// adjacent segments.
    pub fn nearest(&self, px: f64, py: f64) -> PathPoint {
        let n = self.xs.len();
        let mut best_i = 0;
        let mut best_d2 = f64::INFINITY;
        for i in 0..n {
            let dx = px - self.xs[i];
            let dy = py - self.ys[i];
            let d2 = dx * dx + dy * dy;
            if d2 < best_d2 {
                best_d2 = d2;
                best_i = i;
            }
        }
        // project onto the segments on both sides of the nearest sample
        let mut best = self.project_segment(best_i, px, py);
        if best_i + 1 < n {
            let cand = self.project_segment(best_i + 1, px, py);
            if cand.0 < best.0 {
                best = cand;
            }
        }
        let (_, d_e, yaw_ref) = best;
        PathPoint { d_e, yaw_ref }
    }

    /// Projection onto the segment ending at index `i`. Returns
    /// (squared distance, signed d_e, interpolated heading).
    fn project_segment(&self, i: usize, px: f64, py: f64) -> (f64, f64, f64) {
        let i1 = i.max(1);
        let (x0, y0) = (self.xs[i1 - 1], self.ys[i1 - 1]);
        let (x1, y1) = (self.xs[i1], self.ys[i1]);
        let (sx, sy) = (x1 - x0, y1 - y0);
        let seg2 = sx * sx + sy * sy;
        let f = if seg2 < 1e-18 {
            0.0
        } else {
            (((px - x0) * sx + (py - y0) * sy) / seg2).clamp(0.0, 1.0)
        };
        let (cx, cy) = (x0 + f * sx, y0 + f * sy);
        let (ex, ey) = (px - cx, py - cy);
        let yaw0 = self.yaws[i1 - 1];
        let yaw1 = self.yaws[i1];
        let yaw_ref = yaw0 + f * wrap_angle(yaw1 - yaw0);
        // cross(t_hat, e) > 0 when the vehicle sits left of the path;
        // d_e is positive when the path is to the left of the vehicle.
        let cross = yaw_ref.cos() * ey - yaw_ref.sin() * ex;
        (ex * ex + ey * ey, -cross, yaw_ref)
    }
}

#[derive(Debug, Clone, Copy)]
struct InitSet {
    d_max: f64,
    yaw_max: f64,
    v_lo_frac: f64,
    v_hi_frac: f64,
}

pub struct CarEnv {
    spec: EnvSpec,
    path: RefPath,
    /// Target speed the residual measures against.
    pub target_speed: f64,
    pub wheelbase: f64,
    init: InitSet,
    start_index: usize,
}

impl CarEnv {
    /// Desk-scale simulated car: dt 0.1 s, 1 m/s target speed.
    pub fn sim(path: Option<RefPath>) -> Self {
        let path = path.unwrap_or_else(|| RefPath::default_sine(60.0, 1.5, 0.2));
        Self::build("car", path, 0.1, 300, 1.0)
    }

    /// Parameters matching the hardware rig: dt 0.5 s, 0.3 m/s target.
    pub fn hardware(path: Option<RefPath>) -> Self {
        let path = path.unwrap_or_else(|| RefPath::default_sine(24.0, 0.6, 0.5));
        Self::build("car-hw", path, 0.5, 120, 0.3)
    }

    fn build(name: &str, path: RefPath, dt: f64, horizon: usize, target_speed: f64) -> Self {
        let spec = EnvSpec {
            name: name.into(),
            state_dim: 4,
            residual_dim: 3,
            action_dim: 2,
            dt,
            horizon,
            action_low: vec![-1.0, -0.6],
            action_high: vec![1.0, 0.6],
            // just outside the initial-error envelope: rollouts that stray
            // this far have left the region any learned landscape covers,
            // so cutting them keeps training data inside known territory
            divergence_bound: 2.0,
        };
        // start one meter along the path so projections have room behind
        let start_index = ((1.0_f64 / 0.1).round() as usize).min(path.len().saturating_sub(2));
        CarEnv {
            spec,
            path,
            target_speed,
            wheelbase: 0.25,
            init: InitSet {
                d_max: 1.0,
                yaw_max: 0.6,
                v_lo_frac: 0.4,
                v_hi_frac: 1.6,
            },
            start_index,
        }
    }

    pub fn path(&self) -> &RefPath {
        &self.path
    }
}

impl Env for CarEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn deriv(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let (yaw, v) = (x[2], x[3]);
        let (accel, steer) = (u[0], u[1]);
        let d = vec![
            v * yaw.cos(),
            v * yaw.sin(),
            v / self.wheelbase * steer.tan(),
            accel,
        ];
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite derivative in {} at state {:?}",
                self.spec.name, x
            )));
        }
        Ok(d)
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let p = self.path.nearest(x[0], x[1]);
        let theta_e = wrap_angle(p.yaw_ref - x[2]);
        vec![self.target_speed - x[3], theta_e, p.d_e]
    }

    fn equilibrium(&self) -> Vec<f64> {
        let (x, y, yaw) = self.path.point(self.start_index);
        vec![x, y, yaw, self.target_speed]
    }

    fn trim_action(&self) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (px, py, pyaw) = self.path.point(self.start_index);
        let d = rng.random_range(-self.init.d_max..self.init.d_max);
        let dyaw = rng.random_range(-self.init.yaw_max..self.init.yaw_max);
        let v = self.target_speed * rng.random_range(self.init.v_lo_frac..self.init.v_hi_frac);
        // offset perpendicular to the path heading; positive d places the
        // car left of the path (d_e becomes negative)
        let nx = -pyaw.sin();
        let ny = pyaw.cos();
        vec![px + d * nx, py + d * ny, wrap_angle(pyaw + dyaw), v]
    }

    fn task_reward(&self, x: &[f64], _u: &[f64]) -> f64 {
        let r = self.residual(x);
        let cost = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
        -cost.min(25.0)
    }

    fn wrap_state(&self, x: &mut [f64]) {
        x[2] = wrap_angle(x[2]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{env_reset, rk4_step};

    fn straight_car() -> CarEnv {
        let pts: Vec<(f64, f64)> = (0..200).map(|i| (i as f64 * 0.25, 0.0)).collect();
        CarEnv::sim(Some(RefPath::from_waypoints(&pts, 0.1).unwrap()))
    }

    #[test]
    fn residual_zero_at_equilibrium() {
        let env = CarEnv::sim(None);
        let res = env.residual(&env.equilibrium());
        let norm = res.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-9, "residual at equilibrium {res:?}");
    }

    /// On a straight path at perfect tracking with zero controls the error
    /// coordinates do not move.
    #[test]
    fn error_rates_vanish_at_equilibrium() {
        let env = straight_car();
        let x0 = env.equilibrium();
        let r0 = env.residual(&x0);
        let x1 = rk4_step(&env, &x0, &env.trim_action(), 1e-3).unwrap();
        let r1 = env.residual(&x1);
        let rate: Vec<f64> = r0.iter().zip(&r1).map(|(a, b)| (b - a) / 1e-3).collect();
        let norm = rate.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-9, "residual rate {rate:?}");
    }

    #[test]
    fn cross_track_sign_convention() {
        let env = straight_car();
        // path runs along +x; a car at y = -1 has the path to its left
        let x = vec![5.0, -1.0, 0.0, 1.0];
        let res = env.residual(&x);
        assert!(res[2] > 0.99, "expected d_e ~ +1, got {}", res[2]);
        let x = vec![5.0, 1.0, 0.0, 1.0];
        let res = env.residual(&x);
        assert!(res[2] < -0.99, "expected d_e ~ -1, got {}", res[2]);
    }

    #[test]
    fn reset_respects_offset_bounds() {
        let env = CarEnv::sim(None);
        for seed in 0..1000 {
            let s = env_reset(&env, seed);
            let res = env.residual(&s.x);
            assert!(res[2].abs() <= 1.0 + 1e-6, "seed {seed}: d_e {}", res[2]);
            assert!(res[1].abs() <= 0.6 + 1e-6, "seed {seed}: theta_e {}", res[1]);
        }
    }

    #[test]
    fn reward_zero_at_perfect_tracking_and_quadratic_in_d() {
        let env = straight_car();
        assert_eq!(env.task_reward(&env.equilibrium(), &[0.0, 0.0]), 0.0);
        let x = vec![5.0, -1.0, 0.0, env.target_speed];
        let r = env.task_reward(&x, &[0.0, 0.0]);
        assert!((r + 1.0).abs() < 1e-6, "reward {r}");
    }

    #[test]
    fn csv_path_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("p.csv");
        std::fs::write(&good, "x,y\n0.0,0.0\n1.0,0.0\n2.0,0.1\n").unwrap();
        let p = RefPath::from_csv(&good).unwrap();
        assert!(p.len() > 10);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "0.0,0.0\n1.0,oops\n").unwrap();
        match RefPath::from_csv(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
