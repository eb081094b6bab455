//! Infinite-horizon discrete LQR gains from numerically linearized dynamics.

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::numkit::Mat;

/// Central-difference Jacobians of dx/dt = f(x, u) at (x0, u0).
///
/// Returns the continuous-time pair (A, B) with A = df/dx and B = df/du.
pub fn linearize(env: &dyn Env, x0: &[f64], u0: &[f64], h: f64) -> Result<(Mat, Mat)> {
    let n = x0.len();
    let m = u0.len();
    let mut a = Mat::zeros(n, n);
    let mut b = Mat::zeros(n, m);
    for j in 0..n {
        let mut xp = x0.to_vec();
        let mut xm = x0.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let fp = env.deriv(&xp, u0)?;
        let fm = env.deriv(&xm, u0)?;
        for i in 0..n {
            a.set(i, j, (fp[i] - fm[i]) / (2.0 * h));
        }
    }
    for j in 0..m {
        let mut up = u0.to_vec();
        let mut um = u0.to_vec();
        up[j] += h;
        um[j] -= h;
        let fp = env.deriv(x0, &up)?;
        let fm = env.deriv(x0, &um)?;
        for i in 0..n {
            b.set(i, j, (fp[i] - fm[i]) / (2.0 * h));
        }
    }
    Ok((a, b))
}

/// Forward-Euler discretization: Ad = I + dt A, Bd = dt B.
pub fn discretize_euler(a: &Mat, b: &Mat, dt: f64) -> (Mat, Mat) {
    let ad = Mat::identity(a.rows()).add(&a.scale(dt));
    let bd = b.scale(dt);
    (ad, bd)
}

/// Solve the discrete algebraic Riccati equation by fixed-point iteration
/// and return the state-feedback gain K so that delta_u = -K delta_x.
pub fn dare_gain(ad: &Mat, bd: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    dare_solution(ad, bd, q, r).map(|(k, _)| k)
}

/// Like [`dare_gain`] but also returns the cost matrix P, whose quadratic
/// form x'Px measures distance from the equilibrium in the metric the
/// controller cares about.
pub fn dare_solution(ad: &Mat, bd: &Mat, q: &Mat, r: &Mat) -> Result<(Mat, Mat)> {
    let n = ad.rows();
    if q.rows() != n || q.cols() != n {
        return Err(Error::Shape("Q must be n x n".into()));
    }
    if r.rows() != bd.cols() || r.cols() != bd.cols() {
        return Err(Error::Shape("R must be m x m".into()));
    }
    let at = ad.transpose();
    let bt = bd.transpose();
    let mut p = q.clone();
    let mut converged = false;
    for _ in 0..20_000 {
        // P' = Q + A'PA - A'PB (R + B'PB)^-1 B'PA
        let pa = p.matmul(ad);
        let pb = p.matmul(bd);
        let apa = at.matmul(&pa);
        let bpb = bt.matmul(&pb);
        let bpa = bt.matmul(&pa);
        let inner = r.add(&bpb).inverse()?;
        let correction = pa.transpose().matmul(bd).matmul(&inner).matmul(&bpa);
        let next = q.add(&apa).sub(&correction);
        // keep P symmetric against rounding drift
        let next = next.add(&next.transpose()).scale(0.5);
        let delta = next.sub(&p).max_abs();
        p = next;
        if delta < 1e-10 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric("Riccati iteration did not converge".into()));
    }
    // K = (R + B'PB)^-1 B'PA
    let pb = p.matmul(bd);
    let bpb = bt.matmul(&pb);
    let bpa = bt.matmul(&p.matmul(ad));
    let k = r.add(&bpb).inverse()?.matmul(&bpa);
    Ok((k, p))
}

/// Evaluate the quadratic form x'Px.
pub fn quad_form(p: &Mat, x: &[f64]) -> f64 {
    let px = p.matvec(x);
    x.iter().zip(px.iter()).map(|(a, b)| a * b).sum()
}

/// Convenience wrapper: linearize about an equilibrium, discretize at the
/// environment step, and solve for the gain.
pub fn lqr_gain_about(
    env: &dyn Env,
    x0: &[f64],
    u0: &[f64],
    q_diag: &[f64],
    r_diag: &[f64],
) -> Result<Mat> {
    lqr_solution_about(env, x0, u0, q_diag, r_diag).map(|(k, _)| k)
}

/// Same as [`lqr_gain_about`] but keeps the Riccati cost matrix as well.
pub fn lqr_solution_about(
    env: &dyn Env,
    x0: &[f64],
    u0: &[f64],
    q_diag: &[f64],
    r_diag: &[f64],
) -> Result<(Mat, Mat)> {
    let (a, b) = linearize(env, x0, u0, 1e-5)?;
    let (ad, bd) = discretize_euler(&a, &b, env.spec().dt);
    let mut q = Mat::zeros(q_diag.len(), q_diag.len());
    for (i, &v) in q_diag.iter().enumerate() {
        q.set(i, i, v);
    }
    let mut r = Mat::zeros(r_diag.len(), r_diag.len());
    for (i, &v) in r_diag.iter().enumerate() {
        r.set(i, i, v);
    }
    dare_solution(&ad, &bd, &q, &r)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar double integrator, exact analytic reference available.
    #[test]
    fn dare_matches_scalar_reference() {
        // x' = a x + b u with a = 1, b = 1, q = 1, r = 1.
        // DARE: p = q + a p a - (a p b)^2 / (r + b p b)
        // => p = 1 + p - p^2/(1+p) => p^2 - p - 1 = 0 => p = (1+sqrt(5))/2.
        let ad = Mat::from_rows(&[vec![1.0]]).unwrap();
        let bd = Mat::from_rows(&[vec![1.0]]).unwrap();
        let q = Mat::from_rows(&[vec![1.0]]).unwrap();
        let r = Mat::from_rows(&[vec![1.0]]).unwrap();
        let k = dare_gain(&ad, &bd, &q, &r).unwrap();
        let p = (1.0 + 5.0_f64.sqrt()) / 2.0;
        let k_expected = p / (1.0 + p);
        assert!((k.get(0, 0) - k_expected).abs() < 1e-9);
    }

    #[test]
    fn gain_stabilizes_double_integrator() {
        // Discrete double integrator, dt = 0.1.
        let dt = 0.1;
        let ad = Mat::from_rows(&[vec![1.0, dt], vec![0.0, 1.0]]).unwrap();
        let bd = Mat::from_rows(&[vec![0.0], vec![dt]]).unwrap();
        let q = Mat::identity(2);
        let r = Mat::from_rows(&[vec![0.1]]).unwrap();
        let k = dare_gain(&ad, &bd, &q, &r).unwrap();
        // simulate the closed loop from a unit displacement
        let mut x = vec![1.0, 0.0];
        for _ in 0..400 {
            let u = -(k.get(0, 0) * x[0] + k.get(0, 1) * x[1]);
            let x0 = x[0] + dt * x[1];
            let x1 = x[1] + dt * u;
            x = vec![x0, x1];
        }
        assert!(x[0].abs() < 1e-3 && x[1].abs() < 1e-3, "closed loop left at {x:?}");
    }

    #[test]
    fn linearize_recovers_linear_system() {
        use crate::envs::{Env, EnvSpec};

        struct LinearEnv {
            spec: EnvSpec,
        }
        impl Env for LinearEnv {
            fn spec(&self) -> &EnvSpec {
                &self.spec
            }
            fn deriv(&self, x: &[f64], u: &[f64]) -> crate::Result<Vec<f64>> {
                Ok(vec![2.0 * x[0] - x[1] + 0.5 * u[0], x[0] + 3.0 * u[0]])
            }
            fn residual(&self, x: &[f64]) -> Vec<f64> {
                x.to_vec()
            }
            fn equilibrium(&self) -> Vec<f64> {
                vec![0.0, 0.0]
            }
            fn trim_action(&self) -> Vec<f64> {
                vec![0.0]
            }
            fn sample_initial(&self, _rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
                vec![0.0, 0.0]
            }
            fn task_reward(&self, _x: &[f64], _u: &[f64]) -> f64 {
                0.0
            }
        }

        let env = LinearEnv {
            spec: EnvSpec {
                name: "linear".into(),
                state_dim: 2,
                residual_dim: 2,
                action_dim: 1,
                dt: 0.1,
                horizon: 10,
                action_low: vec![-10.0],
                action_high: vec![10.0],
                divergence_bound: 100.0,
            },
        };
        let (a, b) = linearize(&env, &[0.3, -0.2], &[0.1], 1e-5).unwrap();
        let a_true = Mat::from_rows(&[vec![2.0, -1.0], vec![1.0, 0.0]]).unwrap();
        let b_true = Mat::from_rows(&[vec![0.5], vec![3.0]]).unwrap();
        assert!(a.sub(&a_true).max_abs() < 1e-8);
        assert!(b.sub(&b_true).max_abs() < 1e-8);
    }
}
