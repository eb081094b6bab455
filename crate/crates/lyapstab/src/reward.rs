//! Reward shaping from a scalar landscape.
//!
//! The per-step reward is g(V(s)) + beta2 * min(0, (V(s) - V(s'))/dt). The
//! base term pays more the lower the landscape value; the second term
//! penalizes steps on which V rises and vanishes on descending steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::StateValue;

/// Base shaping function applied to V(s).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GKind {
    NegLog,
    NegLogGauss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub g: GKind,
    /// Shape parameter for the neg_log_gauss kind.
    pub k: f64,
    /// Weight on the ascent penalty.
    pub beta2: f64,
    /// Landscape values are clamped below at this before any log.
    pub v_floor: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            g: GKind::NegLogGauss,
            k: 5.0,
            beta2: 1.0,
            v_floor: 1e-6,
        }
    }
}

impl RewardConfig {
    /// Per-environment default shaping: the smooth bounded kind for the
    /// car and quadrotor, the unbounded log for the acrobot.
    pub fn default_for(env: &str) -> Self {
        let g = if env.starts_with("acrobot") {
            GKind::NegLog
        } else {
            GKind::NegLogGauss
        };
        RewardConfig {
            g,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::Config(format!("reward k must be positive, got {}", self.k)));
        }
        if !(self.beta2 > 0.0) {
            return Err(Error::Config(format!(
                "reward beta2 must be positive, got {}",
                self.beta2
            )));
        }
        if !(self.v_floor > 0.0) {
            return Err(Error::Config(format!(
                "reward v_floor must be positive, got {}",
                self.v_floor
            )));
        }
        Ok(())
    }
}

/// g applied to a landscape value, with the low clamp. Both kinds are
/// strictly decreasing and convex on (v_floor, inf); for neg_log_gauss the
/// second derivative in x has the sign of e^y (2y - 1) + 1 with y = k x^2,
/// which is zero at y = 0 and increasing in y.
pub fn scale_g(cfg: &RewardConfig, x: f64) -> f64 {
    let xc = x.max(cfg.v_floor);
    match cfg.g {
        GKind::NegLog => -xc.ln(),
        GKind::NegLogGauss => -(-(-cfg.k * xc * xc).exp()).ln_1p(),
    }
}

/// Eq-5-style reward for one transition, plus a flag marking that V(s) came
/// back negative. A landscape trained to be positive on expert states goes
/// negative only where it extrapolates, so the flag counts visits outside
/// the region the landscape knows about. Tiny positive values are not
/// flagged: near the equilibrium V legitimately approaches zero.
pub fn proxy_reward_flagged(
    v: &impl StateValue,
    s: &[f64],
    s2: &[f64],
    cfg: &RewardConfig,
    dt: f64,
) -> Result<(f64, bool)> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("reward requires dt > 0, got {dt}")));
    }
    let vs = v.value(s)?;
    let vs2 = v.value(s2)?;
    let base = scale_g(cfg, vs);
    let penalty = cfg.beta2 * ((vs - vs2) / dt).min(0.0);
    Ok((base + penalty, vs < 0.0))
}

/// Eq-5-style reward for one transition.
pub fn proxy_reward(
    v: &impl StateValue,
    s: &[f64],
    s2: &[f64],
    cfg: &RewardConfig,
    dt: f64,
) -> Result<f64> {
    proxy_reward_flagged(v, s, s2, cfg, dt).map(|(r, _)| r)
}
