//! On-policy PPO over residual-coordinate states.
//!
//! A diagonal-Gaussian policy and a value network are trained from rollouts
//! scored by a pluggable per-transition reward. The update maximizes the
//! clipped surrogate with generalized advantage estimation; rollout and
//! update phases strictly alternate.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::{env_reset, env_step, Env};
use crate::error::{Error, Result};
use crate::numkit::{rng_stream, AdamState, AdamVec, Mlp, MlpGrads};

pub const EVAL_EPISODES: usize = 10;
/// Seed base for deterministic evaluation episodes. Scores are comparable
/// across methods and baselines because everyone evaluates from the same
/// starts.
pub const EVAL_SEED_BASE: u64 = 77_000_000;

const LOG_2PI: f64 = 1.8378770664093453;

/// Diagonal-Gaussian policy: an MLP state-to-mean map plus one learned log
/// standard deviation per action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new(
        state_dim: usize,
        hidden: &[usize],
        action_low: &[f64],
        action_high: &[f64],
        log_std_init: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let action_dim = action_low.len();
        if action_dim == 0 || action_high.len() != action_dim {
            return Err(Error::Config("policy action bounds malformed".into()));
        }
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let mut mean = Mlp::new(&sizes, rng)?;
        // near-zero initial mean keeps early actions close to the trim
        mean.scale_output_layer(0.01);
        Ok(GaussianPolicy {
            mean,
            log_std: vec![log_std_init; action_dim],
            action_low: action_low.to_vec(),
            action_high: action_high.to_vec(),
        })
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Deterministic action: the clamped mean.
    pub fn mean_action(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mu = self.mean.forward(s)?;
        Ok(mu
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&m, (&lo, &hi))| m.clamp(lo, hi))
            .collect())
    }

    /// Log density of `a` (an unclamped sample) under the policy at `s`.
    pub fn log_prob(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let mu = self.mean.forward(s)?;
        Ok(log_prob_from_mean(&mu, &self.log_std, a))
    }
}

fn log_prob_from_mean(mu: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    let mut lp = 0.0;
    for j in 0..mu.len() {
        let z = (a[j] - mu[j]) * (-log_std[j]).exp();
        lp += -0.5 * z * z - log_std[j] - 0.5 * LOG_2PI;
    }
    lp
}

/// Draws an action and its log probability. The returned action is the raw
/// Gaussian sample; clamp it to the environment bounds before stepping, but
/// store and score the raw value so stored log-probs stay consistent.
pub fn sample_action(
    policy: &GaussianPolicy,
    s: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, f64)> {
    let mu = policy.mean.forward(s)?;
    let mut a = Vec::with_capacity(mu.len());
    for j in 0..mu.len() {
        let z: f64 = StandardNormal.sample(rng);
        a.push(mu[j] + policy.log_std[j].exp() * z);
    }
    let lp = log_prob_from_mean(&mu, &policy.log_std, &a);
    Ok((a, lp))
}

/// State-value critic.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFn {
    pub net: Mlp,
}

impl ValueFn {
    pub fn new(state_dim: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(ValueFn {
            net: Mlp::new(&sizes, rng)?,
        })
    }

    pub fn value(&self, s: &[f64]) -> Result<f64> {
        Ok(self.net.forward(s)?[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub lam: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub steps_per_iter: usize,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub entropy_coef: f64,
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    /// Lower clamp applied to log-std after each update. Without a floor the
    /// exploration scale can collapse far enough that probability ratios
    /// between nearby policies explode and updates turn destructive.
    #[serde(default = "default_log_std_floor")]
    pub log_std_floor: f64,
    /// Stop a surrogate update's epoch sweep once the estimated KL to the
    /// rollout policy exceeds this value. Non-positive disables the check.
    #[serde(default = "default_target_kl")]
    pub target_kl: f64,
}

fn default_log_std_floor() -> f64 {
    -2.2
}

fn default_target_kl() -> f64 {
    0.03
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_eps: 0.2,
            gamma: 0.99,
            lam: 0.95,
            epochs: 10,
            minibatch: 64,
            steps_per_iter: 4096,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            entropy_coef: 0.0,
            hidden: vec![32, 32],
            log_std_init: -0.5,
            log_std_floor: default_log_std_floor(),
            target_kl: default_target_kl(),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config(format!("clip_eps out of (0,1): {}", self.clip_eps)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma out of (0,1]: {}", self.gamma)));
        }
        if !(self.lam >= 0.0 && self.lam <= 1.0) {
            return Err(Error::Config(format!("lambda out of [0,1]: {}", self.lam)));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.steps_per_iter == 0 {
            return Err(Error::Config("epochs, minibatch and steps_per_iter must be positive".into()));
        }
        if !(self.policy_lr > 0.0 && self.value_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !self.log_std_floor.is_finite() || self.log_std_init < self.log_std_floor {
            return Err(Error::Config(format!(
                "log_std_init {} below log_std_floor {}",
                self.log_std_init, self.log_std_floor
            )));
        }
        Ok(())
    }
}

/// Per-transition reward source used during rollouts.
pub trait RewardFn {
    /// Reward for the transition (x, u, x2) whose residual coordinates are
    /// (s, s2). The flag marks transitions outside the reward model's
    /// trusted range (for example a negative landscape value).
    fn eval(
        &self,
        env: &dyn Env,
        x: &[f64],
        u: &[f64],
        x2: &[f64],
        s: &[f64],
        s2: &[f64],
    ) -> Result<(f64, bool)>;

    /// Whether rollout rewards get divided by a running standard deviation
    /// before advantage estimation. Learned reward sources opt in; the task
    /// reward stays raw.
    fn normalize(&self) -> bool {
        true
    }
}

/// Ground-truth task reward, for oracle runs and evaluation.
pub struct TaskReward;

impl RewardFn for TaskReward {
    fn eval(
        &self,
        env: &dyn Env,
        x: &[f64],
        u: &[f64],
        _x2: &[f64],
        _s: &[f64],
        _s2: &[f64],
    ) -> Result<(f64, bool)> {
        Ok((env.task_reward(x, u), false))
    }

    fn normalize(&self) -> bool {
        false
    }
}

/// Landscape-derived reward over residual coordinates.
pub struct LandscapeReward<'a> {
    pub v: &'a crate::lyapunov::Landscape,
    pub cfg: crate::reward::RewardConfig,
}

impl RewardFn for LandscapeReward<'_> {
    fn eval(
        &self,
        env: &dyn Env,
        _x: &[f64],
        _u: &[f64],
        _x2: &[f64],
        s: &[f64],
        s2: &[f64],
    ) -> Result<(f64, bool)> {
        crate::reward::proxy_reward_flagged(self.v, s, s2, &self.cfg, env.spec().dt)
    }
}

/// One on-policy batch of transitions.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    /// Residual-coordinate states.
    pub states: Vec<Vec<f64>>,
    /// Residual-coordinate successor states.
    pub next_states: Vec<Vec<f64>>,
    /// Raw (unclamped) sampled actions.
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    /// Rewards as fed to GAE (possibly normalized).
    pub rewards: Vec<f64>,
    /// Rewards straight from the reward source.
    pub raw_rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Critic value of the successor state (used to bootstrap).
    pub next_values: Vec<f64>,
    /// Step ended the episode by divergence: no bootstrap.
    pub terminals: Vec<bool>,
    /// Step is the last of its episode segment: the GAE chain cuts here.
    pub ends: Vec<bool>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Welford running standard deviation for reward normalization.
#[derive(Debug, Clone, Default)]
pub struct RunningStd {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStd {
    pub fn update(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn std(&self) -> f64 {
        if self.n < 2 {
            return 1.0;
        }
        (self.m2 / self.n as f64).sqrt()
    }
}

/// Rollout bookkeeping that is not part of the learning signal.
#[derive(Debug, Clone, Default)]
pub struct RolloutMeta {
    pub episodes: usize,
    /// Mean raw reward-source return over completed episode segments.
    pub mean_raw_return: f64,
    pub out_of_landscape: u64,
    pub mean_episode_len: f64,
}

/// Collects `steps` transitions, resetting the environment at episode ends.
pub fn collect_rollout(
    env: &dyn Env,
    policy: &GaussianPolicy,
    valuefn: &ValueFn,
    reward: &dyn RewardFn,
    steps: usize,
    gamma: f64,
    rng: &mut ChaCha8Rng,
    norm: &mut RunningStd,
) -> Result<(RolloutBuffer, RolloutMeta)> {
    let spec = env.spec();
    let mut buf = RolloutBuffer::default();
    let mut meta = RolloutMeta::default();
    let mut state = env_reset(env, rng.random());
    let mut return_sum = 0.0;
    let mut segment_return = 0.0;
    let mut segments = 0usize;
    let mut ret_acc = 0.0;
    for step in 0..steps {
        let s = env.residual(&state.x);
        let (a, lp) = sample_action(policy, &s, rng)?;
        let u = spec.clamp_action(&a);
        let out = env_step(env, &state, &u)?;
        let s2 = env.residual(&out.state.x);
        let (r, flagged) = reward.eval(env, &state.x, &u, &out.state.x, &s, &s2)?;
        if !r.is_finite() {
            return Err(Error::Training(format!("non-finite rollout reward at step {step}")));
        }
        if flagged {
            meta.out_of_landscape += 1;
        }
        let episode_over = out.terminal || out.truncated;
        buf.values.push(valuefn.value(&s)?);
        buf.next_values.push(valuefn.value(&s2)?);
        buf.states.push(s);
        buf.next_states.push(s2);
        buf.actions.push(a);
        buf.log_probs.push(lp);
        buf.raw_rewards.push(r);
        // divergence cuts are truncations, not task terminals: the value
        // bootstrap keeps running across them, so ending an episode early
        // never erases the continuation the policy would otherwise face
        buf.terminals.push(false);
        buf.ends.push(episode_over || step == steps - 1);
        segment_return += r;
        // scale tracking follows the discounted return, not the raw reward:
        // dividing by the return's running std keeps value-fn regression
        // targets O(1) no matter how peaked the reward source is
        ret_acc = gamma * ret_acc + r;
        norm.update(ret_acc);
        if episode_over {
            meta.episodes += 1;
            meta.mean_episode_len += out.state.t as f64;
            return_sum += segment_return;
            segment_return = 0.0;
            segments += 1;
            ret_acc = 0.0;
            state = env_reset(env, rng.random());
        } else {
            state = out.state;
        }
    }
    if segments > 0 {
        meta.mean_raw_return = return_sum / segments as f64;
        meta.mean_episode_len /= meta.episodes.max(1) as f64;
    } else {
        meta.mean_raw_return = segment_return;
    }
    if reward.normalize() {
        let sd = norm.std().max(1e-8);
        buf.rewards = buf.raw_rewards.iter().map(|r| (r / sd).clamp(-10.0, 10.0)).collect();
    } else {
        buf.rewards = buf.raw_rewards.clone();
    }
    Ok((buf, meta))
}

/// Raw generalized advantages: A_t = sum_i (gamma lam)^i delta_{t+i} within
/// each episode segment, with delta_t = r_t + gamma V(s_{t+1}) (1 - terminal)
/// - V(s_t). Truncated segments still bootstrap through delta.
pub fn gae_raw(buf: &RolloutBuffer, cfg: &PpoConfig) -> Vec<f64> {
    let n = buf.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let bootstrap = if buf.terminals[t] { 0.0 } else { buf.next_values[t] };
        let delta = buf.rewards[t] + cfg.gamma * bootstrap - buf.values[t];
        acc = if buf.ends[t] {
            delta
        } else {
            delta + cfg.gamma * cfg.lam * acc
        };
        adv[t] = acc;
    }
    adv
}

/// Normalized advantages plus value-regression targets.
pub fn gae_advantages(buf: &RolloutBuffer, cfg: &PpoConfig) -> (Vec<f64>, Vec<f64>) {
    let raw = gae_raw(buf, cfg);
    let returns: Vec<f64> = raw.iter().zip(&buf.values).map(|(a, v)| a + v).collect();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    let adv = raw.iter().map(|a| (a - mean) / sd).collect();
    (adv, returns)
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_frac: f64,
}

/// Policy, critic and their optimizer states, advanced one PPO update at a
/// time.
pub struct PpoLearner {
    pub policy: GaussianPolicy,
    pub valuefn: ValueFn,
    pub cfg: PpoConfig,
    adam_mean: AdamState,
    adam_log_std: AdamVec,
    adam_value: AdamState,
    pub reward_norm: RunningStd,
}

impl PpoLearner {
    pub fn new(
        state_dim: usize,
        action_low: &[f64],
        action_high: &[f64],
        cfg: PpoConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut policy_rng = rng_stream(seed, 1);
        let mut value_rng = rng_stream(seed, 2);
        let policy = GaussianPolicy::new(
            state_dim,
            &cfg.hidden,
            action_low,
            action_high,
            cfg.log_std_init,
            &mut policy_rng,
        )?;
        let valuefn = ValueFn::new(state_dim, &cfg.hidden, &mut value_rng)?;
        let adam_mean = AdamState::new(&policy.mean);
        let adam_log_std = AdamVec::new(policy.action_dim());
        let adam_value = AdamState::new(&valuefn.net);
        Ok(PpoLearner {
            policy,
            valuefn,
            cfg,
            adam_mean,
            adam_log_std,
            adam_value,
            reward_norm: RunningStd::default(),
        })
    }

    /// One clipped-surrogate update over the buffer: cfg.epochs passes of
    /// shuffled minibatches, policy and critic updated together.
    pub fn update(
        &mut self,
        buf: &RolloutBuffer,
        adv: &[f64],
        returns: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<PpoStats> {
        use rand::seq::SliceRandom;
        let n = buf.len();
        if n == 0 {
            return Err(Error::Training("empty rollout buffer".into()));
        }
        let eps = self.cfg.clip_eps;
        let mut order: Vec<usize> = (0..n).collect();
        let mut pol_grads = MlpGrads::zeros_like(&self.policy.mean);
        let mut val_grads = MlpGrads::zeros_like(&self.valuefn.net);
        let adim = self.policy.action_dim();
        let mut stats = PpoStats::default();
        let mut samples_seen = 0usize;
        for _ in 0..self.cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(self.cfg.minibatch) {
                pol_grads.reset();
                val_grads.reset();
                let mut std_grads = vec![0.0; adim];
                let mb = chunk.len() as f64;
                for &i in chunk {
                    let trace = self.policy.mean.forward_trace(&buf.states[i])?;
                    let mu = trace.output().to_vec();
                    let lp_new = log_prob_from_mean(&mu, &self.policy.log_std, &buf.actions[i]);
                    let ratio = (lp_new - buf.log_probs[i]).exp();
                    let a = adv[i];
                    let surr1 = ratio * a;
                    let surr2 = ratio.clamp(1.0 - eps, 1.0 + eps) * a;
                    stats.policy_loss += -surr1.min(surr2);
                    stats.kl += buf.log_probs[i] - lp_new;
                    if (ratio - 1.0).abs() > eps {
                        stats.clip_frac += 1.0;
                    }
                    // the min kills the gradient exactly when clipping binds
                    // in the adverse direction
                    let clipped_out = (a >= 0.0 && ratio > 1.0 + eps) || (a < 0.0 && ratio < 1.0 - eps);
                    if !clipped_out {
                        let coef = -(ratio * a) / mb;
                        let mut upstream = vec![0.0; adim];
                        for j in 0..adim {
                            let inv_var = (-2.0 * self.policy.log_std[j]).exp();
                            upstream[j] = (buf.actions[i][j] - mu[j]) * inv_var;
                            let z = (buf.actions[i][j] - mu[j]) * (-self.policy.log_std[j]).exp();
                            std_grads[j] += coef * (z * z - 1.0);
                        }
                        self.policy.mean.backward_into(&trace, &upstream, coef, &mut pol_grads);
                    }
                    let vtrace = self.valuefn.net.forward_trace(&buf.states[i])?;
                    let v = vtrace.output()[0];
                    let verr = v - returns[i];
                    stats.value_loss += verr * verr;
                    self.valuefn.net.backward_into(&vtrace, &[1.0], 2.0 * verr / mb, &mut val_grads);
                }
                samples_seen += chunk.len();
                self.adam_mean.step(&mut self.policy.mean, &pol_grads, self.cfg.policy_lr)?;
                self.adam_log_std.step(&mut self.policy.log_std, &std_grads, self.cfg.policy_lr)?;
                for ls in self.policy.log_std.iter_mut() {
                    if *ls < self.cfg.log_std_floor {
                        *ls = self.cfg.log_std_floor;
                    }
                }
                self.adam_value.step(&mut self.valuefn.net, &val_grads, self.cfg.value_lr)?;
            }
            if self.cfg.target_kl > 0.0 {
                let mut kl_sum = 0.0;
                for i in 0..n {
                    let mu = self.policy.mean.forward(&buf.states[i])?;
                    let lp_new = log_prob_from_mean(&mu, &self.policy.log_std, &buf.actions[i]);
                    kl_sum += buf.log_probs[i] - lp_new;
                }
                if kl_sum / n as f64 > self.cfg.target_kl {
                    break;
                }
            }
        }
        if !self.policy.mean.is_finite() || !self.valuefn.net.is_finite() {
            return Err(Error::Training("non-finite parameters after ppo update".into()));
        }
        let d = samples_seen as f64;
        stats.policy_loss /= d;
        stats.value_loss /= d;
        stats.kl /= d;
        stats.clip_frac /= d;
        if !(stats.policy_loss.is_finite() && stats.value_loss.is_finite()) {
            return Err(Error::Training("non-finite ppo loss".into()));
        }
        Ok(stats)
    }
}

/// Mean task-reward return of the deterministic (mean-action) policy over
/// fixed-seed evaluation episodes.
pub fn evaluate_policy(
    env: &dyn Env,
    policy: &GaussianPolicy,
    episodes: usize,
    seed_base: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for ep in 0..episodes {
        let mut state = env_reset(env, seed_base.wrapping_add(ep as u64));
        loop {
            let s = env.residual(&state.x);
            let u = policy.mean_action(&s)?;
            let out = env_step(env, &state, &u)?;
            total += env.task_reward(&state.x, &u);
            // evaluation runs to the horizon even past the divergence
            // cutoff: a run that leaves the tracking region keeps paying
            // task cost instead of having its score capped by an early exit
            if out.truncated {
                break;
            }
            state = out.state;
        }
    }
    Ok(total / episodes as f64)
}

/// One learning-curve row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    /// Cumulative environment steps after this iteration.
    pub env_steps: u64,
    pub mean_eval_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_frac: f64,
    /// Mean raw reward-source return per rollout episode.
    pub mean_rollout_return: f64,
    pub episodes: usize,
    pub out_of_landscape: u64,
}

/// Full PPO loop: collect, estimate advantages, update, evaluate, repeat.
pub fn train_policy(
    env: &dyn Env,
    reward: &dyn RewardFn,
    cfg: &PpoConfig,
    iterations: usize,
    seed: u64,
) -> Result<(PpoLearner, Vec<IterRecord>)> {
    let spec = env.spec();
    let mut learner = PpoLearner::new(
        spec.residual_dim,
        &spec.action_low,
        &spec.action_high,
        cfg.clone(),
        seed,
    )?;
    let mut rollout_rng = rng_stream(seed, 4);
    let mut update_rng = rng_stream(seed, 5);
    let mut records = Vec::with_capacity(iterations);
    let mut env_steps = 0u64;
    for iteration in 1..=iterations {
        let (buf, meta) = collect_rollout(
            env,
            &learner.policy,
            &learner.valuefn,
            reward,
            cfg.steps_per_iter,
            cfg.gamma,
            &mut rollout_rng,
            &mut learner.reward_norm,
        )?;
        env_steps += buf.len() as u64;
        let (adv, returns) = gae_advantages(&buf, cfg);
        let stats = learner.update(&buf, &adv, &returns, &mut update_rng)?;
        let mean_eval_return = evaluate_policy(env, &learner.policy, EVAL_EPISODES, EVAL_SEED_BASE)?;
        records.push(IterRecord {
            iteration,
            env_steps,
            mean_eval_return,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            kl: stats.kl,
            clip_frac: stats.clip_frac,
            mean_rollout_return: meta.mean_raw_return,
            episodes: meta.episodes,
            out_of_landscape: meta.out_of_landscape,
        });
    }
    Ok((learner, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_env;

    fn tiny_policy(seed: u64) -> GaussianPolicy {
        let mut rng = rng_stream(seed, 0);
        GaussianPolicy::new(2, &[8], &[-1.0, -1.0], &[1.0, 1.0], -0.5, &mut rng).unwrap()
    }

    #[test]
    fn degenerate_gaussian_returns_bias() {
        let mut rng = rng_stream(1, 0);
        let mut policy = GaussianPolicy::new(2, &[4], &[-1.0], &[1.0], -40.0, &mut rng).unwrap();
        for w in policy.mean.weights_mut() {
            for v in w.data_mut() {
                *v = 0.0;
            }
        }
        let last = policy.mean.num_layers() - 1;
        policy.mean.biases_mut()[last][0] = 0.3;
        for layer in 0..policy.mean.num_layers() - 1 {
            for v in policy.mean.biases_mut()[layer].iter_mut() {
                *v = 0.0;
            }
        }
        let mut rng = rng_stream(2, 0);
        let (a, _) = sample_action(&policy, &[0.4, -0.2], &mut rng).unwrap();
        assert!((a[0] - 0.3).abs() < 1e-12, "a {a:?}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let policy = tiny_policy(3);
        let mut r1 = rng_stream(9, 1);
        let mut r2 = rng_stream(9, 1);
        let s = [0.2, -0.7];
        for _ in 0..20 {
            let (a1, lp1) = sample_action(&policy, &s, &mut r1).unwrap();
            let (a2, lp2) = sample_action(&policy, &s, &mut r2).unwrap();
            assert_eq!(a1, a2);
            assert_eq!(lp1, lp2);
        }
    }

    #[test]
    fn sample_mean_matches_network_mean() {
        let policy = tiny_policy(4);
        let s = [0.5, 0.1];
        let mu = policy.mean.forward(&s).unwrap();
        let mut rng = rng_stream(11, 0);
        let n = 100_000usize;
        let mut acc = vec![0.0; 2];
        for _ in 0..n {
            let (a, _) = sample_action(&policy, &s, &mut rng).unwrap();
            for j in 0..2 {
                acc[j] += a[j];
            }
        }
        let sigma = (-0.5f64).exp();
        let tol = 3.0 * sigma / (n as f64).sqrt();
        for j in 0..2 {
            let emp = acc[j] / n as f64;
            assert!((emp - mu[j]).abs() < tol, "dim {j}: {emp} vs {}", mu[j]);
        }
    }

    #[test]
    fn log_prob_matches_sampled_value() {
        let policy = tiny_policy(5);
        let mut rng = rng_stream(12, 0);
        let s = [0.3, -0.4];
        for _ in 0..50 {
            let (a, lp) = sample_action(&policy, &s, &mut rng).unwrap();
            let re = policy.log_prob(&s, &a).unwrap();
            assert!((lp - re).abs() < 1e-10);
        }
    }

    fn hand_buffer(rewards: &[f64], terminal_at_end: bool) -> RolloutBuffer {
        let n = rewards.len();
        let mut buf = RolloutBuffer::default();
        for (i, &r) in rewards.iter().enumerate() {
            buf.states.push(vec![0.0]);
            buf.actions.push(vec![0.0]);
            buf.log_probs.push(0.0);
            buf.rewards.push(r);
            buf.raw_rewards.push(r);
            buf.values.push(0.0);
            buf.next_values.push(0.0);
            buf.terminals.push(terminal_at_end && i == n - 1);
            buf.ends.push(i == n - 1);
        }
        buf
    }

    #[test]
    fn gae_hand_case() {
        let cfg = PpoConfig {
            gamma: 1.0,
            lam: 1.0,
            ..Default::default()
        };
        let buf = hand_buffer(&[1.0, 1.0], true);
        let raw = gae_raw(&buf, &cfg);
        assert_eq!(raw, vec![2.0, 1.0]);
    }

    #[test]
    fn gae_zero_rewards_zero_values() {
        let cfg = PpoConfig::default();
        let buf = hand_buffer(&[0.0, 0.0, 0.0], true);
        let raw = gae_raw(&buf, &cfg);
        assert!(raw.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn gae_single_step_episode() {
        let cfg = PpoConfig::default();
        let mut buf = hand_buffer(&[0.7], true);
        buf.values[0] = 0.2;
        let raw = gae_raw(&buf, &cfg);
        assert!((raw[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn advantage_normalization_is_tight() {
        let cfg = PpoConfig::default();
        let mut buf = hand_buffer(&[0.0; 64], false);
        let mut rng = rng_stream(13, 0);
        for i in 0..64 {
            buf.rewards[i] = rng.random_range(-2.0..2.0);
            buf.values[i] = rng.random_range(-1.0..1.0);
            buf.next_values[i] = rng.random_range(-1.0..1.0);
            buf.ends[i] = i % 16 == 15;
        }
        let (adv, returns) = gae_advantages(&buf, &cfg);
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-8, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-6, "std {}", var.sqrt());
        assert_eq!(returns.len(), adv.len());
    }

    #[test]
    fn clip_arithmetic() {
        let eps = 0.2f64;
        let ratio = 2.0f64;
        let a = 1.0f64;
        let surr = (ratio * a).min(ratio.clamp(1.0 - eps, 1.0 + eps) * a);
        assert!((surr - 1.2).abs() < 1e-15);
    }

    /// At ratio == 1 the surrogate gradient reduces to the vanilla policy
    /// gradient of A log pi.
    #[test]
    fn surrogate_gradient_at_unity_ratio() {
        let mut rng = rng_stream(21, 0);
        let policy = GaussianPolicy::new(2, &[4], &[-2.0], &[2.0], -0.3, &mut rng).unwrap();
        let s = [0.4, -0.6];
        let mut srng = rng_stream(22, 0);
        let (a, lp_old) = sample_action(&policy, &s, &mut srng).unwrap();
        let adv = 0.8;
        // analytic surrogate gradient at theta_0 (ratio = 1, unclipped):
        // adv * d log pi / d theta
        let trace = policy.mean.forward_trace(&s).unwrap();
        let mu = trace.output().to_vec();
        let mut grads = MlpGrads::zeros_like(&policy.mean);
        let mut upstream = vec![0.0; 1];
        upstream[0] = (a[0] - mu[0]) * (-2.0 * policy.log_std[0]).exp();
        policy.mean.backward_into(&trace, &upstream, adv, &mut grads);
        // finite differences of the full clipped surrogate
        let h = 1e-6;
        for layer in 0..policy.mean.num_layers() {
            for idx in 0..policy.mean.weights()[layer].data().len() {
                let surr = |p: &GaussianPolicy| -> f64 {
                    let lp = p.log_prob(&s, &a).unwrap();
                    let ratio = (lp - lp_old).exp();
                    (ratio * adv).min(ratio.clamp(0.8, 1.2) * adv)
                };
                let mut plus = policy.clone();
                plus.mean.weights_mut()[layer].data_mut()[idx] += h;
                let mut minus = policy.clone();
                minus.mean.weights_mut()[layer].data_mut()[idx] -= h;
                let fd = (surr(&plus) - surr(&minus)) / (2.0 * h);
                let an = grads.weights[layer].data()[idx];
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!((fd - an).abs() / denom < 1e-3, "fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn zero_advantages_leave_policy_unchanged() {
        let env = make_env("car").unwrap();
        let spec = env.spec();
        let mut learner = PpoLearner::new(
            spec.residual_dim,
            &spec.action_low,
            &spec.action_high,
            PpoConfig {
                epochs: 2,
                ..Default::default()
            },
            7,
        )
        .unwrap();
        let mut rng = rng_stream(30, 0);
        let mut norm = RunningStd::default();
        let (buf, _) = collect_rollout(
            env.as_ref(),
            &learner.policy,
            &learner.valuefn,
            &TaskReward,
            256,
            0.99,
            &mut rng,
            &mut norm,
        )
        .unwrap();
        let before = learner.policy.clone();
        let adv = vec![0.0; buf.len()];
        let returns: Vec<f64> = buf.values.clone();
        let mut urng = rng_stream(31, 0);
        learner.update(&buf, &adv, &returns, &mut urng).unwrap();
        assert_eq!(learner.policy.mean, before.mean);
        assert_eq!(learner.policy.log_std, before.log_std);
    }

    #[test]
    fn stored_log_probs_recompute_exactly() {
        let env = make_env("car").unwrap();
        let spec = env.spec();
        let learner = PpoLearner::new(
            spec.residual_dim,
            &spec.action_low,
            &spec.action_high,
            PpoConfig::default(),
            8,
        )
        .unwrap();
        let mut rng = rng_stream(33, 0);
        let mut norm = RunningStd::default();
        let (buf, _) = collect_rollout(
            env.as_ref(),
            &learner.policy,
            &learner.valuefn,
            &TaskReward,
            300,
            0.99,
            &mut rng,
            &mut norm,
        )
        .unwrap();
        for i in 0..buf.len() {
            let re = learner.policy.log_prob(&buf.states[i], &buf.actions[i]).unwrap();
            assert!((re - buf.log_probs[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn eval_is_deterministic() {
        let env = make_env("car").unwrap();
        let spec = env.spec();
        let learner = PpoLearner::new(
            spec.residual_dim,
            &spec.action_low,
            &spec.action_high,
            PpoConfig::default(),
            9,
        )
        .unwrap();
        let a = evaluate_policy(env.as_ref(), &learner.policy, 3, EVAL_SEED_BASE).unwrap();
        let b = evaluate_policy(env.as_ref(), &learner.policy, 3, EVAL_SEED_BASE).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_iterations_returns_initial_policy() {
        let env = make_env("car").unwrap();
        let (learner, records) =
            train_policy(env.as_ref(), &TaskReward, &PpoConfig::default(), 0, 11).unwrap();
        assert!(records.is_empty());
        let spec = env.spec();
        let fresh = PpoLearner::new(
            spec.residual_dim,
            &spec.action_low,
            &spec.action_high,
            PpoConfig::default(),
            11,
        )
        .unwrap();
        assert_eq!(learner.policy.mean, fresh.policy.mean);
    }

    #[test]
    fn train_policy_record_count_and_progress() {
        let env = make_env("car").unwrap();
        let cfg = PpoConfig {
            steps_per_iter: 512,
            epochs: 3,
            ..Default::default()
        };
        let (_, records) = train_policy(env.as_ref(), &TaskReward, &cfg, 3, 12).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].env_steps, 512);
        assert_eq!(records[2].env_steps, 1536);
        assert!(records.iter().all(|r| r.mean_eval_return.is_finite()));
    }

    #[test]
    fn running_std_matches_batch_std() {
        let mut rs = RunningStd::default();
        let xs = [1.0, 2.0, 3.0, 4.0, 10.0];
        for &x in &xs {
            rs.update(x);
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
        assert!((rs.std() - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn config_validation_bounds() {
        assert!(PpoConfig::default().validate().is_ok());
        assert!(PpoConfig { clip_eps: 0.0, ..Default::default() }.validate().is_err());
        assert!(PpoConfig { gamma: 1.5, ..Default::default() }.validate().is_err());
        assert!(PpoConfig { lam: -0.1, ..Default::default() }.validate().is_err());
    }
}
