//! Adversarial imitation from observation. A discriminator learns to
//! separate expert state transitions (s, s') from the learner's, and the
//! learner is rewarded for transitions the discriminator mistakes for
//! expert ones. Shares the PPO machinery and learning-curve schema with
//! the landscape-reward pipeline so runs compare head to head.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Env;
use crate::error::{Error, Result};
use crate::expert::TransitionBatch;
use crate::numkit::{rng_stream, AdamState, Mlp, MlpGrads};
use crate::policyopt::{
    collect_rollout, evaluate_policy, gae_advantages, IterRecord, PpoConfig, PpoLearner, RewardFn,
    EVAL_EPISODES, EVAL_SEED_BASE,
};

/// Discriminator outputs are squashed to probabilities and clamped this far
/// from 0 and 1, keeping every log term finite.
pub const PROB_EPS: f64 = 1e-6;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Binary classifier over concatenated transition pairs (s, s'): input
/// dimension twice the residual state dimension, scalar logit output.
pub struct Discriminator {
    pub net: Mlp,
}

impl Discriminator {
    pub fn new(state_dim: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::Config("discriminator state_dim must be positive".into()));
        }
        let mut sizes = vec![2 * state_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Discriminator {
            net: Mlp::new(&sizes, rng)?,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim() / 2
    }

    /// Raw network output for the transition (s, s2).
    pub fn logit(&self, s: &[f64], s2: &[f64]) -> Result<f64> {
        let mut x = Vec::with_capacity(s.len() + s2.len());
        x.extend_from_slice(s);
        x.extend_from_slice(s2);
        Ok(self.net.forward(&x)?[0])
    }

    /// Clamped probability that (s, s2) is an expert transition.
    pub fn prob(&self, s: &[f64], s2: &[f64]) -> Result<f64> {
        Ok(clamp_prob(sigmoid(self.logit(s, s2)?)))
    }
}

/// Negated two-player objective, minimized by the discriminator:
/// -mean log D(expert) - mean log(1 - D(agent)).
pub fn disc_loss(
    d: &Discriminator,
    expert: &TransitionBatch,
    agent: &TransitionBatch,
) -> Result<f64> {
    if expert.is_empty() || agent.is_empty() {
        return Err(Error::Dataset("discriminator loss needs non-empty batches".into()));
    }
    let mut log_e = 0.0;
    for (s, s2) in expert.s.iter().zip(&expert.s_next) {
        log_e += d.prob(s, s2)?.ln();
    }
    let mut log_a = 0.0;
    for (s, s2) in agent.s.iter().zip(&agent.s_next) {
        log_a += (1.0 - d.prob(s, s2)?).ln();
    }
    Ok(-log_e / expert.len() as f64 - log_a / agent.len() as f64)
}

/// How a discriminator probability becomes a per-step reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaifoRewardForm {
    /// -log(1 - D): always positive, saturating survivor-style bonus.
    NegLogOneMinusD,
    /// log D - log(1 - D): the raw logit, symmetric around zero.
    LogOdds,
}

pub fn reward_from_prob(p: f64, form: GaifoRewardForm) -> f64 {
    let p = clamp_prob(p);
    match form {
        GaifoRewardForm::NegLogOneMinusD => -(1.0 - p).ln(),
        GaifoRewardForm::LogOdds => p.ln() - (1.0 - p).ln(),
    }
}

/// Default-form reward -log(1 - D(s, s2)): higher where the discriminator
/// believes the transition is expert-like.
pub fn gaifo_reward(d: &Discriminator, s: &[f64], s2: &[f64]) -> Result<f64> {
    Ok(reward_from_prob(d.prob(s, s2)?, GaifoRewardForm::NegLogOneMinusD))
}

/// Rollout reward source backed by a discriminator snapshot.
pub struct GaifoReward<'a> {
    pub disc: &'a Discriminator,
    pub form: GaifoRewardForm,
}

impl RewardFn for GaifoReward<'_> {
    fn eval(
        &self,
        _env: &dyn Env,
        _x: &[f64],
        _u: &[f64],
        _x2: &[f64],
        s: &[f64],
        s2: &[f64],
    ) -> Result<(f64, bool)> {
        Ok((reward_from_prob(self.disc.prob(s, s2)?, self.form), false))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaifoConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Discriminator passes over the data per PPO iteration; zero freezes
    /// the discriminator.
    pub disc_epochs: usize,
    /// Transitions per class in each discriminator minibatch.
    pub disc_batch: usize,
    pub reward_form: GaifoRewardForm,
}

impl Default for GaifoConfig {
    fn default() -> Self {
        GaifoConfig {
            hidden: vec![32, 32],
            lr: 3e-4,
            disc_epochs: 1,
            disc_batch: 64,
            reward_form: GaifoRewardForm::NegLogOneMinusD,
        }
    }
}

impl GaifoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("gaifo lr must be positive, got {}", self.lr)));
        }
        if self.disc_batch == 0 {
            return Err(Error::Config("gaifo disc_batch must be positive".into()));
        }
        Ok(())
    }
}

/// One balanced pass over the larger class: shuffles both sides, pairs
/// equal-size minibatches (cycling the smaller class, typically the fixed
/// expert set) and applies one Adam step per pair. Returns the mean
/// minibatch loss. Gradients use the exact logistic form sigma(z) - label,
/// which stays bounded without the probability clamp.
pub fn discriminator_epoch(
    d: &mut Discriminator,
    adam: &mut AdamState,
    expert: &TransitionBatch,
    agent_s: &[Vec<f64>],
    agent_s2: &[Vec<f64>],
    cfg: &GaifoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if expert.is_empty() || agent_s.is_empty() {
        return Err(Error::Dataset("discriminator epoch needs non-empty classes".into()));
    }
    if agent_s.len() != agent_s2.len() {
        return Err(Error::Shape(format!(
            "agent transition arrays disagree: {} vs {}",
            agent_s.len(),
            agent_s2.len()
        )));
    }
    let mut idx_e: Vec<usize> = (0..expert.len()).collect();
    let mut idx_a: Vec<usize> = (0..agent_s.len()).collect();
    idx_e.shuffle(rng);
    idx_a.shuffle(rng);
    let pairs = idx_e.len().max(idx_a.len());
    let batches = pairs.div_ceil(cfg.disc_batch);
    let mut grads = MlpGrads::zeros_like(&d.net);
    let mut input = vec![0.0; d.net.input_dim()];
    let mut loss_sum = 0.0;
    for b in 0..batches {
        let lo = b * cfg.disc_batch;
        let hi = (lo + cfg.disc_batch).min(pairs);
        grads.reset();
        let mut loss = 0.0;
        let mb = (hi - lo) as f64;
        for label in [1.0, 0.0] {
            for slot in lo..hi {
                let (s, s2) = if label == 1.0 {
                    let i = idx_e[slot % idx_e.len()];
                    (&expert.s[i], &expert.s_next[i])
                } else {
                    let i = idx_a[slot % idx_a.len()];
                    (&agent_s[i], &agent_s2[i])
                };
                input[..s.len()].copy_from_slice(s);
                input[s.len()..].copy_from_slice(s2);
                let trace = d.net.forward_trace(&input)?;
                let p = sigmoid(trace.output()[0]);
                let pc = clamp_prob(p);
                loss += if label == 1.0 { -pc.ln() } else { -(1.0 - pc).ln() };
                d.net.backward_into(&trace, &[1.0], (p - label) / mb, &mut grads);
            }
        }
        adam.step(&mut d.net, &grads, cfg.lr)?;
        loss_sum += loss / mb;
    }
    Ok(loss_sum / batches as f64)
}

/// Fraction of correctly classified transitions at threshold 0.5, classes
/// weighted equally.
pub fn disc_accuracy(
    d: &Discriminator,
    expert: &TransitionBatch,
    agent_s: &[Vec<f64>],
    agent_s2: &[Vec<f64>],
) -> Result<f64> {
    let mut hit_e = 0usize;
    for (s, s2) in expert.s.iter().zip(&expert.s_next) {
        if d.prob(s, s2)? > 0.5 {
            hit_e += 1;
        }
    }
    let mut hit_a = 0usize;
    for (s, s2) in agent_s.iter().zip(agent_s2) {
        if d.prob(s, s2)? < 0.5 {
            hit_a += 1;
        }
    }
    Ok(0.5 * hit_e as f64 / expert.len() as f64 + 0.5 * hit_a as f64 / agent_s.len() as f64)
}

/// Alternating loop: collect rollouts rewarded by the current
/// discriminator, refresh the discriminator on expert-vs-rollout
/// transitions, then apply the usual PPO update. Records share the
/// landscape pipeline's schema column for column.
pub fn train_gaifo(
    env: &dyn Env,
    expert: &TransitionBatch,
    ppo: &PpoConfig,
    gcfg: &GaifoConfig,
    iterations: usize,
    seed: u64,
) -> Result<(PpoLearner, Discriminator, Vec<IterRecord>)> {
    gcfg.validate()?;
    let spec = env.spec();
    if expert.is_empty() {
        return Err(Error::Dataset("gaifo needs a non-empty expert batch".into()));
    }
    if expert.state_dim() != spec.residual_dim {
        return Err(Error::Shape(format!(
            "expert state dim {} does not match env residual dim {}",
            expert.state_dim(),
            spec.residual_dim
        )));
    }
    let mut learner = PpoLearner::new(
        spec.residual_dim,
        &spec.action_low,
        &spec.action_high,
        ppo.clone(),
        seed,
    )?;
    let mut disc = Discriminator::new(spec.residual_dim, &gcfg.hidden, &mut rng_stream(seed, 3))?;
    let mut disc_adam = AdamState::new(&disc.net);
    let mut rollout_rng = rng_stream(seed, 4);
    let mut update_rng = rng_stream(seed, 5);
    let mut disc_rng = rng_stream(seed, 6);
    let mut records = Vec::with_capacity(iterations);
    let mut env_steps = 0u64;
    for iteration in 1..=iterations {
        let reward = GaifoReward {
            disc: &disc,
            form: gcfg.reward_form,
        };
        let (buf, meta) = collect_rollout(
            env,
            &learner.policy,
            &learner.valuefn,
            &reward,
            ppo.steps_per_iter,
            ppo.gamma,
            &mut rollout_rng,
            &mut learner.reward_norm,
        )?;
        env_steps += buf.len() as u64;
        for _ in 0..gcfg.disc_epochs {
            discriminator_epoch(
                &mut disc,
                &mut disc_adam,
                expert,
                &buf.states,
                &buf.next_states,
                gcfg,
                &mut disc_rng,
            )?;
        }
        let (adv, returns) = gae_advantages(&buf, ppo);
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
    Ok((learner, disc, records))
}
