//! Experiment orchestration: dataset plumbing, method dispatch, seed
//! management, score normalization, and the on-disk artifact layout shared
//! by every method (learning-curve CSV, checkpoints, summary JSON). Cells
//! are addressed as out/<env>/<method>/<n_traj>/<seed>/.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{env_reset, env_step, make_env, Env};
use crate::error::{Error, Result};
use crate::expert::{collect_trajectories, load_dataset, ExpertController, Trajectory};
use crate::expert::TransitionBatch;
use crate::gaifo::{train_gaifo, GaifoConfig};
use crate::lyapunov::{
    quadratic_proxy, save_proxy, train_proxy, Landscape, ProxyObjective, ProxyTrainConfig,
};
use crate::numkit::{rng_stream, Mlp};
use crate::policyopt::{
    train_policy, GaussianPolicy, IterRecord, LandscapeReward, PpoConfig, RewardFn, TaskReward,
    EVAL_SEED_BASE,
};
use crate::reward::RewardConfig;

pub const SUMMARY_FORMAT: &str = "lyapstab-summary-v1";
pub const POLICY_FORMAT: &str = "lyapstab-policy-v1";
/// Episodes per policy-free baseline estimate.
pub const BASELINE_EPISODES: usize = 10;

/// Training method for one experiment cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Learned landscape reward from state-only demonstrations.
    LsoLlpm,
    /// Adversarial state-transition discriminator reward.
    Gaifo,
    /// Fixed diagonal quadratic landscape reward.
    Quadratic,
    /// Landscape trained with the sign-only descent loss.
    LyapRisk,
    /// Ground-truth task reward; upper-bound reference.
    OracleRl,
}

pub const ALL_METHODS: [Method; 5] = [
    Method::LsoLlpm,
    Method::Gaifo,
    Method::Quadratic,
    Method::LyapRisk,
    Method::OracleRl,
];

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::LsoLlpm => "lso-llpm",
            Method::Gaifo => "gaifo",
            Method::Quadratic => "quadratic",
            Method::LyapRisk => "lyap-risk",
            Method::OracleRl => "oracle-rl",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_METHODS
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method '{s}', expected one of lso-llpm, gaifo, quadratic, lyap-risk, oracle-rl"
                ))
            })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_n_trajectories() -> usize {
    10
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_iterations() -> usize {
    300
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_sweep_counts() -> Vec<usize> {
    vec![10, 14, 18]
}

/// One experiment specification; the CLI reads this as a single JSON
/// document and flags override individual fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: String,
    pub method: Method,
    /// Existing JSONL dataset to draw demonstrations from; when absent the
    /// scripted expert generates them on the fly.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_n_trajectories")]
    pub n_trajectories: usize,
    /// Seed for demonstration generation and subsetting, shared across
    /// policy seeds so every seed trains against the same data.
    #[serde(default)]
    pub dataset_seed: u64,
    #[serde(default)]
    pub proxy: ProxyTrainConfig,
    /// Reward shaping; falls back to the environment default when absent.
    #[serde(default)]
    pub reward: Option<RewardConfig>,
    #[serde(default)]
    pub gaifo: GaifoConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    /// Positive diagonal weights for the quadratic-landscape baseline.
    #[serde(default)]
    pub quadratic_weights: Option<Vec<f64>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_sweep_counts")]
    pub sweep_counts: Vec<usize>,
}

impl ExperimentConfig {
    /// Baseline skeleton for an environment; callers override fields.
    pub fn for_env(env: &str, method: Method) -> Self {
        ExperimentConfig {
            env: env.to_string(),
            method,
            dataset: None,
            n_trajectories: default_n_trajectories(),
            dataset_seed: 0,
            proxy: ProxyTrainConfig::default(),
            reward: None,
            gaifo: GaifoConfig::default(),
            ppo: PpoConfig::default(),
            quadratic_weights: None,
            seeds: default_seeds(),
            iterations: default_iterations(),
            out: default_out(),
            sweep_counts: default_sweep_counts(),
        }
    }

    pub fn effective_reward(&self) -> RewardConfig {
        self.reward
            .clone()
            .unwrap_or_else(|| RewardConfig::default_for(&self.env))
    }

    pub fn validate(&self) -> Result<()> {
        make_env(&self.env)?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if self.n_trajectories == 0 {
            return Err(Error::Config("n_trajectories must be >= 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        self.proxy.validate()?;
        self.ppo.validate()?;
        self.gaifo.validate()?;
        self.effective_reward().validate()?;
        if self.method == Method::Quadratic {
            let w = self
                .quadratic_weights
                .as_ref()
                .ok_or_else(|| Error::Config("method quadratic requires quadratic_weights".into()))?;
            quadratic_proxy(w)?;
        }
        Ok(())
    }

    /// Twelve hex characters of SHA-256 over the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let body = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(body.as_bytes());
        let mut hex = String::with_capacity(12);
        for b in digest.iter().take(6) {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

/// The Fig.-2-style metric: 0 at the random policy's return, 1 at the
/// expert's.
pub fn normalized_score(r: f64, r_random: f64, r_expert: f64) -> Result<f64> {
    let den = r_expert - r_random;
    if !den.is_finite() || den.abs() < 1e-9 {
        return Err(Error::Metric(format!(
            "degenerate score normalization: expert {r_expert} vs random {r_random}"
        )));
    }
    Ok((r - r_random) / den)
}

/// Mean deterministic-expert return over fixed evaluation episodes, run to
/// the horizon like every policy evaluation.
pub fn expert_eval_return(env: &dyn Env, episodes: usize) -> Result<f64> {
    let ctrl = ExpertController::for_env(env)?;
    let mut total = 0.0;
    for ep in 0..episodes {
        let mut state = env_reset(env, EVAL_SEED_BASE + ep as u64);
        loop {
            let u = env.spec().clamp_action(&ctrl.action(env, &state.x)?);
            let out = env_step(env, &state, &u)?;
            total += env.task_reward(&state.x, &u);
            if out.truncated {
                break;
            }
            state = out.state;
        }
    }
    Ok(total / episodes as f64)
}

/// Mean return of uniform random actions over the same episodes.
pub fn random_eval_return(env: &dyn Env, episodes: usize, action_seed: u64) -> Result<f64> {
    let spec = env.spec();
    let mut total = 0.0;
    for ep in 0..episodes {
        let mut rng = rng_stream(action_seed, 0xba5e + ep as u64);
        let mut state = env_reset(env, EVAL_SEED_BASE + ep as u64);
        loop {
            let u: Vec<f64> = spec
                .action_low
                .iter()
                .zip(&spec.action_high)
                .map(|(&lo, &hi)| rng.random_range(lo..hi))
                .collect();
            let out = env_step(env, &state, &u)?;
            total += env.task_reward(&state.x, &u);
            if out.truncated {
                break;
            }
            state = out.state;
        }
    }
    Ok(total / episodes as f64)
}

/// Score anchors for one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub env: String,
    pub episodes: usize,
    pub r_random: f64,
    pub r_expert: f64,
}

/// Random and expert returns, cached at out/<env>/baselines.json. A cache
/// hit returns the stored pair without re-simulation; a mismatched episode
/// count invalidates the cache.
pub fn estimate_baselines(env: &dyn Env, episodes: usize, out_dir: &Path) -> Result<Baselines> {
    if episodes == 0 {
        return Err(Error::Config("baseline estimate needs episodes >= 1".into()));
    }
    let name = env.spec().name.clone();
    let cache = out_dir.join(&name).join("baselines.json");
    if let Ok(body) = fs::read_to_string(&cache) {
        let stored: Baselines = serde_json::from_str(&body).map_err(|e| Error::Parse {
            line: e.line(),
            msg: format!("baseline cache {}: {e}", cache.display()),
        })?;
        if stored.env == name && stored.episodes == episodes {
            return Ok(stored);
        }
    }
    let r_expert = expert_eval_return(env, episodes)?;
    let r_random = random_eval_return(env, episodes, 0x5eed_ba5e)?;
    if r_expert <= r_random {
        return Err(Error::Metric(format!(
            "expert return {r_expert} does not beat random {r_random} in {name}; baselines unusable"
        )));
    }
    let base = Baselines {
        env: name,
        episodes,
        r_random,
        r_expert,
    };
    if let Some(parent) = cache.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    let body = serde_json::to_string_pretty(&base)
        .map_err(|e| Error::Config(format!("serialize baselines: {e}")))?;
    fs::write(&cache, body).map_err(|e| Error::io(cache.display().to_string(), e))?;
    Ok(base)
}

/// Policy network checkpoint with its action-space context.
#[derive(Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub env: String,
    pub mean: Mlp,
    pub log_std: Vec<f64>,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
}

pub fn save_policy(policy: &GaussianPolicy, env: &str, path: &Path) -> Result<()> {
    let ckpt = PolicyCheckpoint {
        format: POLICY_FORMAT.to_string(),
        env: env.to_string(),
        mean: policy.mean.clone(),
        log_std: policy.log_std.clone(),
        action_low: policy.action_low.clone(),
        action_high: policy.action_high.clone(),
    };
    let body = serde_json::to_string(&ckpt)
        .map_err(|e| Error::Config(format!("serialize policy: {e}")))?;
    fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_policy(path: &Path) -> Result<PolicyCheckpoint> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let ckpt: PolicyCheckpoint = serde_json::from_str(&body).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    if ckpt.format != POLICY_FORMAT {
        return Err(Error::Config(format!("unknown policy format '{}'", ckpt.format)));
    }
    Ok(ckpt)
}

impl PolicyCheckpoint {
    pub fn into_policy(self) -> GaussianPolicy {
        GaussianPolicy {
            mean: self.mean,
            log_std: self.log_std,
            action_low: self.action_low,
            action_high: self.action_high,
        }
    }
}

/// Deterministic per-cell summary; rerunning a cell with the same config
/// and seed reproduces this file byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub format: String,
    pub config_hash: String,
    pub env: String,
    pub method: Method,
    pub n_trajectories: usize,
    pub seed: u64,
    pub iterations: usize,
    pub env_steps: u64,
    pub r_random: f64,
    pub r_expert: f64,
    /// Evaluation return at the final iteration.
    pub final_eval_return: f64,
    /// Mean evaluation return over the last five iterations.
    pub final_return_mean5: f64,
    /// Normalized final_return_mean5.
    pub final_score: f64,
    /// Score fell outside [-0.5, 1.5].
    pub score_flagged: bool,
    pub out_of_landscape_total: u64,
}

/// Artifacts and records from one (env, method, n_traj, seed) cell.
pub struct RunOutcome {
    pub summary: RunSummary,
    pub records: Vec<IterRecord>,
    pub dir: PathBuf,
}

fn subset_trajectories(
    mut trajs: Vec<Trajectory>,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if trajs.len() < n {
        return Err(Error::Dataset(format!(
            "dataset holds {} trajectories, {n} requested",
            trajs.len()
        )));
    }
    if trajs.len() == n {
        return Ok(trajs);
    }
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..trajs.len()).collect();
    idx.shuffle(&mut rng_stream(seed, 0xda7a));
    let mut keep: Vec<usize> = idx.into_iter().take(n).collect();
    keep.sort_unstable();
    let mut out = Vec::with_capacity(n);
    // drain from the back so indices stay valid
    for &i in keep.iter().rev() {
        out.push(trajs.swap_remove(i));
    }
    out.reverse();
    Ok(out)
}

fn resolve_dataset(cfg: &ExperimentConfig, env: &dyn Env, n_traj: usize) -> Result<Vec<Trajectory>> {
    let trajs = match &cfg.dataset {
        Some(path) => {
            let all = load_dataset(path)?;
            for t in &all {
                if t.env != cfg.env {
                    return Err(Error::Dataset(format!(
                        "dataset {} holds '{}' trajectories, config expects '{}'",
                        path.display(),
                        t.env,
                        cfg.env
                    )));
                }
            }
            subset_trajectories(all, n_traj, cfg.dataset_seed)?
        }
        None => collect_trajectories(env, n_traj, 0, cfg.dataset_seed)?,
    };
    Ok(trajs)
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_curve_csv(
    path: &Path,
    summary: &RunSummary,
    records: &[IterRecord],
    base: &Baselines,
) -> Result<()> {
    let mut body = String::from(
        "method,env,n_traj,seed,config_hash,iteration,env_steps,mean_eval_return,normalized_score,policy_loss,value_loss,kl,clip_frac,mean_rollout_return,episodes,out_of_landscape\r\n",
    );
    for r in records {
        let score = normalized_score(r.mean_eval_return, base.r_random, base.r_expert)?;
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\r\n",
            csv_field(summary.method.as_str()),
            csv_field(&summary.env),
            summary.n_trajectories,
            summary.seed,
            summary.config_hash,
            r.iteration,
            r.env_steps,
            r.mean_eval_return,
            score,
            r.policy_loss,
            r.value_loss,
            r.kl,
            r.clip_frac,
            r.mean_rollout_return,
            r.episodes,
            r.out_of_landscape,
        ));
    }
    fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Runs one cell end to end: resolve demonstrations, build the method's
/// reward source, train the policy, and write curve.csv, checkpoints,
/// config snapshot, and summary.json under the cell directory. Stage
/// failures carry the stage name; artifacts written before a failure are
/// kept.
pub fn run_single(cfg: &ExperimentConfig, n_traj: usize, seed: u64) -> Result<RunOutcome> {
    cfg.validate()?;
    let env = make_env(&cfg.env)?;
    let hash = cfg.config_hash();
    let dir = cfg
        .out
        .join(&cfg.env)
        .join(cfg.method.as_str())
        .join(n_traj.to_string())
        .join(seed.to_string());
    fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let snapshot = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("serialize config: {e}")))?;
    let config_path = dir.join("config.json");
    fs::write(&config_path, snapshot).map_err(|e| Error::io(config_path.display().to_string(), e))?;

    let base = estimate_baselines(env.as_ref(), BASELINE_EPISODES, &cfg.out)
        .map_err(|e| e.in_stage("baselines"))?;

    let needs_data = cfg.method != Method::OracleRl;
    let trajs = if needs_data {
        resolve_dataset(cfg, env.as_ref(), n_traj).map_err(|e| e.in_stage("dataset"))?
    } else {
        Vec::new()
    };

    let reward_cfg = cfg.effective_reward();
    let mut out_of_landscape_total = 0u64;
    let records: Vec<IterRecord>;
    let policy;
    match cfg.method {
        Method::OracleRl => {
            let (learner, recs) =
                train_policy(env.as_ref(), &TaskReward, &cfg.ppo, cfg.iterations, seed)
                    .map_err(|e| e.in_stage("policy"))?;
            policy = learner.policy;
            records = recs;
        }
        Method::Gaifo => {
            let batch =
                TransitionBatch::from_trajectories(&trajs).map_err(|e| e.in_stage("dataset"))?;
            let (learner, disc, recs) = train_gaifo(
                env.as_ref(),
                &batch,
                &cfg.ppo,
                &cfg.gaifo,
                cfg.iterations,
                seed,
            )
            .map_err(|e| e.in_stage("policy"))?;
            disc.net
                .save_checkpoint(&dir.join("disc.json"))
                .map_err(|e| e.in_stage("artifacts"))?;
            policy = learner.policy;
            records = recs;
        }
        Method::Quadratic => {
            let weights = cfg.quadratic_weights.clone().unwrap_or_default();
            let quad = quadratic_proxy(&weights).map_err(|e| e.in_stage("proxy"))?;
            if quad.weights.len() != env.spec().residual_dim {
                return Err(Error::Config(format!(
                    "quadratic_weights dim {} does not match residual dim {}",
                    quad.weights.len(),
                    env.spec().residual_dim
                ))
                .in_stage("proxy"));
            }
            let quad_path = dir.join("proxy.json");
            let body = serde_json::to_string_pretty(&quad)
                .map_err(|e| Error::Config(format!("serialize quadratic proxy: {e}")))?;
            fs::write(&quad_path, body)
                .map_err(|e| Error::io(quad_path.display().to_string(), e))
                .map_err(|e| e.in_stage("artifacts"))?;
            let landscape = Landscape::Quadratic(quad);
            let reward = LandscapeReward {
                v: &landscape,
                cfg: reward_cfg.clone(),
            };
            let (learner, recs) =
                train_policy(env.as_ref(), &reward, &cfg.ppo, cfg.iterations, seed)
                    .map_err(|e| e.in_stage("policy"))?;
            policy = learner.policy;
            records = recs;
        }
        Method::LsoLlpm | Method::LyapRisk => {
            let mut pcfg = cfg.proxy.clone();
            if cfg.method == Method::LyapRisk {
                pcfg.objective = ProxyObjective::SignOnly;
            }
            let (model, report) =
                train_proxy(&trajs, &pcfg).map_err(|e| e.in_stage("proxy"))?;
            save_proxy(&model, Some(&report), &dir.join("proxy.json"))
                .map_err(|e| e.in_stage("artifacts"))?;
            let landscape = Landscape::Learned(model);
            let reward = LandscapeReward {
                v: &landscape,
                cfg: reward_cfg.clone(),
            };
            let (learner, recs) =
                train_policy(env.as_ref(), &reward, &cfg.ppo, cfg.iterations, seed)
                    .map_err(|e| e.in_stage("policy"))?;
            policy = learner.policy;
            records = recs;
        }
    }

    for r in &records {
        out_of_landscape_total += r.out_of_landscape;
    }
    let last = records
        .last()
        .ok_or_else(|| Error::Training("no iterations recorded".into()).in_stage("policy"))?;
    let tail = &records[records.len().saturating_sub(5)..];
    let mean5 = tail.iter().map(|r| r.mean_eval_return).sum::<f64>() / tail.len() as f64;
    let final_score = normalized_score(mean5, base.r_random, base.r_expert)
        .map_err(|e| e.in_stage("artifacts"))?;
    let summary = RunSummary {
        format: SUMMARY_FORMAT.to_string(),
        config_hash: hash,
        env: cfg.env.clone(),
        method: cfg.method,
        n_trajectories: n_traj,
        seed,
        iterations: cfg.iterations,
        env_steps: last.env_steps,
        r_random: base.r_random,
        r_expert: base.r_expert,
        final_eval_return: last.mean_eval_return,
        final_return_mean5: mean5,
        final_score,
        score_flagged: !(-0.5..=1.5).contains(&final_score),
        out_of_landscape_total,
    };
    write_curve_csv(&dir.join("curve.csv"), &summary, &records, &base)
        .map_err(|e| e.in_stage("artifacts"))?;
    save_policy(&policy, &cfg.env, &dir.join("policy.json")).map_err(|e| e.in_stage("artifacts"))?;
    let summary_body = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(format!("serialize summary: {e}")))?;
    let summary_path = dir.join("summary.json");
    fs::write(&summary_path, summary_body)
        .map_err(|e| Error::io(summary_path.display().to_string(), e).in_stage("artifacts"))?;
    Ok(RunOutcome {
        summary,
        records,
        dir,
    })
}

/// Runs the configured cell for every seed in the config.
pub fn run_all_seeds(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>> {
    let mut out = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        out.push(run_single(cfg, cfg.n_trajectories, seed)?);
    }
    Ok(out)
}

/// One sweep row; failed cells keep their error text in `status`.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub method: Method,
    pub env: String,
    pub n_traj: usize,
    pub seed: u64,
    pub score: Option<f64>,
    pub status: String,
    pub config_hash: String,
}

/// Trajectory-count sweep: every count x seed cell runs end to end and
/// lands in out/sweep.csv as long-format rows. Failures become rows with a
/// status message and the sweep continues.
pub fn run_sweep(cfg: &ExperimentConfig, counts: &[usize]) -> Result<(PathBuf, Vec<SweepRow>)> {
    cfg.validate()?;
    if counts.is_empty() {
        return Err(Error::Config("sweep needs at least one trajectory count".into()));
    }
    for w in counts.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Config(format!(
                "sweep counts must be strictly ascending, got {counts:?}"
            )));
        }
    }
    if counts[0] == 0 {
        return Err(Error::Config("sweep counts must be >= 1".into()));
    }
    let hash = cfg.config_hash();
    let mut rows = Vec::new();
    for &n in counts {
        for &seed in &cfg.seeds {
            let row = match run_single(cfg, n, seed) {
                Ok(outcome) => SweepRow {
                    method: cfg.method,
                    env: cfg.env.clone(),
                    n_traj: n,
                    seed,
                    score: Some(outcome.summary.final_score),
                    status: "ok".into(),
                    config_hash: hash.clone(),
                },
                Err(e) => SweepRow {
                    method: cfg.method,
                    env: cfg.env.clone(),
                    n_traj: n,
                    seed,
                    score: None,
                    status: format!("failed: {e}"),
                    config_hash: hash.clone(),
                },
            };
            rows.push(row);
        }
    }
    let path = cfg.out.join("sweep.csv");
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(cfg.out.display().to_string(), e))?;
    let mut body = String::from("method,env,n_traj,seed,score,status,config_hash\r\n");
    for r in &rows {
        body.push_str(&format!(
            "{},{},{},{},{},{},{}\r\n",
            csv_field(r.method.as_str()),
            csv_field(&r.env),
            r.n_traj,
            r.seed,
            r.score.map(|s| s.to_string()).unwrap_or_default(),
            csv_field(&r.status),
            r.config_hash,
        ));
    }
    fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok((path, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(dir: &Path, method: Method) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::for_env("car", method);
        cfg.out = dir.to_path_buf();
        cfg.iterations = 2;
        cfg.seeds = vec![0];
        cfg.n_trajectories = 2;
        cfg.ppo.hidden = vec![8];
        cfg.ppo.steps_per_iter = 128;
        cfg.ppo.epochs = 2;
        cfg.ppo.minibatch = 64;
        cfg.proxy.epochs = 50;
        cfg.proxy.hidden = vec![8];
        cfg
    }

    #[test]
    fn score_anchors() {
        assert_eq!(normalized_score(-4.0, -10.0, -4.0).unwrap(), 1.0);
        assert_eq!(normalized_score(-10.0, -10.0, -4.0).unwrap(), 0.0);
        assert_eq!(normalized_score(-7.0, -10.0, -4.0).unwrap(), 0.5);
        assert!(normalized_score(1.0, 3.0, 3.0).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in ALL_METHODS {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("bco".parse::<Method>().is_err());
    }

    #[test]
    fn baseline_cache_hit_skips_simulation() {
        let tmp = tempfile::tempdir().unwrap();
        let env = make_env("car").unwrap();
        let first = estimate_baselines(env.as_ref(), 3, tmp.path()).unwrap();
        assert!(first.r_expert > first.r_random);
        let cache = tmp.path().join("car").join("baselines.json");
        let sentinel = Baselines {
            env: "car".into(),
            episodes: 3,
            r_random: -123.0,
            r_expert: -1.0,
        };
        fs::write(&cache, serde_json::to_string(&sentinel).unwrap()).unwrap();
        let second = estimate_baselines(env.as_ref(), 3, tmp.path()).unwrap();
        assert_eq!(second, sentinel);
        // different episode count invalidates the cache
        let third = estimate_baselines(env.as_ref(), 2, tmp.path()).unwrap();
        assert_ne!(third.r_random, sentinel.r_random);
    }

    #[test]
    fn expert_scores_one_through_the_pipeline() {
        let tmp = tempfile::tempdir().unwrap();
        let env = make_env("car").unwrap();
        let base = estimate_baselines(env.as_ref(), BASELINE_EPISODES, tmp.path()).unwrap();
        let re_eval = expert_eval_return(env.as_ref(), 7).unwrap();
        let score = normalized_score(re_eval, base.r_random, base.r_expert).unwrap();
        assert!((score - 1.0).abs() < 0.05, "expert self-score {score}");
    }

    #[test]
    fn quadratic_requires_weights() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(tmp.path(), Method::Quadratic);
        let err = run_single(&cfg, 2, 0).unwrap_err();
        assert!(format!("{err}").contains("quadratic_weights"));
    }

    #[test]
    fn oracle_cell_writes_artifacts_and_reruns_identically() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(tmp.path(), Method::OracleRl);
        let outcome = run_single(&cfg, 2, 0).unwrap();
        let dir = &outcome.dir;
        assert!(dir.join("config.json").exists());
        assert!(dir.join("policy.json").exists());
        let csv = fs::read_to_string(dir.join("curve.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + cfg.iterations);
        assert!(lines[0].starts_with("method,env,n_traj,seed,config_hash,iteration"));
        for line in &lines[1..] {
            assert!(line.starts_with(&format!("oracle-rl,car,2,0,{}", outcome.summary.config_hash)));
        }
        let first = fs::read(dir.join("summary.json")).unwrap();
        let again = run_single(&cfg, 2, 0).unwrap();
        let second = fs::read(again.dir.join("summary.json")).unwrap();
        assert_eq!(first, second);
        let ckpt = load_policy(&dir.join("policy.json")).unwrap();
        assert_eq!(ckpt.env, "car");
        let policy = ckpt.into_policy();
        assert_eq!(policy.action_dim(), 2);
    }

    #[test]
    fn landscape_cell_writes_proxy_checkpoint() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(tmp.path(), Method::LsoLlpm);
        let outcome = run_single(&cfg, 2, 0).unwrap();
        assert!(outcome.dir.join("proxy.json").exists());
        assert!(outcome.dir.join("proxy.meta.json").exists());
        assert!(outcome.summary.final_score.is_finite());
        let model = crate::lyapunov::load_proxy(&outcome.dir.join("proxy.json")).unwrap();
        assert_eq!(model.env, "car");
    }

    #[test]
    fn sweep_cardinality_and_failure_rows() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(tmp.path(), Method::OracleRl);
        cfg.seeds = vec![0, 1];
        let (path, rows) = run_sweep(&cfg, &[1, 2]).unwrap();
        assert_eq!(rows.len(), 4);
        let csv = fs::read_to_string(&path).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(rows.iter().all(|r| r.status == "ok"));
        assert!(rows.iter().all(|r| r.config_hash == cfg.config_hash()));
        assert!(run_sweep(&cfg, &[2, 2]).is_err());
        assert!(run_sweep(&cfg, &[]).is_err());
        // a dataset too small for the requested count fails that cell but
        // not the sweep
        let mut bad = tiny_cfg(tmp.path(), Method::LsoLlpm);
        bad.seeds = vec![0];
        bad.proxy.epochs = 5;
        let pool = tmp.path().join("pool.jsonl");
        let env = make_env("car").unwrap();
        let trajs = collect_trajectories(env.as_ref(), 2, 0, 0).unwrap();
        crate::expert::save_dataset(&trajs, &pool).unwrap();
        bad.dataset = Some(pool);
        let (_, rows) = run_sweep(&bad, &[2, 3]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].status, "ok");
        assert!(rows[1].status.starts_with("failed:"));
        assert!(rows[1].score.is_none());
    }

    #[test]
    fn config_hash_distinguishes_configs() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tiny_cfg(tmp.path(), Method::OracleRl);
        let mut b = a.clone();
        b.iterations = 3;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash(), a.clone().config_hash());
        assert_eq!(a.config_hash().len(), 12);
    }

    #[test]
    fn dataset_subsetting_is_deterministic() {
        let env = make_env("car").unwrap();
        let pool = collect_trajectories(env.as_ref(), 5, 0, 0).unwrap();
        let a = subset_trajectories(pool.clone(), 3, 7).unwrap();
        let b = subset_trajectories(pool.clone(), 3, 7).unwrap();
        let pick = |v: &[Trajectory]| v.iter().map(|t| t.seed).collect::<Vec<_>>();
        assert_eq!(pick(&a), pick(&b));
        let c = subset_trajectories(pool.clone(), 3, 8).unwrap();
        assert!(pick(&a) == pick(&c) || pick(&a) != pick(&c));
        assert!(subset_trajectories(pool, 9, 7).is_err());
    }
}
