//! Lockstep parallel rollouts and the PPO update loop.
//!
//! Every env owns its RNG and buffers, and the policy is evaluated over
//! fixed-size env chunks, so results do not depend on the worker count.

use super::{compute_gae, learning_rate, ppo_loss_and_grad, LossStats, Minibatch, PpoConfig};
use super::optim::{clip_grad_norm, Optimizer};
use crate::env::{prepare_clip, EnvConfig, ImitationEnv, RewardComponents};
use crate::model::MskModel;
use crate::motion::{resolve_clip, MotionClip};
use crate::policy::{GaussianPolicy, PolicyConfig};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

/// Envs per policy-evaluation chunk.
const CHUNK: usize = 16;

/// Full training run description (TOML or JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// bundled model name or model file
    pub model: String,
    /// `preset:<name>` or clip paths
    pub clips: Vec<String>,
    pub total_steps: u64,
    /// iterations between checkpoints (0: final only)
    pub checkpoint_every: usize,
    /// worker threads (MM_THREADS overrides; default all cores)
    pub threads: Option<usize>,
    pub ppo: PpoConfig,
    pub policy: PolicyConfig,
    /// reward / termination overrides; model defaults otherwise
    pub env: Option<EnvConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::arm2()
    }
}

impl TrainConfig {
    /// Desk-scale bimanual-style settings on the 2-joint arm.
    pub fn arm2() -> Self {
        Self {
            model: "arm2".into(),
            clips: vec!["preset:arm2_reach".into()],
            total_steps: 5_000_000,
            checkpoint_every: 0,
            threads: None,
            ppo: PpoConfig {
                rollout_steps: 50,
                schedule: super::Schedule::WarmupCosine,
                weight_decay: 0.001,
                ..PpoConfig::default()
            },
            policy: PolicyConfig { actor_widths: vec![64, 64], critic_widths: vec![64, 64], init_std: 0.2, ..PolicyConfig::default() },
            env: None,
        }
    }

    /// Desk-scale full-body settings on the planar walker.
    pub fn walker7() -> Self {
        Self {
            model: "walker7".into(),
            clips: vec!["preset:walker_gait".into()],
            total_steps: 20_000_000,
            checkpoint_every: 0,
            threads: None,
            ppo: PpoConfig::default(),
            policy: PolicyConfig { actor_widths: vec![128, 128], critic_widths: vec![128, 128], init_std: 3.0, ..PolicyConfig::default() },
            env: None,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        self.policy.validate()?;
        if self.clips.is_empty() {
            return Err(Error::Input("at least one clip is required".into()));
        }
        if let Some(e) = &self.env {
            e.validate()?;
        }
        Ok(())
    }

    pub fn n_iterations(&self) -> usize {
        (self.total_steps as usize).div_ceil(self.ppo.batch_size()).max(1)
    }
}

/// Worker count: MM_THREADS, then the config, then all cores.
pub fn resolve_threads(cfg: Option<usize>) -> usize {
    std::env::var("MM_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .or(cfg)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// One environment slot: an env per clip plus rollout buffers.
#[derive(Debug, Clone)]
struct Worker {
    envs: Vec<ImitationEnv>,
    active: usize,
    rng: ChaCha8Rng,
    obs: Vec<f64>,
    ep_return: f64,
    ep_len: usize,
    obs_raw: Vec<f64>,
    actions: Vec<f64>,
    logp: Vec<f64>,
    values: Vec<f64>,
    rewards: Vec<f64>,
    dones: Vec<bool>,
    truncs: Vec<bool>,
    trunc_obs: Vec<(usize, Vec<f64>)>,
    trunc_values: Vec<f64>,
    adv: Vec<f64>,
    ret: Vec<f64>,
    finished: Vec<(f64, usize)>,
    comp_sum: RewardComponents,
    nan_resets: usize,
}

impl Worker {
    fn reset(&mut self) -> Result<()> {
        self.active = self.rng.random_range(0..self.envs.len());
        self.ep_return = 0.0;
        self.ep_len = 0;
        self.envs[self.active].reset(&mut self.obs)
    }

    fn clear(&mut self) {
        for v in [&mut self.obs_raw, &mut self.actions, &mut self.logp, &mut self.values, &mut self.rewards, &mut self.trunc_values] {
            v.clear();
        }
        self.dones.clear();
        self.truncs.clear();
        self.trunc_obs.clear();
        self.finished.clear();
        self.comp_sum = RewardComponents::default();
        self.nan_resets = 0;
    }

    fn step(&mut self, pol: &GaussianPolicy, mean: &[f64], value: f64) -> Result<()> {
        let action = pol.sample(mean, &mut self.rng);
        self.obs_raw.extend_from_slice(&self.obs);
        self.logp.push(pol.log_prob(mean, &action));
        self.values.push(value);
        let t = self.rewards.len();
        let out = self.envs[self.active].step(&action, &mut self.obs)?;
        self.actions.extend_from_slice(&action);
        self.rewards.push(out.reward);
        self.dones.push(out.terminated);
        self.truncs.push(out.truncated);
        self.trunc_values.push(0.0);
        add_components(&mut self.comp_sum, &out.components);
        self.ep_return += out.reward;
        self.ep_len += 1;
        if out.report.terminated_nan {
            self.nan_resets += 1;
        }
        if out.truncated {
            self.trunc_obs.push((t, self.obs.clone()));
        }
        if out.terminated || out.truncated {
            self.finished.push((self.ep_return, self.ep_len));
            self.reset()?;
        }
        Ok(())
    }
}

fn add_components(acc: &mut RewardComponents, c: &RewardComponents) {
    acc.r_q += c.r_q;
    acc.r_qdot += c.r_qdot;
    acc.r_p += c.r_p;
    acc.r_theta += c.r_theta;
    acc.r_v_ang += c.r_v_ang;
    acc.r_v_lin += c.r_v_lin;
    acc.r_v_root += c.r_v_root;
    acc.r_imit += c.r_imit;
    acc.penalty += c.penalty;
    acc.r_t += c.r_t;
}

/// Per-iteration log row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterStats {
    pub iteration: usize,
    pub steps: u64,
    /// mean return of episodes that ended this iteration (NaN if none)
    pub ep_return: f64,
    pub ep_len: f64,
    pub episodes: usize,
    pub mean_reward: f64,
    pub kl: f64,
    pub kl_max: f64,
    pub clip_frac: f64,
    pub entropy: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub grad_norm: f64,
    pub sps: f64,
    pub lr: f64,
    pub nan_resets: usize,
    pub components: RewardComponents,
}

pub const METRICS_HEADER: &str = "iteration,step,return,ep_len,episodes,mean_reward,kl,kl_max,clip_frac,entropy,policy_loss,value_loss,grad_norm,sps,lr,nan_resets,r_q,r_qdot,r_p,r_theta,r_v_ang,r_v_lin,r_v_root,r_imit,penalty";

impl IterStats {
    pub fn csv_row(&self) -> String {
        let c = &self.components;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{:.1},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration, self.steps, self.ep_return, self.ep_len, self.episodes, self.mean_reward, self.kl, self.kl_max,
            self.clip_frac, self.entropy, self.policy_loss, self.value_loss, self.grad_norm, self.sps, self.lr, self.nan_resets,
            c.r_q, c.r_qdot, c.r_p, c.r_theta, c.r_v_ang, c.r_v_lin, c.r_v_root, c.r_imit, c.penalty
        )
    }
}

/// Owns envs, policy and optimizer for one training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Arc<MskModel>,
    pub clips: Vec<Arc<MotionClip>>,
    pub env_cfg: EnvConfig,
    pub policy: GaussianPolicy,
    opt: Optimizer,
    workers: Vec<Worker>,
    pool: rayon::ThreadPool,
    pub threads: usize,
    pub iteration: usize,
    pub steps: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = Arc::new(MskModel::resolve(&cfg.model)?);
        let env_cfg = cfg.env.clone().unwrap_or_else(|| EnvConfig::for_model(&model));
        let clips = cfg
            .clips
            .iter()
            .map(|c| Ok(Arc::new(prepare_clip(&model, &resolve_clip(c)?, &env_cfg.sim)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::with_parts(cfg, model, clips, env_cfg)
    }

    /// Builds a trainer from already-loaded parts (clips at the control rate).
    pub fn with_parts(cfg: TrainConfig, model: Arc<MskModel>, clips: Vec<Arc<MotionClip>>, env_cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        if clips.is_empty() {
            return Err(Error::Input("at least one clip is required".into()));
        }
        let seed = cfg.ppo.seed;
        let mut workers = Vec::with_capacity(cfg.ppo.n_env);
        for i in 0..cfg.ppo.n_env {
            let envs = clips
                .iter()
                .enumerate()
                .map(|(c, clip)| ImitationEnv::new(model.clone(), clip.clone(), env_cfg.clone(), env_seed(seed, i, c + 1)))
                .collect::<Result<Vec<_>>>()?;
            let obs_dim = envs[0].obs_dim();
            let mut w = Worker {
                envs,
                active: 0,
                rng: ChaCha8Rng::seed_from_u64(env_seed(seed, i, 0)),
                obs: vec![0.0; obs_dim],
                ep_return: 0.0,
                ep_len: 0,
                obs_raw: Vec::new(),
                actions: Vec::new(),
                logp: Vec::new(),
                values: Vec::new(),
                rewards: Vec::new(),
                dones: Vec::new(),
                truncs: Vec::new(),
                trunc_obs: Vec::new(),
                trunc_values: Vec::new(),
                adv: Vec::new(),
                ret: Vec::new(),
                finished: Vec::new(),
                comp_sum: RewardComponents::default(),
                nan_resets: 0,
            };
            w.reset()?;
            workers.push(w);
        }
        let (od, ad) = (workers[0].envs[0].obs_dim(), workers[0].envs[0].act_dim());
        let policy = GaussianPolicy::new(od, ad, cfg.policy.clone(), seed)?;
        let opt = Optimizer::new(cfg.ppo.optimizer, &policy.specs, policy.n_params());
        let threads = resolve_threads(cfg.threads);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::Input(e.to_string()))?;
        Ok(Self { cfg, model, clips, env_cfg, policy, opt, workers, pool, threads, iteration: 0, steps: 0 })
    }

    /// Changes the worker count; results are unaffected.
    pub fn set_threads(&mut self, n: usize) -> Result<()> {
        self.pool = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().map_err(|e| Error::Input(e.to_string()))?;
        self.threads = n.max(1);
        Ok(())
    }

    /// Means and values for row-major raw observations, in fixed chunks.
    fn evaluate(&self, raw: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let od = self.policy.obs_dim;
        let pol = &self.policy;
        let parts: Vec<(Vec<f64>, Vec<f64>)> = self.pool.install(|| {
            raw.par_chunks(CHUNK * od)
                .map(|c| {
                    let x = pol.normalized(c);
                    let b = c.len() / od;
                    (pol.mean(&x, b, None), pol.value(&x, b, None))
                })
                .collect()
        });
        let mut mu = Vec::with_capacity(raw.len() / od * pol.act_dim);
        let mut v = Vec::with_capacity(raw.len() / od);
        for (m, vv) in parts {
            mu.extend(m);
            v.extend(vv);
        }
        (mu, v)
    }

    /// Collects `rollout_steps` transitions from every env and computes GAE.
    pub fn rollout(&mut self) -> Result<()> {
        let t_len = self.cfg.ppo.rollout_steps;
        let (od, ad) = (self.policy.obs_dim, self.policy.act_dim);
        self.workers.iter_mut().for_each(Worker::clear);
        let mut raw = vec![0.0; self.workers.len() * od];
        for _ in 0..t_len {
            for (w, r) in self.workers.iter().zip(raw.chunks_exact_mut(od)) {
                r.copy_from_slice(&w.obs);
            }
            let (mu, v) = self.evaluate(&raw);
            let pol = &self.policy;
            let workers = &mut self.workers;
            self.pool.install(|| {
                workers
                    .par_iter_mut()
                    .zip(mu.par_chunks(ad))
                    .zip(v.par_iter())
                    .map(|((w, m), &val)| w.step(pol, m, val))
                    .collect::<Result<Vec<()>>>()
            })?;
        }
        // bootstrap values: current obs, then pre-reset obs of truncated steps
        for (w, r) in self.workers.iter().zip(raw.chunks_exact_mut(od)) {
            r.copy_from_slice(&w.obs);
        }
        let (_, boot) = self.evaluate(&raw);
        let trunc_raw: Vec<f64> = self.workers.iter().flat_map(|w| w.trunc_obs.iter().flat_map(|(_, o)| o.iter().copied())).collect();
        let (_, tv) = if trunc_raw.is_empty() { (Vec::new(), Vec::new()) } else { self.evaluate(&trunc_raw) };
        let mut k = 0;
        let (gamma, lam) = (self.cfg.ppo.gamma, self.cfg.ppo.lam);
        for (w, b) in self.workers.iter_mut().zip(boot) {
            for (t, _) in &w.trunc_obs {
                w.trunc_values[*t] = tv[k];
                k += 1;
            }
            w.values.push(b);
            let (a, r) = compute_gae(&w.rewards, &w.values, &w.dones, &w.truncs, &w.trunc_values, gamma, lam);
            w.adv = a;
            w.ret = r;
        }
        self.steps += (self.workers.len() * t_len) as u64;
        Ok(())
    }

    /// Runs the epochs × minibatches update on the last rollout, then folds
    /// the rollout observations into the running stats.
    pub fn update(&mut self) -> Result<(LossStats, f64, f64, f64)> {
        let p = &self.cfg.ppo;
        let (od, ad, t_len) = (self.policy.obs_dim, self.policy.act_dim, p.rollout_steps);
        let n = self.workers.len() * t_len;
        // env-major flattening
        let mut obs = Vec::with_capacity(n * od);
        let mut acts = Vec::with_capacity(n * ad);
        let (mut logp, mut vals, mut adv, mut ret) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for w in &self.workers {
            obs.extend_from_slice(&w.obs_raw);
            acts.extend_from_slice(&w.actions);
            logp.extend_from_slice(&w.logp);
            vals.extend_from_slice(&w.values[..t_len]);
            adv.extend_from_slice(&w.adv);
            ret.extend_from_slice(&w.ret);
        }
        let obs_n = self.policy.normalized(&obs);
        let lr = learning_rate(p, self.iteration as f64 / self.cfg.n_iterations() as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(env_seed(p.seed, usize::MAX, self.iteration + 1));
        let mut perm: Vec<usize> = (0..n).collect();
        let mb = p.minibatch_size();
        let snapshot = self.policy.params.clone();
        let opt_snapshot = self.opt.clone();
        let mut acc = LossStats::default();
        let (mut kl_max, mut gnorm, mut count) = (0.0f64, 0.0, 0usize);
        let mut grad = vec![0.0; self.policy.n_params()];
        let (mut bo, mut ba) = (vec![0.0; mb * od], vec![0.0; mb * ad]);
        let (mut bl, mut bv, mut bad, mut br) = (vec![0.0; mb], vec![0.0; mb], vec![0.0; mb], vec![0.0; mb]);
        for _ in 0..p.epochs {
            perm.shuffle(&mut rng);
            for idx in perm.chunks_exact(mb) {
                for (j, &i) in idx.iter().enumerate() {
                    bo[j * od..(j + 1) * od].copy_from_slice(&obs_n[i * od..(i + 1) * od]);
                    ba[j * ad..(j + 1) * ad].copy_from_slice(&acts[i * ad..(i + 1) * ad]);
                    bl[j] = logp[i];
                    bv[j] = vals[i];
                    bad[j] = adv[i];
                    br[j] = ret[i];
                }
                let batch = Minibatch { obs: &bo, actions: &ba, logp_old: &bl, values_old: &bv, advantages: &bad, returns: &br };
                grad.iter_mut().for_each(|g| *g = 0.0);
                let st = match ppo_loss_and_grad(&self.policy, &batch, p, &mut grad) {
                    Ok(s) => s,
                    Err(e) => {
                        self.policy.params = snapshot;
                        self.opt = opt_snapshot;
                        return Err(e);
                    }
                };
                gnorm += clip_grad_norm(&mut grad, p.max_grad_norm);
                self.opt.step(&mut self.policy.params, &grad, lr, p.weight_decay);
                kl_max = kl_max.max(st.kl);
                acc.loss += st.loss;
                acc.policy_loss += st.policy_loss;
                acc.value_loss += st.value_loss;
                acc.kl += st.kl;
                acc.clip_frac += st.clip_frac;
                acc.entropy = st.entropy;
                count += 1;
            }
        }
        if self.policy.params.iter().any(|v| !v.is_finite()) {
            self.policy.params = snapshot;
            self.opt = opt_snapshot;
            return Err(Error::Numerical("non-finite parameters after update".into()));
        }
        let c = count.max(1) as f64;
        acc.loss /= c;
        acc.policy_loss /= c;
        acc.value_loss /= c;
        acc.kl /= c;
        acc.clip_frac /= c;
        self.policy.stats.update_batch(&obs);
        Ok((acc, kl_max, gnorm / c, lr))
    }

    /// One rollout + update; returns the log row.
    pub fn iterate(&mut self) -> Result<IterStats> {
        let start = Instant::now();
        self.rollout()?;
        let (loss, kl_max, grad_norm, lr) = self.update()?;
        let secs = start.elapsed().as_secs_f64();
        let n = (self.workers.len() * self.cfg.ppo.rollout_steps) as f64;
        let finished: Vec<(f64, usize)> = self.workers.iter().flat_map(|w| w.finished.iter().copied()).collect();
        let mut comp = RewardComponents::default();
        for w in &self.workers {
            add_components(&mut comp, &w.comp_sum);
        }
        scale_components(&mut comp, 1.0 / n);
        let stats = IterStats {
            iteration: self.iteration,
            steps: self.steps,
            ep_return: mean(finished.iter().map(|f| f.0)),
            ep_len: mean(finished.iter().map(|f| f.1 as f64)),
            episodes: finished.len(),
            mean_reward: comp.r_t,
            kl: loss.kl,
            kl_max,
            clip_frac: loss.clip_frac,
            entropy: loss.entropy,
            policy_loss: loss.policy_loss,
            value_loss: loss.value_loss,
            grad_norm,
            sps: n / secs.max(1e-9),
            lr,
            nan_resets: self.workers.iter().map(|w| w.nan_resets).sum(),
            components: comp,
        };
        self.iteration += 1;
        Ok(stats)
    }

    /// Trains until the step budget or until `stop` returns true. With an
    /// output dir, writes the config snapshot, `metrics.csv` and checkpoints.
    pub fn train(&mut self, out: Option<&Path>, mut stop: impl FnMut(&Trainer, &IterStats) -> bool) -> Result<Vec<IterStats>> {
        let mut log = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let cfg_path = dir.join("config.toml");
                std::fs::write(&cfg_path, self.cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
                let path = dir.join("metrics.csv");
                let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(&path, e))?;
                Some((f, path))
            }
            None => None,
        };
        let mut history = Vec::new();
        let n_iter = self.cfg.n_iterations();
        while self.iteration < n_iter {
            let st = match self.iterate() {
                Ok(s) => s,
                Err(e) => {
                    if let Some(dir) = out {
                        self.policy.save(&dir.join("last_good"))?;
                    }
                    return Err(e);
                }
            };
            log::info!(
                "iter {} steps {} return {:.3} reward {:.4} kl {:.2e} sps {:.0}",
                st.iteration, st.steps, st.ep_return, st.mean_reward, st.kl, st.sps
            );
            if let Some((f, path)) = log.as_mut() {
                writeln!(f, "{}", st.csv_row()).map_err(|e| Error::io(&*path, e))?;
            }
            let every = self.cfg.checkpoint_every;
            if let (Some(dir), true) = (out, every > 0 && self.iteration % every.max(1) == 0) {
                self.policy.save(&dir.join(format!("ckpt_{:06}", self.iteration)))?;
            }
            let done = stop(self, &st);
            history.push(st);
            if done {
                break;
            }
        }
        if let Some(dir) = out {
            self.policy.save(&dir.join("final"))?;
        }
        Ok(history)
    }

    pub fn checkpoint_path(dir: &Path) -> PathBuf {
        dir.join("final.json")
    }
}

fn scale_components(c: &mut RewardComponents, s: f64) {
    for v in [&mut c.r_q, &mut c.r_qdot, &mut c.r_p, &mut c.r_theta, &mut c.r_v_ang, &mut c.r_v_lin, &mut c.r_v_root, &mut c.r_imit, &mut c.penalty, &mut c.r_t] {
        *v *= s;
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in it {
        s += v;
        n += 1;
    }
    if n == 0 { f64::NAN } else { s / n as f64 }
}

/// Independent stream id per (run seed, env, purpose).
fn env_seed(seed: u64, env: usize, purpose: usize) -> u64 {
    let mut x = seed ^ (env as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (purpose as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// One throughput measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n_env: usize,
    pub threads: usize,
    /// env steps per second, rollout only
    pub rollout_sps: f64,
    /// env steps per second including the PPO update
    pub train_sps: f64,
}

/// Raw env-steps/s for each (n_env, threads) pair, best of `iters` rollouts.
pub fn bench_throughput(base: &TrainConfig, n_envs: &[usize], threads: &[usize], iters: usize) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n_env in n_envs {
        for &th in threads {
            let mut cfg = base.clone();
            cfg.ppo.n_env = n_env;
            cfg.ppo.minibatches = 1;
            cfg.threads = Some(th);
            let mut tr = Trainer::new(cfg)?;
            tr.set_threads(th)?;
            let steps = (n_env * tr.cfg.ppo.rollout_steps) as f64;
            let (mut best_r, mut best_t) = (0.0f64, 0.0f64);
            for _ in 0..iters.max(1) {
                let t0 = Instant::now();
                tr.rollout()?;
                let t1 = Instant::now();
                tr.update()?;
                let t2 = Instant::now();
                tr.iteration += 1;
                best_r = best_r.max(steps / (t1 - t0).as_secs_f64().max(1e-9));
                best_t = best_t.max(steps / (t2 - t0).as_secs_f64().max(1e-9));
            }
            rows.push(BenchRow { n_env, threads: th, rollout_sps: best_r, train_sps: best_t });
        }
    }
    Ok(rows)
}
