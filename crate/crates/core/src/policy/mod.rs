//! Actor-critic policy: gated residual nets, diagonal Gaussian head,
//! running observation statistics and checkpoints.

mod net;

pub use net::{orthogonal, sigmoid, silu, GatedResidualNet, ParamKind, ParamLayout, ParamSpec, Tape, GATE_INIT, LN_EPS, W1_GAIN};

use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Variance floor used when normalizing.
pub const VAR_EPS: f64 = 1e-8;
pub const LN_2PI: f64 = 1.8378770664093453;

/// Welford running mean / sum of squared deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim(), "stats dim mismatch");
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// Folds a row-major batch in order.
    pub fn update_batch(&mut self, xs: &[f64]) {
        for row in xs.chunks_exact(self.dim().max(1)) {
            self.update(row);
        }
    }

    /// Population variance (zero before the first sample).
    pub fn var(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.dim()];
        }
        self.m2.iter().map(|s| s / self.count as f64).collect()
    }

    /// In-place `(x − mean)/sqrt(var + 1e-8)`; identity when empty.
    pub fn normalize(&self, x: &mut [f64]) {
        if self.count == 0 {
            return;
        }
        let n = self.count as f64;
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.m2) {
            *v = (*v - m) / (s / n + VAR_EPS).sqrt();
        }
    }

    pub fn normalize_batch(&self, xs: &mut [f64]) {
        for row in xs.chunks_exact_mut(self.dim().max(1)) {
            self.normalize(row);
        }
    }
}

/// Network sizes and initial exploration noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub actor_widths: Vec<usize>,
    pub critic_widths: Vec<usize>,
    pub init_std: f64,
    pub actor_head_gain: f64,
    pub critic_head_gain: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            actor_widths: vec![256; 4],
            critic_widths: vec![256; 4],
            init_std: 3.0,
            actor_head_gain: 0.01,
            critic_head_gain: 1.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Input(format!("init_std must be positive, got {}", self.init_std)));
        }
        if self.actor_widths.contains(&0) || self.critic_widths.contains(&0) {
            return Err(Error::Input("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Actor, critic and state-independent log-std sharing one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub cfg: PolicyConfig,
    pub actor: GatedResidualNet,
    pub critic: GatedResidualNet,
    /// offset of log_std in `params`
    pub log_std: usize,
    pub specs: Vec<ParamSpec>,
    pub params: Vec<f64>,
    pub stats: RunningStats,
    pub seed: u64,
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: PolicyConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if obs_dim == 0 || act_dim == 0 {
            return Err(Error::Input("observation and action dims must be positive".into()));
        }
        let mut layout = ParamLayout::default();
        let actor = GatedResidualNet::new(&mut layout, "actor", obs_dim, &cfg.actor_widths, act_dim, cfg.actor_head_gain);
        let critic = GatedResidualNet::new(&mut layout, "critic", obs_dim, &cfg.critic_widths, 1, cfg.critic_head_gain);
        let log_std = layout.len;
        layout.specs.push(ParamSpec { name: "log_std".into(), offset: log_std, rows: 1, cols: act_dim, kind: ParamKind::Vector });
        layout.len += act_dim;
        let mut params = vec![0.0; layout.len];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        actor.init(&mut params, &mut rng);
        critic.init(&mut params, &mut rng);
        params[log_std..].iter_mut().for_each(|v| *v = cfg.init_std.ln());
        Ok(Self { obs_dim, act_dim, cfg, actor, critic, log_std, specs: layout.specs, params, stats: RunningStats::new(obs_dim), seed })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.params[self.log_std..self.log_std + self.act_dim]
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std().iter().map(|v| v.exp()).collect()
    }

    /// Normalized copy of a row-major observation batch.
    pub fn normalized(&self, obs: &[f64]) -> Vec<f64> {
        let mut x = obs.to_vec();
        self.stats.normalize_batch(&mut x);
        x
    }

    /// Action means for already-normalized inputs.
    pub fn mean(&self, x: &[f64], batch: usize, tape: Option<&mut Tape>) -> Vec<f64> {
        self.actor.forward(&self.params, x, batch, tape)
    }

    /// State values for already-normalized inputs.
    pub fn value(&self, x: &[f64], batch: usize, tape: Option<&mut Tape>) -> Vec<f64> {
        self.critic.forward(&self.params, x, batch, tape)
    }

    /// μ + σ⊙z.
    pub fn sample<R: Rng>(&self, mean: &[f64], rng: &mut R) -> Vec<f64> {
        mean.iter()
            .zip(self.log_std())
            .map(|(m, ls)| {
                let z: f64 = rng.sample(StandardNormal);
                m + ls.exp() * z
            })
            .collect()
    }

    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> f64 {
        log_prob(mean, self.log_std(), action)
    }

    pub fn entropy(&self) -> f64 {
        entropy(self.log_std())
    }

    /// Writes `<stem>.json` (manifest) and `<stem>.bin` (little-endian f64 parameters).
    pub fn save(&self, stem: &Path) -> Result<(PathBuf, PathBuf)> {
        let (json, bin) = checkpoint_paths(stem);
        let manifest = Manifest {
            format: CKPT_FORMAT.into(),
            version: CKPT_VERSION,
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            seed: self.seed,
            config: self.cfg.clone(),
            n_params: self.params.len(),
            params: self.specs.clone(),
            stats: self.stats.clone(),
        };
        let mut bytes = Vec::with_capacity(self.params.len() * 8);
        for p in &self.params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        if let Some(dir) = json.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&json, serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?).map_err(|e| Error::io(&json, e))?;
        std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        Ok((json, bin))
    }

    /// Loads a checkpoint, rebuilding the layout and checking it against the manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let (json, bin) = checkpoint_paths(path);
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", json.display())))?;
        if m.format != CKPT_FORMAT || m.version != CKPT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint {} v{}", m.format, m.version)));
        }
        let mut pol = Self::new(m.obs_dim, m.act_dim, m.config, m.seed)?;
        if pol.specs != m.params || pol.params.len() != m.n_params {
            return Err(Error::Data("checkpoint parameter manifest does not match the declared architecture".into()));
        }
        if m.stats.dim() != m.obs_dim || m.stats.m2.len() != m.obs_dim {
            return Err(Error::Data("checkpoint stats dim mismatch".into()));
        }
        let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() != m.n_params * 8 {
            return Err(Error::Data(format!("parameter block has {} bytes, expected {}", bytes.len(), m.n_params * 8)));
        }
        for (p, c) in pol.params.iter_mut().zip(bytes.chunks_exact(8)) {
            *p = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
        }
        if pol.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite parameter in checkpoint".into()));
        }
        pol.stats = m.stats;
        Ok(pol)
    }
}

pub const CKPT_FORMAT: &str = "mmpolicy";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    obs_dim: usize,
    act_dim: usize,
    seed: u64,
    config: PolicyConfig,
    n_params: usize,
    params: Vec<ParamSpec>,
    stats: RunningStats,
}

/// Manifest and parameter-block paths for a checkpoint stem (extension ignored).
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let base = match stem.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    let s = base.as_os_str().to_owned();
    let mut j = s.clone();
    j.push(".json");
    let mut b = s;
    b.push(".bin");
    (PathBuf::from(j), PathBuf::from(b))
}

/// Diagonal Gaussian log density.
pub fn log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) * (-ls).exp();
            -0.5 * z * z - ls - 0.5 * LN_2PI
        })
        .sum()
}

/// Σ 0.5·ln(2πe σ²).
pub fn entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| 0.5 * (LN_2PI + 1.0) + ls).sum()
}

/// d log_prob / d(mean, log_std) for one sample.
pub fn log_prob_grad(mean: &[f64], log_std: &[f64], action: &[f64], d_mean: &mut [f64], d_log_std: &mut [f64]) {
    for i in 0..mean.len() {
        let inv = (-log_std[i]).exp();
        let z = (action[i] - mean[i]) * inv;
        d_mean[i] = z * inv;
        d_log_std[i] = z * z - 1.0;
    }
}
