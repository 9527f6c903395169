//! PPO: advantage estimation, the clipped objective, optimizers, schedules
//! and the parallel trainer.

mod optim;
mod trainer;

pub use optim::{
    adam_step, clip_grad_norm, muon_step, newton_schulz, AdamParams, Optimizer, OptimizerKind, MUON_MOMENTUM, MUON_SCALE, NS_COEFFS, NS_ITERS,
};
pub use trainer::{bench_throughput, resolve_threads, BenchRow, IterStats, TrainConfig, Trainer, METRICS_HEADER};

use crate::policy::{log_prob, log_prob_grad, GaussianPolicy, Tape};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// linear from `lr` to `lr_end`
    #[default]
    Linear,
    /// linear warmup over `warmup_frac`, cosine decay to `lr_end`
    WarmupCosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub n_env: usize,
    pub rollout_steps: usize,
    pub minibatches: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub lam: f64,
    pub clip: f64,
    pub vf_clip: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub max_grad_norm: f64,
    pub lr: f64,
    pub lr_end: f64,
    pub schedule: Schedule,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub normalize_advantages: bool,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            n_env: 64,
            rollout_steps: 50,
            minibatches: 32,
            epochs: 1,
            gamma: 0.99,
            lam: 0.95,
            clip: 0.2,
            vf_clip: 0.2,
            vf_coef: 0.5,
            ent_coef: 0.0,
            max_grad_norm: 1.0,
            lr: 4e-4,
            lr_end: 4e-5,
            schedule: Schedule::Linear,
            warmup_frac: 0.05,
            weight_decay: 0.0,
            normalize_advantages: true,
            optimizer: OptimizerKind::Muon,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return bad(format!("lam must be in [0, 1], got {}", self.lam));
        }
        if !(self.clip > 0.0) || !(self.vf_clip > 0.0) {
            return bad("clip and vf_clip must be positive".into());
        }
        if self.epochs == 0 || self.n_env == 0 || self.rollout_steps == 0 || self.minibatches == 0 {
            return bad("n_env, rollout_steps, minibatches and epochs must be ≥ 1".into());
        }
        if (self.n_env * self.rollout_steps) % self.minibatches != 0 {
            return bad(format!(
                "n_env·rollout_steps = {} is not divisible by minibatches = {}",
                self.n_env * self.rollout_steps,
                self.minibatches
            ));
        }
        if !(self.lr > 0.0) || self.lr_end < 0.0 || !(self.max_grad_norm > 0.0) || self.weight_decay < 0.0 {
            return bad("lr, lr_end, max_grad_norm and weight_decay must be non-negative (lr, max_grad_norm > 0)".into());
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad("warmup_frac must be in [0, 1)".into());
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.n_env * self.rollout_steps
    }

    pub fn minibatch_size(&self) -> usize {
        self.batch_size() / self.minibatches
    }
}

/// Learning rate at progress `frac` ∈ [0, 1].
pub fn learning_rate(cfg: &PpoConfig, frac: f64) -> f64 {
    let f = frac.clamp(0.0, 1.0);
    match cfg.schedule {
        Schedule::Constant => cfg.lr,
        Schedule::Linear => cfg.lr * (1.0 - f) + cfg.lr_end * f,
        Schedule::WarmupCosine => {
            if cfg.warmup_frac > 0.0 && f < cfg.warmup_frac {
                cfg.lr * f / cfg.warmup_frac
            } else {
                let c = (f - cfg.warmup_frac) / (1.0 - cfg.warmup_frac);
                cfg.lr_end + 0.5 * (cfg.lr - cfg.lr_end) * (1.0 + (std::f64::consts::PI * c).cos())
            }
        }
    }
}

/// Generalized advantage estimation over one env's rollout.
///
/// `values` has one extra trailing entry, the bootstrap V(s_T). A terminated
/// step drops its bootstrap; a truncated step bootstraps from
/// `trunc_values[t]` (the value of the pre-reset observation). Either ends
/// the advantage recursion since the next step starts a new episode.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    truncated: &[bool],
    trunc_values: &[f64],
    gamma: f64,
    lam: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n + 1, "values needs a bootstrap entry");
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let (boot, cont) = if dones[t] {
            (0.0, 0.0)
        } else if truncated[t] {
            (trunc_values[t], 0.0)
        } else {
            (values[t + 1], 1.0)
        };
        let delta = rewards[t] + gamma * boot - values[t];
        next = delta + gamma * lam * cont * next;
        adv[t] = next;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// min(ρA, clip(ρ, 1±ε)A).
pub fn clipped_surrogate(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// max((V−R)², (V_old + clip(V−V_old, ±c) − R)²).
pub fn clipped_value_loss(v: f64, v_old: f64, ret: f64, c: f64) -> f64 {
    let vc = v_old + (v - v_old).clamp(-c, c);
    (v - ret).powi(2).max((vc - ret).powi(2))
}

/// ρ − 1 − ln ρ (non-negative).
pub fn kl_term(ratio: f64) -> f64 {
    ratio - 1.0 - ratio.ln()
}

/// One minibatch of rollout data; `obs` is already normalized.
#[derive(Debug, Clone, Copy)]
pub struct Minibatch<'a> {
    pub obs: &'a [f64],
    pub actions: &'a [f64],
    pub logp_old: &'a [f64],
    pub values_old: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clip_frac: f64,
}

/// PPO loss and its gradient (accumulated into `grad`).
pub fn ppo_loss_and_grad(pol: &GaussianPolicy, mb: &Minibatch, cfg: &PpoConfig, grad: &mut [f64]) -> Result<LossStats> {
    let m = mb.logp_old.len();
    let (od, ad) = (pol.obs_dim, pol.act_dim);
    let (mut ta, mut tc) = (Tape::default(), Tape::default());
    let mu = pol.mean(mb.obs, m, Some(&mut ta));
    let v = pol.value(mb.obs, m, Some(&mut tc));
    debug_assert_eq!(mb.obs.len(), m * od);

    let adv: Vec<f64> = if cfg.normalize_advantages && m > 1 {
        let mean = mb.advantages.iter().sum::<f64>() / m as f64;
        let var = mb.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / m as f64;
        let sd = var.sqrt() + 1e-8;
        mb.advantages.iter().map(|a| (a - mean) / sd).collect()
    } else {
        mb.advantages.to_vec()
    };

    let ls = pol.log_std().to_vec();
    let inv_m = 1.0 / m as f64;
    let mut d_mu = vec![0.0; m * ad];
    let mut d_ls = vec![0.0; ad];
    let mut tmp_ls = vec![0.0; ad];
    let mut d_v = vec![0.0; m];
    let mut st = LossStats::default();
    let mut n_clipped = 0usize;
    for i in 0..m {
        let r = i * ad..(i + 1) * ad;
        let lp = log_prob(&mu[r.clone()], &ls, &mb.actions[r.clone()]);
        let ratio = (lp - mb.logp_old[i]).exp();
        let a = adv[i];
        st.policy_loss -= clipped_surrogate(ratio, a, cfg.clip) * inv_m;
        st.kl += kl_term(ratio) * inv_m;
        let active = (a > 0.0 && ratio > 1.0 + cfg.clip) || (a < 0.0 && ratio < 1.0 - cfg.clip);
        if (ratio - 1.0).abs() > cfg.clip {
            n_clipped += 1;
        }
        if !active {
            // d(−ρA/m)/d logp = −ρA/m
            let coef = -ratio * a * inv_m;
            log_prob_grad(&mu[r.clone()], &ls, &mb.actions[r.clone()], &mut d_mu[r.clone()], &mut tmp_ls);
            d_mu[r].iter_mut().for_each(|g| *g *= coef);
            d_ls.iter_mut().zip(&tmp_ls).for_each(|(g, t)| *g += coef * t);
        }
        let (vo, ret) = (mb.values_old[i], mb.returns[i]);
        st.value_loss += clipped_value_loss(v[i], vo, ret, cfg.vf_clip) * inv_m;
        let vc = vo + (v[i] - vo).clamp(-cfg.vf_clip, cfg.vf_clip);
        let (l1, l2) = ((v[i] - ret).powi(2), (vc - ret).powi(2));
        d_v[i] = cfg.vf_coef * inv_m * if l1 >= l2 {
            2.0 * (v[i] - ret)
        } else if (v[i] - vo).abs() < cfg.vf_clip {
            2.0 * (vc - ret)
        } else {
            0.0
        };
    }
    st.entropy = crate::policy::entropy(&ls);
    st.clip_frac = n_clipped as f64 * inv_m;
    st.loss = st.policy_loss + cfg.vf_coef * st.value_loss - cfg.ent_coef * st.entropy;
    if !st.loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite PPO loss (policy {}, value {})", st.policy_loss, st.value_loss)));
    }
    pol.actor.backward(&pol.params, grad, &ta, &d_mu);
    pol.critic.backward(&pol.params, grad, &tc, &d_v);
    for (g, d) in grad[pol.log_std..pol.log_std + ad].iter_mut().zip(&d_ls) {
        *g += d - cfg.ent_coef;
    }
    Ok(st)
}
