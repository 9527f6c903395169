//! Imitation environment: observations with goal lookahead, the tracking
//! reward, action penalties and early termination.
//!
//! Site quantities are taken relative to the root site: positions and linear
//! velocities as world-frame differences, angles and angular rates as
//! differences of planar orientations.

use std::f64::consts::PI;
use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{muscle_force, tendon_jacobian, tendon_length, MskModel, SiteKinematics, Vec2};
use crate::motion::{resample_with_model, Frame, MotionClip};
use crate::sim::{probe_force, reset_to_frame, SimConfig, SimState, StepReport, Stepper};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    pub w_q: f64,
    pub w_qdot: f64,
    pub w_p: f64,
    pub w_theta: f64,
    pub w_v: f64,
    /// root linear-velocity term; 0 disables it
    pub w_v_root: f64,
    pub beta_q: f64,
    pub beta_p: f64,
    pub beta_theta: f64,
    pub beta_v: f64,
    pub lambda_act_bound: f64,
    pub lambda_act_rate: f64,
    pub lambda_energy: f64,
}

/// The lower clip of the penalty sum.
pub const PENALTY_FLOOR: f64 = -1.0;

impl RewardSpec {
    /// Full-body weights.
    pub fn free_root() -> Self {
        Self {
            w_q: 0.1,
            w_qdot: 0.1,
            w_p: 0.6,
            w_theta: 0.01,
            w_v: 0.1,
            w_v_root: 0.1,
            beta_q: 10.0,
            beta_p: 100.0,
            beta_theta: 10.0,
            beta_v: 0.1,
            lambda_act_bound: 0.01,
            lambda_act_rate: 0.0,
            lambda_energy: 0.01,
        }
    }

    /// Fixed-base weights.
    pub fn fixed_base() -> Self {
        Self {
            w_theta: 0.1,
            w_v_root: 0.0,
            ..Self::free_root()
        }
    }

    pub fn for_model(model: &MskModel) -> Self {
        if model.root_free {
            Self::free_root()
        } else {
            Self::fixed_base()
        }
    }

    /// Imitation reward under perfect tracking.
    pub fn weight_sum(&self) -> f64 {
        self.w_q + self.w_qdot + self.w_p + self.w_theta + 2.0 * self.w_v + self.w_v_root
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_q, self.w_qdot, self.w_p, self.w_theta, self.w_v, self.w_v_root];
        let temps = [self.beta_q, self.beta_p, self.beta_theta, self.beta_v];
        let lambdas = [self.lambda_act_bound, self.lambda_act_rate, self.lambda_energy];
        if weights.iter().chain(&lambdas).any(|w| !(*w >= 0.0 && w.is_finite())) || temps.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::Input(format!("invalid reward spec {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminationSpec {
    /// mean root-relative site deviation (m)
    pub delta_site: f64,
    /// world root-site deviation (m); free-root models only
    pub delta_root: Option<f64>,
}

impl TerminationSpec {
    pub fn for_model(model: &MskModel) -> Self {
        if model.root_free {
            Self { delta_site: 0.5, delta_root: Some(0.5) }
        } else {
            Self { delta_site: 0.25, delta_root: None }
        }
    }

    /// Never terminates early.
    pub fn never() -> Self {
        Self { delta_site: f64::INFINITY, delta_root: Some(f64::INFINITY) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_site > 0.0) || self.delta_root.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::Input(format!("termination thresholds must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoalSpec {
    pub lookahead_n: usize,
    /// seconds between lookahead goals
    pub lookahead_dt: f64,
}

impl Default for GoalSpec {
    fn default() -> Self {
        Self { lookahead_n: 5, lookahead_dt: 0.2 }
    }
}

impl GoalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lookahead_n == 0 || !(self.lookahead_dt > 0.0) {
            return Err(Error::Input(format!("invalid goal spec {self:?}")));
        }
        Ok(())
    }
}

/// Named slices of the flat observation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsLayout {
    pub slices: Vec<(String, Range<usize>)>,
    pub dim: usize,
}

impl ObsLayout {
    pub fn new(model: &MskModel, goal: &GoalSpec) -> Self {
        let nj = model.joints.len();
        let nm = model.n_muscles();
        let root = if model.root_free { 5 } else { 0 };
        let mut slices = Vec::new();
        let mut at = 0;
        let mut push = |name: String, len: usize| {
            slices.push((name, at..at + len));
            at += len;
        };
        push("joint_pos".into(), nj);
        push("joint_vel".into(), nj);
        push("root_state".into(), root);
        push("muscle".into(), 4 * nm);
        push("touch".into(), if model.root_free { model.n_probes() } else { 0 });
        for k in 0..goal.lookahead_n {
            push(format!("goal{k}_joint_delta"), nj);
            push(format!("goal{k}_root_delta"), if model.root_free { 6 } else { 0 });
            push(format!("goal{k}_site_rel"), 2 * model.n_sites());
        }
        push("prev_action".into(), nm);
        ObsLayout { slices, dim: at }
    }

    pub fn slice(&self, name: &str) -> Option<Range<usize>> {
        self.slices.iter().find(|(n, _)| n == name).map(|(_, r)| r.clone())
    }
}

/// Wraps an angle difference into (−π, π].
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Frame index of lookahead `k`, clamped to the clip end.
pub fn goal_frame(clip: &MotionClip, frame: usize, k: usize, goal: &GoalSpec) -> usize {
    let offset = (k as f64 * goal.lookahead_dt * clip.rate).round() as usize;
    (frame + offset).min(clip.frames.len() - 1)
}

/// Muscle lengths, lengthening velocities and tensions at `state`.
pub fn muscle_state(model: &MskModel, state: &SimState) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let len = tendon_length(model, &state.q);
    let jac = tendon_jacobian(model, &state.q);
    let vel: Vec<f64> = jac.iter().map(|row| row.iter().zip(&state.q_dot).map(|(a, b)| a * b).sum()).collect();
    let force = model
        .muscles
        .iter()
        .enumerate()
        .map(|(m, mu)| muscle_force(mu, state.activations[m], len[m], vel[m]))
        .collect();
    (len, vel, force)
}

/// Instantaneous normal force at every contact probe.
pub fn touch_forces(model: &MskModel, state: &SimState) -> Vec<f64> {
    let poses = model.link_poses(&state.q);
    model
        .probes()
        .iter()
        .map(|&(l, local)| {
            let p = poses.point(Some(l), local);
            let v = model.point_velocity(&poses, Some(l), p, &state.q_dot);
            probe_force(model, p.y, v).y
        })
        .collect()
}

/// Flat observation; see [`ObsLayout`] for the slice order.
pub fn build_observation(
    model: &MskModel,
    state: &SimState,
    clip: &MotionClip,
    frame: usize,
    prev_action: &[f64],
    goal: &GoalSpec,
) -> Result<Vec<f64>> {
    let layout = ObsLayout::new(model, goal);
    let mut obs = Vec::with_capacity(layout.dim);
    let nr = model.n_root();
    obs.extend_from_slice(&state.q[nr..]);
    obs.extend_from_slice(&state.q_dot[nr..]);
    if model.root_free {
        obs.extend_from_slice(&[state.q[1], state.q[2], state.q_dot[0], state.q_dot[1], state.q_dot[2]]);
    }
    let (len, vel, force) = muscle_state(model, state);
    for m in 0..model.n_muscles() {
        obs.extend_from_slice(&[state.activations[m], len[m], vel[m], -force[m]]);
    }
    if model.root_free {
        obs.extend(touch_forces(model, state));
    }
    let root_site = model.root_site();
    for k in 0..goal.lookahead_n {
        let g = &clip.frames[goal_frame(clip, frame, k, goal)];
        obs.extend(g.q[nr..].iter().zip(&state.q[nr..]).map(|(t, c)| t - c));
        if model.root_free {
            obs.extend((0..3).map(|c| g.q[c] - state.q[c]));
            obs.extend((0..3).map(|c| g.q_dot[c] - state.q_dot[c]));
        }
        let r = g.site_pos[root_site];
        for p in &g.site_pos {
            obs.extend_from_slice(&[p.x - r.x, p.y - r.y]);
        }
    }
    obs.extend_from_slice(prev_action);
    if obs.len() != layout.dim {
        return Err(Error::Numerical(format!(
            "internal: observation has {} entries, layout declares {}",
            obs.len(),
            layout.dim
        )));
    }
    Ok(obs)
}

/// Per-term breakdown of one step's reward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub r_q: f64,
    pub r_qdot: f64,
    pub r_p: f64,
    pub r_theta: f64,
    pub r_v_ang: f64,
    pub r_v_lin: f64,
    pub r_v_root: f64,
    pub r_imit: f64,
    pub penalty: f64,
    pub r_t: f64,
}

/// Squared tracking errors behind each reward term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackingErrors {
    pub q: f64,
    pub qdot: f64,
    pub p: f64,
    pub theta: f64,
    pub v_ang: f64,
    pub v_lin: f64,
    pub v_root: f64,
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean squared errors between the simulated sites/joints and `reference`.
pub fn tracking_errors(model: &MskModel, state: &SimState, sites: &[SiteKinematics], reference: &Frame) -> TrackingErrors {
    let nr = model.n_root();
    let nj = model.joints.len();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let root = model.root_site();
    let (s0, r0) = (&sites[root], root);
    let mut e = TrackingErrors {
        q: mean(sq(&state.q[nr..], &reference.q[nr..]), nj),
        qdot: mean(sq(&state.q_dot[nr..], &reference.q_dot[nr..]), nj),
        ..Default::default()
    };
    let mut k = 0;
    for (i, s) in sites.iter().enumerate() {
        if i == root {
            continue;
        }
        k += 1;
        let p_rel = s.pos - s0.pos;
        let p_ref = reference.site_pos[i] - reference.site_pos[r0];
        e.p += (p_rel - p_ref).norm_squared();
        let phi = wrap_angle(s.rot - s0.rot);
        let phi_ref = wrap_angle(reference.site_rot[i] - reference.site_rot[r0]);
        e.theta += wrap_angle(phi - phi_ref).powi(2);
        let w = s.angvel - s0.angvel;
        let w_ref = reference.site_angvel[i] - reference.site_angvel[r0];
        e.v_ang += (w - w_ref).powi(2);
        let v = s.linvel - s0.linvel;
        let v_ref = reference.site_linvel[i] - reference.site_linvel[r0];
        e.v_lin += (v - v_ref).norm_squared();
    }
    e.p = mean(e.p, k);
    e.theta = mean(e.theta, k);
    e.v_ang = mean(e.v_ang, k);
    e.v_lin = mean(e.v_lin, k);
    if model.root_free {
        e.v_root = (Vec2::new(state.q_dot[0], state.q_dot[1]) - Vec2::new(reference.q_dot[0], reference.q_dot[1])).norm_squared();
    }
    e
}

/// Combines tracking errors and a penalty into the step reward.
pub fn reward_from_errors(e: &TrackingErrors, penalty: f64, spec: &RewardSpec) -> RewardComponents {
    let mut c = RewardComponents {
        r_q: (-spec.beta_q * e.q).exp(),
        r_qdot: (-spec.beta_q * e.qdot).exp(),
        r_p: (-spec.beta_p * e.p).exp(),
        r_theta: (-spec.beta_theta * e.theta).exp(),
        r_v_ang: (-spec.beta_v * e.v_ang).exp(),
        r_v_lin: (-spec.beta_v * e.v_lin).exp(),
        r_v_root: (-spec.beta_v * e.v_root).exp(),
        penalty,
        ..Default::default()
    };
    c.r_imit = spec.w_q * c.r_q
        + spec.w_qdot * c.r_qdot
        + spec.w_p * c.r_p
        + spec.w_theta * c.r_theta
        + spec.w_v * c.r_v_ang
        + spec.w_v * c.r_v_lin
        + spec.w_v_root * c.r_v_root;
    c.r_t = (c.r_imit + penalty).max(0.0);
    c
}

/// Tracking reward of `state` against clip frame `frame`, without penalties.
pub fn imitation_reward(model: &MskModel, state: &SimState, clip: &MotionClip, frame: usize, spec: &RewardSpec) -> RewardComponents {
    let sites = model.site_kinematics(&state.q, &state.q_dot);
    let e = tracking_errors(model, state, &sites, &clip.frames[frame.min(clip.frames.len() - 1)]);
    reward_from_errors(&e, 0.0, spec)
}

fn mean_sq(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    mean(v.map(|x| x * x).sum(), n)
}

/// Clipped regularizer sum P_t ∈ [−1, 0].
pub fn penalty(action: &[f64], prev_action: &[f64], activations: &[f64], spec: &RewardSpec) -> f64 {
    let n = action.len();
    let bound = mean_sq(action.iter().map(|a| (a - a.clamp(0.0, 1.0)).abs()), n);
    let rate = mean_sq(action.iter().zip(prev_action).map(|(a, b)| a - b), n);
    let energy = mean_sq(activations.iter().copied(), activations.len());
    let total = spec.lambda_act_bound * bound + spec.lambda_act_rate * rate + spec.lambda_energy * energy;
    (-total).max(PENALTY_FLOOR).min(0.0)
}

/// Mean root-relative site deviation and world root-site deviation.
pub fn site_deviation(model: &MskModel, sites: &[SiteKinematics], reference: &Frame) -> (f64, f64) {
    let root = model.root_site();
    let mut sum = 0.0;
    let mut k = 0;
    for (i, s) in sites.iter().enumerate() {
        if i == root {
            continue;
        }
        let rel = s.pos - sites[root].pos;
        let rel_ref = reference.site_pos[i] - reference.site_pos[root];
        sum += (rel - rel_ref).norm();
        k += 1;
    }
    (mean(sum, k), (sites[root].pos - reference.site_pos[root]).norm())
}

pub fn terminate_check(model: &MskModel, state: &SimState, clip: &MotionClip, frame: usize, spec: &TerminationSpec) -> bool {
    let sites = model.site_kinematics(&state.q, &state.q_dot);
    terminated_by(model, &sites, &clip.frames[frame.min(clip.frames.len() - 1)], spec)
}

fn terminated_by(model: &MskModel, sites: &[SiteKinematics], reference: &Frame, spec: &TerminationSpec) -> bool {
    let (site_dev, root_dev) = site_deviation(model, sites, reference);
    site_dev > spec.delta_site || (model.root_free && spec.delta_root.is_some_and(|d| root_dev > d))
}

/// Everything the environment needs besides model and clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub reward: RewardSpec,
    pub termination: TerminationSpec,
    #[serde(default)]
    pub goal: GoalSpec,
    #[serde(default)]
    pub sim: SimConfig,
    /// start episodes at a uniformly random frame
    #[serde(default = "yes")]
    pub random_start: bool,
}

fn yes() -> bool {
    true
}

impl EnvConfig {
    pub fn for_model(model: &MskModel) -> Self {
        Self {
            reward: RewardSpec::for_model(model),
            termination: TerminationSpec::for_model(model),
            goal: GoalSpec::default(),
            sim: SimConfig::default(),
            random_start: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.termination.validate()?;
        self.goal.validate()
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub components: RewardComponents,
    /// early termination (deviation or numerical failure)
    pub terminated: bool,
    /// reached the last clip frame
    pub truncated: bool,
    pub report: StepReport,
}

/// One imitation episode runner. Clips are resampled to the control rate.
#[derive(Debug, Clone)]
pub struct ImitationEnv {
    pub model: Arc<MskModel>,
    pub clip: Arc<MotionClip>,
    pub cfg: EnvConfig,
    pub layout: ObsLayout,
    stepper: Stepper,
    pub state: SimState,
    /// clip frame matching the current state
    pub frame: usize,
    pub start_frame: usize,
    prev_action: Vec<f64>,
    ctrl: Vec<f64>,
    rng: ChaCha8Rng,
}

/// Matches a clip to the control rate of `sim`.
pub fn prepare_clip(model: &MskModel, clip: &MotionClip, sim: &SimConfig) -> Result<MotionClip> {
    clip.validate()?;
    clip.check_model(model)?;
    let rate = 1.0 / sim.control_dt();
    if (clip.rate - rate).abs() > 1e-9 * rate {
        resample_with_model(clip, rate, model)
    } else {
        Ok(clip.clone())
    }
}

impl ImitationEnv {
    /// `clip` must already match the control rate (see [`prepare_clip`]).
    pub fn new(model: Arc<MskModel>, clip: Arc<MotionClip>, cfg: EnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        clip.check_model(&model)?;
        let rate = 1.0 / cfg.sim.control_dt();
        if (clip.rate - rate).abs() > 1e-9 * rate {
            return Err(Error::Input(format!("clip rate {} Hz differs from control rate {rate} Hz", clip.rate)));
        }
        let layout = ObsLayout::new(&model, &cfg.goal);
        let stepper = Stepper::new(&model, cfg.sim);
        let state = reset_to_frame(&model, &clip, 0)?;
        let nm = model.n_muscles();
        Ok(Self {
            layout,
            stepper,
            state,
            frame: 0,
            start_frame: 0,
            prev_action: vec![0.0; nm],
            ctrl: vec![0.0; nm],
            rng: ChaCha8Rng::seed_from_u64(seed),
            model,
            clip,
            cfg,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.layout.dim
    }

    pub fn act_dim(&self) -> usize {
        self.model.n_muscles()
    }

    /// Last frame an episode can start from.
    fn last_start(&self) -> usize {
        self.clip.frames.len() - 2
    }

    /// Resets to a random frame (or frame 0) and writes the observation.
    pub fn reset(&mut self, obs: &mut [f64]) -> Result<()> {
        let start = if self.cfg.random_start { self.rng.random_range(0..=self.last_start()) } else { 0 };
        self.reset_at(start, obs)
    }

    pub fn reset_at(&mut self, frame: usize, obs: &mut [f64]) -> Result<()> {
        self.state = reset_to_frame(&self.model, &self.clip, frame.min(self.last_start()))?;
        self.frame = frame.min(self.last_start());
        self.start_frame = self.frame;
        self.prev_action.iter_mut().for_each(|a| *a = 0.0);
        self.observe(obs)
    }

    pub fn observe(&self, obs: &mut [f64]) -> Result<()> {
        let o = build_observation(&self.model, &self.state, &self.clip, self.frame, &self.prev_action, &self.cfg.goal)?;
        obs.copy_from_slice(&o);
        Ok(())
    }

    /// Applies `action` (clamped to [0, 1] as excitation) for one control step.
    /// The observation of the new state is written to `obs`.
    pub fn step(&mut self, action: &[f64], obs: &mut [f64]) -> Result<StepOutcome> {
        if action.len() != self.act_dim() {
            return Err(Error::Input(format!("action has {} entries, expected {}", action.len(), self.act_dim())));
        }
        for (c, a) in self.ctrl.iter_mut().zip(action) {
            *c = if a.is_finite() { a.clamp(0.0, 1.0) } else { 0.0 };
        }
        let report = self.stepper.step(&self.model, &mut self.state, &self.ctrl);
        let pen = penalty(action, &self.prev_action, &self.state.activations, &self.cfg.reward);
        self.prev_action.copy_from_slice(&self.ctrl);
        if report.terminated_nan || action.iter().any(|a| !a.is_finite()) {
            self.observe(obs)?;
            return Ok(StepOutcome {
                reward: 0.0,
                components: RewardComponents { penalty: pen, ..Default::default() },
                terminated: true,
                truncated: false,
                report,
            });
        }
        self.frame += 1;
        let reference = &self.clip.frames[self.frame];
        let sites = self.model.site_kinematics(&self.state.q, &self.state.q_dot);
        let e = tracking_errors(&self.model, &self.state, &sites, reference);
        let components = reward_from_errors(&e, pen, &self.cfg.reward);
        let terminated = terminated_by(&self.model, &sites, reference, &self.cfg.termination);
        let truncated = !terminated && self.frame + 1 >= self.clip.frames.len();
        self.observe(obs)?;
        Ok(StepOutcome {
            reward: components.r_t,
            components,
            terminated,
            truncated,
            report,
        })
    }
}

#[cfg(test)]
mod tests;
