//! Evaluation metrics, gait-cycle segmentation, cycle averaging, EMG
//! envelopes, correlation and MPJAE.

#[cfg(test)]
mod tests;

use crate::env::{imitation_reward, prepare_clip, wrap_angle, EnvConfig, ImitationEnv};
use crate::model::{MskModel, SiteKinematics, Vec2};
use crate::motion::{Frame, MotionClip};
use crate::policy::GaussianPolicy;
use crate::sim::reset_to_frame;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Points on the 0–100 % cycle grid.
pub const CYCLE_GRID: usize = 101;

/// What produces the actions during an evaluation episode.
#[derive(Debug, Clone, Copy)]
pub enum Driver<'a> {
    /// deterministic policy (distribution mean)
    Policy(&'a GaussianPolicy),
    /// kinematic playback: the state is set to each reference frame
    Oracle,
}

/// Per-frame tracking errors in SI units (rad, rad/s, m).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameErrors {
    pub joint_angle: f64,
    pub joint_vel: f64,
    pub root_pos: f64,
    pub root_yaw: f64,
    pub rel_site: f64,
    pub abs_site: f64,
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Errors of one simulated frame against its reference. `offset` is the
/// initial root-site offset (sim − reference) removed from absolute positions.
pub fn frame_errors(model: &MskModel, q: &[f64], qd: &[f64], sites: &[SiteKinematics], reference: &Frame, offset: Vec2) -> FrameErrors {
    let nr = model.n_root();
    let root = model.root_site();
    let mut rel = 0.0;
    let mut abs = 0.0;
    for (i, s) in sites.iter().enumerate() {
        abs += (s.pos - offset - reference.site_pos[i]).norm();
        if i != root {
            rel += ((s.pos - sites[root].pos) - (reference.site_pos[i] - reference.site_pos[root])).norm();
        }
    }
    let k = sites.len();
    FrameErrors {
        joint_angle: rms(&q[nr..], &reference.q[nr..]),
        joint_vel: rms(&qd[nr..], &reference.q_dot[nr..]),
        root_pos: (sites[root].pos - offset - reference.site_pos[root]).norm(),
        root_yaw: wrap_angle(sites[root].rot - reference.site_rot[root]).abs(),
        rel_site: if k > 1 { rel / (k - 1) as f64 } else { 0.0 },
        abs_site: abs / k as f64,
    }
}

/// Everything recorded during one evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub clip: String,
    pub rate: f64,
    pub start_frame: usize,
    /// control steps executed
    pub steps: usize,
    /// steps available from the start frame to the clip end
    pub available: usize,
    pub success: bool,
    pub ep_return: f64,
    pub errors: Vec<FrameErrors>,
    pub q: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
    /// total ground reaction force per step
    pub grf: Vec<Vec2>,
    /// per-probe normal force per step
    pub touch: Vec<Vec<f64>>,
}

/// Runs one episode from `start_frame` to the clip end or termination.
/// `clip` must already be at the control rate.
pub fn run_episode(model: &Arc<MskModel>, clip: &Arc<MotionClip>, cfg: &EnvConfig, driver: Driver, start_frame: usize) -> Result<EpisodeTrace> {
    let mut env_cfg = cfg.clone();
    env_cfg.random_start = false;
    let mut env = ImitationEnv::new(model.clone(), clip.clone(), env_cfg, 0)?;
    let mut obs = vec![0.0; env.obs_dim()];
    env.reset_at(start_frame, &mut obs)?;
    let start = env.frame;
    let available = clip.frames.len() - 1 - start;
    let root = model.root_site();
    let init_sites = model.site_kinematics(&env.state.q, &env.state.q_dot);
    let offset = init_sites[root].pos - clip.frames[start].site_pos[root];
    let mut tr = EpisodeTrace {
        clip: clip.name.clone(),
        rate: clip.rate,
        start_frame: start,
        steps: 0,
        available,
        success: false,
        ep_return: 0.0,
        errors: Vec::with_capacity(available),
        q: Vec::with_capacity(available),
        activations: Vec::with_capacity(available),
        grf: Vec::with_capacity(available),
        touch: Vec::with_capacity(available),
    };
    loop {
        let (terminated, truncated, reward, grf, touch) = match driver {
            Driver::Policy(pol) => {
                let x = pol.normalized(&obs);
                let mean = pol.mean(&x, 1, None);
                let out = env.step(&mean, &mut obs)?;
                (out.terminated, out.truncated, out.reward, out.report.grf, out.report.touch)
            }
            Driver::Oracle => {
                let next = env.frame + 1;
                env.state = reset_to_frame(model, clip, next)?;
                env.frame = next;
                let r = imitation_reward(model, &env.state, clip, next, &env.cfg.reward);
                let touch = crate::env::touch_forces(model, &env.state);
                (false, next + 1 >= clip.frames.len(), r.r_t, Vec2::zeros(), touch)
            }
        };
        tr.steps += 1;
        tr.ep_return += reward;
        let sites = model.site_kinematics(&env.state.q, &env.state.q_dot);
        if !terminated {
            tr.errors.push(frame_errors(model, &env.state.q, &env.state.q_dot, &sites, &clip.frames[env.frame], offset));
        }
        tr.q.push(env.state.q.clone());
        tr.activations.push(env.state.activations.clone());
        tr.grf.push(grf);
        tr.touch.push(touch);
        if terminated {
            break;
        }
        if truncated {
            tr.success = true;
            break;
        }
    }
    Ok(tr)
}

/// Appendix-style metrics for one clip or the whole set (degrees, cm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub frame_coverage: f64,
    pub joint_angle_err: f64,
    pub joint_vel_err: f64,
    pub root_pos_err: f64,
    pub root_yaw_err: f64,
    pub rel_site_err: f64,
    pub abs_site_err: f64,
    pub mean_ep_len: f64,
    pub mean_ep_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema_version: u32,
    pub driver: String,
    #[serde(flatten)]
    pub overall: ClipMetrics,
    /// sorted by clip name
    pub per_clip: Vec<ClipMetrics>,
}

pub const REPORT_SCHEMA: u32 = 1;

/// Pools episodes: rates over episodes, errors over all executed frames.
pub fn aggregate(name: &str, traces: &[&EpisodeTrace]) -> ClipMetrics {
    let n = traces.len().max(1) as f64;
    let frames: usize = traces.iter().map(|t| t.errors.len()).sum();
    let avg = |f: fn(&FrameErrors) -> f64, scale: f64| {
        if frames == 0 {
            0.0
        } else {
            traces.iter().flat_map(|t| t.errors.iter()).map(f).sum::<f64>() / frames as f64 * scale
        }
    };
    let deg = 180.0 / std::f64::consts::PI;
    let executed: usize = traces.iter().map(|t| t.steps).sum();
    let available: usize = traces.iter().map(|t| t.available).sum();
    ClipMetrics {
        clip: name.to_string(),
        episodes: traces.len(),
        success_rate: 100.0 * traces.iter().filter(|t| t.success).count() as f64 / n,
        frame_coverage: if available == 0 { 0.0 } else { 100.0 * executed as f64 / available as f64 },
        joint_angle_err: avg(|e| e.joint_angle, deg),
        joint_vel_err: avg(|e| e.joint_vel, deg),
        root_pos_err: avg(|e| e.root_pos, 100.0),
        root_yaw_err: avg(|e| e.root_yaw, deg),
        rel_site_err: avg(|e| e.rel_site, 100.0),
        abs_site_err: avg(|e| e.abs_site, 100.0),
        mean_ep_len: traces.iter().map(|t| t.steps as f64).sum::<f64>() / n,
        mean_ep_return: traces.iter().map(|t| t.ep_return).sum::<f64>() / n,
    }
}

/// Evaluates `driver` on every clip; episodes start at frame 0, then at
/// evenly spaced frames when `episodes_per_clip` > 1. Clips are resampled to
/// the control rate first.
pub fn evaluate(
    model: &Arc<MskModel>,
    clips: &[MotionClip],
    cfg: &EnvConfig,
    driver: Driver,
    episodes_per_clip: usize,
) -> Result<(ValidationReport, Vec<EpisodeTrace>)> {
    if clips.is_empty() {
        return Err(Error::Input("evaluation needs at least one clip".into()));
    }
    let mut prepared: Vec<Arc<MotionClip>> = clips.iter().map(|c| prepare_clip(model, c, &cfg.sim).map(Arc::new)).collect::<Result<_>>()?;
    prepared.sort_by(|a, b| a.name.cmp(&b.name));
    let n_ep = episodes_per_clip.max(1);
    let mut traces = Vec::new();
    for clip in &prepared {
        let last = clip.frames.len() - 2;
        for e in 0..n_ep {
            let start = e * last / n_ep;
            traces.push(run_episode(model, clip, cfg, driver, start)?);
        }
    }
    let mut per_clip = Vec::new();
    for clip in &prepared {
        let ts: Vec<&EpisodeTrace> = traces.iter().filter(|t| t.clip == clip.name).collect();
        per_clip.push(aggregate(&clip.name, &ts));
    }
    let all: Vec<&EpisodeTrace> = traces.iter().collect();
    let report = ValidationReport {
        schema_version: REPORT_SCHEMA,
        driver: match driver {
            Driver::Policy(_) => "policy".into(),
            Driver::Oracle => "oracle".into(),
        },
        overall: aggregate("all", &all),
        per_clip,
    };
    Ok((report, traces))
}

/// Deterministic policy evaluation, one episode per clip per requested episode.
pub fn evaluate_policy(policy: &GaussianPolicy, model: &Arc<MskModel>, clips: &[MotionClip], cfg: &EnvConfig, n_episodes: usize) -> Result<ValidationReport> {
    Ok(evaluate(model, clips, cfg, Driver::Policy(policy), n_episodes)?.0)
}

/// Onset detection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitConfig {
    /// contact threshold as a fraction of body weight
    pub threshold_frac: f64,
    /// a contact state change must persist this long (s)
    pub hysteresis: f64,
    pub min_duration: f64,
    pub max_duration: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        Self { threshold_frac: 0.05, hysteresis: 0.05, min_duration: 0.0, max_duration: f64::INFINITY }
    }
}

/// Debounced upward threshold crossings (frame indices).
pub fn contact_onsets(grf: &[f64], rate: f64, threshold: f64, hysteresis: f64) -> Vec<usize> {
    let hold = ((hysteresis * rate).round() as usize).max(1);
    let mut onsets = Vec::new();
    let mut in_contact = false;
    let mut i = 0;
    while i < grf.len() {
        let above = grf[i] >= threshold;
        if above != in_contact {
            // the new state must hold for `hold` frames (or until the end)
            let end = (i + hold).min(grf.len());
            if grf[i..end].iter().all(|&g| (g >= threshold) == above) {
                if above {
                    onsets.push(i);
                }
                in_contact = above;
                i = end;
                continue;
            }
        }
        i += 1;
    }
    onsets
}

/// Onset-to-onset cycles of one foot's vertical GRF, duration-filtered.
pub fn segment_gait_cycles(grf: &[f64], rate: f64, body_weight: f64, cfg: &GaitConfig) -> Vec<(usize, usize)> {
    let onsets = contact_onsets(grf, rate, cfg.threshold_frac * body_weight, cfg.hysteresis);
    onsets
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|&(a, b)| {
            let d = (b - a) as f64 / rate;
            d >= cfg.min_duration && d <= cfg.max_duration
        })
        .collect()
}

/// Summed probe forces of the probes attached to the named link.
pub fn link_touch_series(model: &MskModel, trace: &EpisodeTrace, link: &str) -> Result<Vec<f64>> {
    let li = model
        .links
        .iter()
        .position(|l| l.name == link)
        .ok_or_else(|| Error::Input(format!("unknown link '{link}'")))?;
    let idx: Vec<usize> = model.probes().iter().enumerate().filter(|(_, p)| p.0 == li).map(|(i, _)| i).collect();
    Ok(trace.touch.iter().map(|t| idx.iter().map(|&i| t[i]).sum()).collect())
}

/// Mean ± population std over cycles on the 101-point grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitCycleProfile {
    pub name: String,
    pub percent: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_cycles: usize,
}

/// Resamples `series[start..=end]` linearly onto `n` points.
pub fn resample_cycle(series: &[f64], start: usize, end: usize, n: usize) -> Vec<f64> {
    let len = (end - start) as f64;
    (0..n)
        .map(|k| {
            let x = start as f64 + len * k as f64 / (n - 1) as f64;
            let i = (x.floor() as usize).min(end);
            let f = x - i as f64;
            if i >= end || f == 0.0 {
                series[i]
            } else {
                series[i] * (1.0 - f) + series[i + 1] * f
            }
        })
        .collect()
}

pub fn cycle_average(name: &str, series: &[f64], cycles: &[(usize, usize)]) -> Result<GaitCycleProfile> {
    let valid: Vec<&(usize, usize)> = cycles.iter().filter(|(a, b)| a < b && *b < series.len()).collect();
    if valid.is_empty() {
        return Err(Error::Input(format!("no usable cycles for '{name}'")));
    }
    let curves: Vec<Vec<f64>> = valid.iter().map(|&&(a, b)| resample_cycle(series, a, b, CYCLE_GRID)).collect();
    let n = curves.len() as f64;
    let mean: Vec<f64> = (0..CYCLE_GRID).map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / n).collect();
    let std = (0..CYCLE_GRID).map(|k| (curves.iter().map(|c| (c[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt()).collect();
    Ok(GaitCycleProfile {
        name: name.to_string(),
        percent: (0..CYCLE_GRID).map(|k| k as f64).collect(),
        mean,
        std,
        n_cycles: curves.len(),
    })
}

/// Second-order Butterworth low-pass (bilinear, prewarped) coefficients.
pub fn butter2_lowpass(cutoff: f64, rate: f64) -> ([f64; 3], [f64; 3]) {
    let k = (std::f64::consts::PI * cutoff / rate).tan();
    let r2 = std::f64::consts::SQRT_2;
    let norm = 1.0 / (1.0 + r2 * k + k * k);
    let b0 = k * k * norm;
    ([b0, 2.0 * b0, b0], [1.0, 2.0 * (k * k - 1.0) * norm, (1.0 - r2 * k + k * k) * norm])
}

fn filter_once(b: &[f64; 3], a: &[f64; 3], x: &[f64]) -> Vec<f64> {
    // transposed direct form II, started in steady state for x[0]
    let x0 = x[0];
    let mut z1 = x0 * (b[1] + b[2] - a[1] - a[2]);
    let mut z2 = x0 * (b[2] - a[2]);
    x.iter()
        .map(|&v| {
            let y = b[0] * v + z1;
            z1 = b[1] * v - a[1] * y + z2;
            z2 = b[2] * v - a[2] * y;
            y
        })
        .collect()
}

/// Zero-phase (forward-backward) second-order Butterworth low-pass.
pub fn lowpass_filtfilt(x: &[f64], rate: f64, cutoff: f64) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let (b, a) = butter2_lowpass(cutoff, rate);
    let mut y = filter_once(&b, &a, x);
    y.reverse();
    let mut z = filter_once(&b, &a, &y);
    z.reverse();
    z
}

pub const EMG_CUTOFF: f64 = 6.0;

/// Rectify, 6 Hz zero-phase low-pass, divide by the maximum.
pub fn emg_preprocess(raw: &[f64], rate: f64) -> Result<Vec<f64>> {
    if !(rate > 0.0) {
        return Err(Error::Input(format!("sample rate must be positive, got {rate}")));
    }
    let rect: Vec<f64> = raw.iter().map(|v| v.abs()).collect();
    if rect.iter().all(|v| *v == 0.0) {
        return Ok(rect);
    }
    let env: Vec<f64> = lowpass_filtfilt(&rect, rate, EMG_CUTOFF).into_iter().map(|v| v.max(0.0)).collect();
    let max = env.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Ok(vec![0.0; env.len()]);
    }
    Ok(env.iter().map(|v| (v / max).min(1.0)).collect())
}

/// Pearson r; `None` when either input has zero variance or lengths differ.
pub fn correlate(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Mean absolute joint-angle error (deg) over aligned frames and the named joints.
pub fn mpjae(model: &MskModel, sim: &MotionClip, reference: &MotionClip, joints: &[&str]) -> Result<f64> {
    let coords = joints
        .iter()
        .map(|j| model.joint_index(j).map(|i| model.joint_coord(i)).ok_or_else(|| Error::Input(format!("unknown joint '{j}'"))))
        .collect::<Result<Vec<_>>>()?;
    let n = sim.frames.len().min(reference.frames.len());
    if n == 0 || coords.is_empty() {
        return Err(Error::Input("mpjae needs at least one frame and one joint".into()));
    }
    let mut sum = 0.0;
    for (a, b) in sim.frames.iter().zip(&reference.frames).take(n) {
        for &c in &coords {
            sum += (a.q[c] - b.q[c]).abs();
        }
    }
    Ok(sum / (n * coords.len()) as f64 * 180.0 / std::f64::consts::PI)
}

/// Converts an episode trace into a clip at the trace rate (sites from kinematics).
pub fn trace_to_clip(model: &MskModel, trace: &EpisodeTrace, name: &str) -> MotionClip {
    let frames = trace
        .q
        .iter()
        .enumerate()
        .map(|(i, q)| {
            // velocities from neighbouring samples
            let (a, b) = (i.saturating_sub(1), (i + 1).min(trace.q.len() - 1));
            let dt = (b - a).max(1) as f64 / trace.rate;
            let qd: Vec<f64> = trace.q[b].iter().zip(&trace.q[a]).map(|(x, y)| (x - y) / dt).collect();
            Frame::from_state(model, q.clone(), qd)
        })
        .collect();
    MotionClip { name: name.into(), model_ref: model.name.clone(), rate: trace.rate, frames }
}

/// Contact pattern from kinematics alone: body weight while any probe on
/// `link` is within `tol` of the ground, else 0. For playback traces, which
/// carry no contact forces.
pub fn kinematic_contact_series(model: &MskModel, trace: &EpisodeTrace, link: &str, tol: f64) -> Result<Vec<f64>> {
    let li = model
        .links
        .iter()
        .position(|l| l.name == link)
        .ok_or_else(|| Error::Input(format!("unknown link '{link}'")))?;
    let weight = model.total_mass() * model.gravity.abs();
    Ok(trace
        .q
        .iter()
        .map(|q| {
            let pos = model.probe_positions(q);
            let touching = model.probes().iter().zip(&pos).any(|(p, x)| p.0 == li && x.y < tol);
            if touching { weight } else { 0.0 }
        })
        .collect())
}
