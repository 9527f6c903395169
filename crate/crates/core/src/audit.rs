//! Retargeting-quality metrics: joint-limit violations, ground penetration,
//! floating, tendon jumps and site RMSE.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{tendon_length, MskModel};
use crate::motion::MotionClip;

pub const AUDIT_SCHEMA_VERSION: u32 = 1;

/// Joint-limit tolerance (rad).
pub const JOINT_TOL: f64 = 1e-5;
/// Penetration depth counted towards prevalence (m).
pub const PEN_DEPTH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TendonJumpConfig {
    /// EMA smoothing coefficient
    pub alpha: f64,
    /// relative amplification over the EMA
    pub gamma_amp: f64,
    /// floor on the relative change that may be flagged
    pub dl_min_rel: f64,
    /// floor for the rest length
    pub eps: f64,
}

impl Default for TendonJumpConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            gamma_amp: 10.0,
            dl_min_rel: 1e-3,
            eps: 1e-9,
        }
    }
}

impl TendonJumpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || !(self.gamma_amp > 1.0) || !(self.dl_min_rel > 0.0) || !(self.eps > 0.0) {
            return Err(Error::Input(format!("invalid tendon-jump config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditReport {
    pub schema_version: u32,
    pub clip: String,
    /// % of frames with a joint outside its range
    pub p_joint: f64,
    /// % of frames penetrating deeper than 1 mm
    pub p_pen: f64,
    pub d_pen_max: f64,
    pub h_float_max: f64,
    pub dl_tj_max: f64,
    pub tj_detected: bool,
    /// only when a reference clip was supplied
    pub rmse: Option<f64>,
    /// wall-clock seconds per frame of the audit pass
    pub t_frame: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TendonJumps {
    pub dl_tj_max: f64,
    pub detected: bool,
    /// (muscle, frame) of every flagged step
    pub frames: Vec<(usize, usize)>,
}

fn check_clip(clip: &MotionClip, model: &MskModel) -> Result<()> {
    clip.validate()?;
    clip.check_model(model)
}

/// Percentage of frames where any joint leaves `[lo − tol, hi + tol]`.
pub fn joint_limit_violation_rate(clip: &MotionClip, model: &MskModel, tol: f64) -> Result<f64> {
    check_clip(clip, model)?;
    let n_root = model.n_root();
    let bad = clip
        .frames
        .iter()
        .filter(|f| {
            model.joints.iter().enumerate().any(|(j, joint)| {
                let q = f.q[n_root + j];
                joint.range_lo - q > tol || q - joint.range_hi > tol
            })
        })
        .count();
    Ok(100.0 * bad as f64 / clip.frames.len() as f64)
}

/// Lowest contact-probe height of every frame.
pub fn contact_heights(clip: &MotionClip, model: &MskModel) -> Vec<f64> {
    clip.frames.iter().filter_map(|f| model.min_probe_height(&f.q)).collect()
}

/// (prevalence %, severity m) from per-frame minimum contact heights.
pub fn penetration_from_heights(heights: &[f64], depth_thresh: f64) -> (f64, f64) {
    if heights.is_empty() {
        return (0.0, 0.0);
    }
    let depths = heights.iter().map(|h| (-h).max(0.0));
    let deep = depths.clone().filter(|&d| d > depth_thresh).count();
    (100.0 * deep as f64 / heights.len() as f64, depths.fold(0.0, f64::max))
}

/// Max floating height from per-frame minimum contact heights.
pub fn floating_from_heights(heights: &[f64]) -> f64 {
    heights.iter().map(|h| h.max(0.0)).fold(0.0, f64::max)
}

fn has_ground(clip: &MotionClip, model: &MskModel, what: &str) -> Result<bool> {
    check_clip(clip, model)?;
    if !model.root_free || model.n_probes() == 0 {
        log::warn!("{what} skipped: model '{}' is fixed-base or has no contact points", model.name);
        return Ok(false);
    }
    Ok(true)
}

pub fn penetration_metrics(clip: &MotionClip, model: &MskModel, depth_thresh: f64) -> Result<(f64, f64)> {
    if !has_ground(clip, model, "penetration audit")? {
        return Ok((0.0, 0.0));
    }
    Ok(penetration_from_heights(&contact_heights(clip, model), depth_thresh))
}

pub fn floating_height(clip: &MotionClip, model: &MskModel) -> Result<f64> {
    if !has_ground(clip, model, "floating audit")? {
        return Ok(0.0);
    }
    Ok(floating_from_heights(&contact_heights(clip, model)))
}

/// Flags frame-to-frame relative length changes that exceed both the
/// amplified running mean of past changes and the absolute floor.
///
/// `lengths[m][t]` is the length of muscle `m` at frame `t`.
pub fn tendon_jump_detect(lengths: &[Vec<f64>], l0: &[f64], cfg: &TendonJumpConfig) -> Result<TendonJumps> {
    cfg.validate()?;
    if lengths.len() != l0.len() {
        return Err(Error::Input(format!("{} length series but {} rest lengths", lengths.len(), l0.len())));
    }
    let mut out = TendonJumps { dl_tj_max: 0.0, detected: false, frames: Vec::new() };
    for (m, (series, &rest)) in lengths.iter().zip(l0).enumerate() {
        if series.len() < 2 {
            return Err(Error::Input(format!("muscle {m}: need at least 2 frames")));
        }
        if !(rest > 0.0) {
            return Err(Error::Input(format!("muscle {m}: rest length must be positive")));
        }
        let scale = rest.max(cfg.eps);
        let mut ema = 0.0;
        for t in 1..series.len() {
            let dl = (series[t] - series[t - 1]).abs() / scale;
            if t == 1 {
                ema = dl;
                continue;
            }
            if dl > (cfg.gamma_amp * ema).max(cfg.dl_min_rel) {
                out.detected = true;
                out.dl_tj_max = out.dl_tj_max.max(dl);
                out.frames.push((m, t));
            }
            ema = ema_update(ema, dl, cfg.alpha);
        }
    }
    Ok(out)
}

/// One step of the exponential moving average.
#[inline]
pub fn ema_update(ema: f64, x: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * ema + alpha * x
}

/// Root-mean-square site-position error, pooled over frames and sites.
pub fn clip_rmse(clip: &MotionClip, reference: &MotionClip) -> Result<f64> {
    if clip.frames.len() != reference.frames.len() || clip.n_sites() != reference.n_sites() {
        return Err(Error::Input(format!(
            "clip '{}' ({} frames, {} sites) and reference '{}' ({} frames, {} sites) differ; resample first",
            clip.name,
            clip.frames.len(),
            clip.n_sites(),
            reference.name,
            reference.frames.len(),
            reference.n_sites()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in clip.frames.iter().zip(&reference.frames) {
        for (p, r) in a.site_pos.iter().zip(&b.site_pos) {
            sum += (p - r).norm_squared();
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { (sum / n as f64).sqrt() })
}

pub fn audit_clip(clip: &MotionClip, model: &MskModel, reference: Option<&MotionClip>, cfg: &TendonJumpConfig) -> Result<AuditReport> {
    let start = Instant::now();
    let p_joint = joint_limit_violation_rate(clip, model, JOINT_TOL)?;
    let (p_pen, d_pen_max, h_float_max) = if has_ground(clip, model, "ground audit")? {
        let h = contact_heights(clip, model);
        let (p, d) = penetration_from_heights(&h, PEN_DEPTH);
        (p, d, floating_from_heights(&h))
    } else {
        (0.0, 0.0, 0.0)
    };
    let per_frame: Vec<Vec<f64>> = clip.frames.iter().map(|f| tendon_length(model, &f.q)).collect();
    let lengths: Vec<Vec<f64>> = (0..model.n_muscles()).map(|m| per_frame.iter().map(|l| l[m]).collect()).collect();
    let l0: Vec<f64> = model.muscles.iter().map(|m| m.path.rest_length).collect();
    let tj = tendon_jump_detect(&lengths, &l0, cfg)?;
    let rmse = reference.map(|r| clip_rmse(clip, r)).transpose()?;
    Ok(AuditReport {
        schema_version: AUDIT_SCHEMA_VERSION,
        clip: clip.name.clone(),
        p_joint,
        p_pen,
        d_pen_max,
        h_float_max,
        dl_tj_max: tj.dl_tj_max,
        tj_detected: tj.detected,
        rmse,
        t_frame: start.elapsed().as_secs_f64() / clip.frames.len() as f64,
    })
}

/// Arithmetic mean of per-clip reports, taken in clip-name order. A jump in
/// any clip marks the batch; RMSE averages over clips that have one.
pub fn mean_report(reports: &[AuditReport]) -> Result<AuditReport> {
    if reports.is_empty() {
        return Err(Error::Input("no reports to average".into()));
    }
    let mut sorted: Vec<&AuditReport> = reports.iter().collect();
    sorted.sort_by(|a, b| a.clip.cmp(&b.clip));
    let n = sorted.len() as f64;
    let mean = |f: fn(&AuditReport) -> f64| sorted.iter().map(|r| f(r)).sum::<f64>() / n;
    let rmses: Vec<f64> = sorted.iter().filter_map(|r| r.rmse).collect();
    Ok(AuditReport {
        schema_version: AUDIT_SCHEMA_VERSION,
        clip: format!("mean of {} clips", sorted.len()),
        p_joint: mean(|r| r.p_joint),
        p_pen: mean(|r| r.p_pen),
        d_pen_max: mean(|r| r.d_pen_max),
        h_float_max: mean(|r| r.h_float_max),
        dl_tj_max: mean(|r| r.dl_tj_max),
        tj_detected: sorted.iter().any(|r| r.tj_detected),
        rmse: (!rmses.is_empty()).then(|| rmses.iter().sum::<f64>() / rmses.len() as f64),
        t_frame: mean(|r| r.t_frame),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MskModel, Vec2};
    use crate::motion::{preset, synth_clip, Frame, SynthKind, SynthParams};
    use proptest::prelude::*;

    fn arm_with_range(lo: f64, hi: f64) -> MskModel {
        let mut doc = MskModel::resolve("arm2").unwrap().to_doc();
        doc.joints[0].range_lo = lo;
        doc.joints[0].range_hi = hi;
        MskModel::from_doc(doc).unwrap()
    }

    fn clip_from_q(model: &MskModel, qs: &[Vec<f64>]) -> MotionClip {
        MotionClip {
            name: "c".into(),
            model_ref: model.name.clone(),
            rate: 100.0,
            frames: qs.iter().map(|q| Frame::from_state(model, q.clone(), vec![0.0; q.len()])).collect(),
        }
    }

    #[test]
    fn joint_violation_fixture() {
        let m = arm_with_range(-1.0, 1.0);
        let clip = clip_from_q(&m, &[vec![0.0, 1.0], vec![1.0 + 2e-5, 1.0], vec![-1.0 - 1e-6, 1.0]]);
        let rate = joint_limit_violation_rate(&clip, &m, JOINT_TOL).unwrap();
        assert!((rate - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(format!("{rate:.2}"), "33.33");
        let inside = clip_from_q(&m, &[vec![0.0, 1.0], vec![0.5, 1.0]]);
        assert_eq!(joint_limit_violation_rate(&inside, &m, JOINT_TOL).unwrap(), 0.0);
    }

    #[test]
    fn joint_violation_boundary_is_strict() {
        // exceedance of exactly the tolerance, built so the float difference is exact
        let m = arm_with_range(-0.5, 0.5);
        let q = 0.5 + 0.0000152587890625; // 0.5 + 2^-16
        let clip = clip_from_q(&m, &[vec![q, 1.0], vec![0.0, 1.0]]);
        assert_eq!(joint_limit_violation_rate(&clip, &m, 0.0000152587890625).unwrap(), 0.0);
    }

    #[test]
    fn penetration_fixture() {
        let (p, d) = penetration_from_heights(&[-0.002, 0.0005, -0.0015, 0.01], PEN_DEPTH);
        assert_eq!(p, 50.0);
        assert_eq!(d, 0.002);
        assert_eq!(penetration_from_heights(&[0.1, 0.2], PEN_DEPTH), (0.0, 0.0));
        assert_eq!(penetration_from_heights(&[-0.001], PEN_DEPTH), (0.0, 0.001));
    }

    #[test]
    fn floating_fixture() {
        assert_eq!(floating_from_heights(&[0.0, 0.0]), 0.0);
        assert_eq!(floating_from_heights(&[0.0, 0.012, 0.023]), 0.023);
        assert_eq!(floating_from_heights(&[-0.3, -0.01]), 0.0);
    }

    #[test]
    fn fixed_base_ground_metrics_are_zero() {
        let clip = preset("arm2_reach").unwrap();
        let arm = MskModel::resolve("arm2").unwrap();
        assert_eq!(penetration_metrics(&clip, &arm, PEN_DEPTH).unwrap(), (0.0, 0.0));
        assert_eq!(floating_height(&clip, &arm).unwrap(), 0.0);
    }

    #[test]
    fn tendon_jump_examples() {
        let cfg = TendonJumpConfig::default();
        let flat = tendon_jump_detect(&[vec![0.3; 50]], &[0.3], &cfg).unwrap();
        assert_eq!((flat.dl_tj_max, flat.detected), (0.0, false));

        let uniform: Vec<f64> = (0..300).map(|t| 1.0 + 1e-4 * t as f64).collect();
        assert!(!tendon_jump_detect(&[uniform], &[1.0], &cfg).unwrap().detected);

        let mut l = vec![1.0];
        for _ in 0..200 {
            l.push(l.last().unwrap() + 1e-5);
        }
        l.push(l.last().unwrap() + 0.01);
        let tj = tendon_jump_detect(&[l], &[1.0], &cfg).unwrap();
        assert!(tj.detected);
        assert_eq!(tj.frames, vec![(0, 201)]);
        assert!((tj.dl_tj_max - 0.01).abs() < 1e-12);
    }

    #[test]
    fn tendon_jump_first_step_never_flagged() {
        let tj = tendon_jump_detect(&[vec![1.0, 2.0, 2.0]], &[1.0], &TendonJumpConfig::default()).unwrap();
        assert!(!tj.detected);
    }

    #[test]
    fn rmse_fixtures() {
        let clip = preset("arm2_reach").unwrap();
        assert_eq!(clip_rmse(&clip, &clip).unwrap(), 0.0);
        let mut shifted = clip.clone();
        shifted.frames.iter_mut().for_each(|f| f.site_pos.iter_mut().for_each(|p| *p += Vec2::new(0.03, 0.04)));
        assert!((clip_rmse(&shifted, &clip).unwrap() - 0.05).abs() < 1e-12);

        let one = MotionClip { frames: clip.frames[..1].to_vec(), ..clip.clone() };
        let mut two = one.clone();
        two.frames[0].site_pos.truncate(2);
        let mut off = two.clone();
        off.frames[0].site_pos[0].x += 0.1;
        assert!((clip_rmse(&off, &two).unwrap() - (0.01f64 / 2.0).sqrt()).abs() < 1e-12);

        let short = MotionClip { frames: clip.frames[..10].to_vec(), ..clip.clone() };
        assert!(matches!(clip_rmse(&short, &clip), Err(Error::Input(_))));
    }

    #[test]
    fn clean_clip_audits_to_zero_and_round_trips() {
        let w = MskModel::resolve("walker7").unwrap();
        let mut center = w.neutral_q();
        center[1] = -w.min_probe_height(&center).unwrap();
        let params = SynthParams { center, duration: 1.0, ..Default::default() };
        let clip = synth_clip(SynthKind::Hold, &params, &w).unwrap();
        let r = audit_clip(&clip, &w, Some(&clip), &TendonJumpConfig::default()).unwrap();
        assert_eq!((r.p_joint, r.p_pen, r.dl_tj_max), (0.0, 0.0, 0.0));
        // the standing height is only exact up to rounding
        assert!(r.d_pen_max < 1e-12 && r.h_float_max < 1e-12);
        assert!(!r.tj_detected);
        assert_eq!(r.rmse, Some(0.0));
        let back: AuditReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn mean_report_is_arithmetic() {
        let base = AuditReport {
            schema_version: AUDIT_SCHEMA_VERSION,
            clip: "b".into(),
            p_joint: 10.0,
            p_pen: 0.0,
            d_pen_max: 0.002,
            h_float_max: 0.0,
            dl_tj_max: 0.0,
            tj_detected: false,
            rmse: None,
            t_frame: 1e-6,
        };
        let other = AuditReport { clip: "a".into(), p_joint: 30.0, tj_detected: true, rmse: Some(0.1), ..base.clone() };
        let m = mean_report(&[base, other]).unwrap();
        assert_eq!(m.p_joint, 20.0);
        assert!(m.tj_detected);
        assert_eq!(m.rmse, Some(0.1));
    }

    proptest! {
        #[test]
        fn tendon_jump_scale_invariant(
            steps in proptest::collection::vec(-0.02f64..0.02, 2..80), c in 0.01f64..100.0,
        ) {
            let mut l = vec![1.0];
            for s in &steps {
                l.push(l.last().unwrap() + s);
            }
            let cfg = TendonJumpConfig::default();
            let a = tendon_jump_detect(&[l.clone()], &[1.0], &cfg).unwrap();
            let scaled: Vec<f64> = l.iter().map(|v| v * c).collect();
            let b = tendon_jump_detect(&[scaled], &[c], &cfg).unwrap();
            prop_assert_eq!(a.detected, b.detected);
            prop_assert!((a.dl_tj_max - b.dl_tj_max).abs() <= 1e-9 * a.dl_tj_max.max(1e-12));
        }

        #[test]
        fn ema_converges_monotonically(x in 0.0f64..1.0, start in 0.0f64..1.0, alpha in 1e-3f64..=1.0) {
            let mut ema = start;
            let mut gap = (ema - x).abs();
            for _ in 0..500 {
                ema = ema_update(ema, x, alpha);
                let g = (ema - x).abs();
                prop_assert!(g <= gap + 4.0 * f64::EPSILON);
                gap = g;
            }
        }

        #[test]
        fn penetration_bounds(heights in proptest::collection::vec(-0.01f64..0.01, 1..50)) {
            let (p, d) = penetration_from_heights(&heights, PEN_DEPTH);
            prop_assert!((0.0..=100.0).contains(&p));
            let floor = if p > 0.0 { PEN_DEPTH } else { 0.0 };
            prop_assert!(d >= floor);
        }

        #[test]
        fn metrics_invariant_under_horizontal_translation(dx in -5.0f64..5.0) {
            let w = MskModel::resolve("walker7").unwrap();
            let clip = preset("walker_gait").unwrap();
            let mut moved = clip.clone();
            for f in &mut moved.frames {
                f.q[0] += dx;
                f.refresh_sites(&w);
            }
            let cfg = TendonJumpConfig::default();
            let a = audit_clip(&clip, &w, Some(&clip), &cfg).unwrap();
            let b = audit_clip(&moved, &w, Some(&moved), &cfg).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9;
            prop_assert_eq!(a.p_joint, b.p_joint);
            prop_assert_eq!(a.p_pen, b.p_pen);
            prop_assert_eq!(a.tj_detected, b.tj_detected);
            prop_assert!(close(a.d_pen_max, b.d_pen_max) && close(a.h_float_max, b.h_float_max));
            prop_assert!(close(a.dl_tj_max, b.dl_tj_max));
            prop_assert_eq!(a.rmse, b.rmse);
        }
    }
}
