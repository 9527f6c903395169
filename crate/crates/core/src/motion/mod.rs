//! Reference motion clips.
//!
//! On disk a clip is a pair: `<stem>.mmclip.json` (header) and
//! `<stem>.mmclip.csv` (one row per frame). Column order is
//! `q_0..q_{n-1}, qd_0..qd_{n-1}`, then for each site `s{i}_x, s{i}_z,
//! s{i}_rot, s{i}_vx, s{i}_vz, s{i}_w`, then an optional `grf` column.
//! Floats are written in shortest round-trip form, so save/load is exact.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MskModel, Vec2};

pub const CLIP_FORMAT: &str = "mmclip";
pub const CLIP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub q: Vec<f64>,
    pub q_dot: Vec<f64>,
    pub site_pos: Vec<Vec2>,
    pub site_rot: Vec<f64>,
    pub site_linvel: Vec<Vec2>,
    pub site_angvel: Vec<f64>,
    /// vertical ground force (N), when recorded
    pub grf: Option<f64>,
}

impl Frame {
    /// Frame with sites filled from forward kinematics.
    pub fn from_state(model: &MskModel, q: Vec<f64>, q_dot: Vec<f64>) -> Self {
        let mut f = Frame {
            q,
            q_dot,
            site_pos: Vec::new(),
            site_rot: Vec::new(),
            site_linvel: Vec::new(),
            site_angvel: Vec::new(),
            grf: None,
        };
        f.refresh_sites(model);
        f
    }

    pub fn refresh_sites(&mut self, model: &MskModel) {
        let sk = model.site_kinematics(&self.q, &self.q_dot);
        self.site_pos = sk.iter().map(|s| s.pos).collect();
        self.site_rot = sk.iter().map(|s| s.rot).collect();
        self.site_linvel = sk.iter().map(|s| s.linvel).collect();
        self.site_angvel = sk.iter().map(|s| s.angvel).collect();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub name: String,
    pub model_ref: String,
    /// frames per second
    pub rate: f64,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClipHeader {
    format: String,
    version: u32,
    name: String,
    model_ref: String,
    rate: f64,
    n_q: usize,
    n_sites: usize,
    has_sites: bool,
    has_grf: bool,
    n_frames: usize,
}

impl MotionClip {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Seconds between first and last frame.
    pub fn duration(&self) -> f64 {
        (self.frames.len().saturating_sub(1)) as f64 / self.rate
    }

    pub fn n_q(&self) -> usize {
        self.frames.first().map_or(0, |f| f.q.len())
    }

    pub fn n_sites(&self) -> usize {
        self.frames.first().map_or(0, |f| f.site_pos.len())
    }

    /// Checks rate, frame count, shapes and finiteness.
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::Data(format!("clip '{}': rate must be positive, got {}", self.name, self.rate)));
        }
        if self.frames.len() < 2 {
            return Err(Error::Data(format!(
                "clip '{}': needs at least 2 frames, got {}",
                self.name,
                self.frames.len()
            )));
        }
        let (nq, ns) = (self.n_q(), self.n_sites());
        let has_grf = self.frames[0].grf.is_some();
        for (i, f) in self.frames.iter().enumerate() {
            let shapes = [f.q.len(), f.q_dot.len()];
            let sites = [f.site_pos.len(), f.site_rot.len(), f.site_linvel.len(), f.site_angvel.len()];
            if shapes.iter().any(|&d| d != nq) || sites.iter().any(|&d| d != ns) || f.grf.is_some() != has_grf {
                return Err(Error::Data(format!("clip '{}': frame {i} has inconsistent dimensions", self.name)));
            }
            let finite = f.q.iter().chain(&f.q_dot).chain(&f.site_rot).chain(&f.site_angvel).all(|v| v.is_finite())
                && f.site_pos.iter().chain(&f.site_linvel).all(|v| v.x.is_finite() && v.y.is_finite())
                && f.grf.is_none_or(|g| g.is_finite());
            if !finite {
                return Err(Error::Data(format!("clip '{}': frame {i} contains non-finite values", self.name)));
            }
        }
        Ok(())
    }

    /// Checks that the clip's shapes fit `model`.
    pub fn check_model(&self, model: &MskModel) -> Result<()> {
        if self.n_q() != model.n_dof() || self.n_sites() != model.n_sites() {
            return Err(Error::Input(format!(
                "clip '{}' ({} coordinates, {} sites) does not fit model '{}' ({} coordinates, {} sites)",
                self.name,
                self.n_q(),
                self.n_sites(),
                model.name,
                model.n_dof(),
                model.n_sites()
            )));
        }
        Ok(())
    }
}

/// Header and frame-table paths for a clip stem or either file of the pair.
pub fn clip_paths(path: &Path) -> (PathBuf, PathBuf) {
    let s = path.to_string_lossy();
    let stem = [".mmclip.json", ".mmclip.csv", ".json", ".csv"]
        .iter()
        .find_map(|ext| s.strip_suffix(ext))
        .unwrap_or(&s)
        .to_string();
    (
        PathBuf::from(format!("{stem}.mmclip.json")),
        PathBuf::from(format!("{stem}.mmclip.csv")),
    )
}

fn column_names(n_q: usize, n_sites: usize, has_sites: bool, has_grf: bool) -> Vec<String> {
    let mut cols: Vec<String> = (0..n_q).map(|i| format!("q_{i}")).collect();
    cols.extend((0..n_q).map(|i| format!("qd_{i}")));
    if has_sites {
        for s in 0..n_sites {
            for c in ["x", "z", "rot", "vx", "vz", "w"] {
                cols.push(format!("s{s}_{c}"));
            }
        }
    }
    if has_grf {
        cols.push("grf".into());
    }
    cols
}

/// Writes the header/table pair. Returns the two paths written.
pub fn save_clip(clip: &MotionClip, path: &Path) -> Result<(PathBuf, PathBuf)> {
    clip.validate()?;
    let (json_path, csv_path) = clip_paths(path);
    let has_grf = clip.frames[0].grf.is_some();
    let header = ClipHeader {
        format: CLIP_FORMAT.into(),
        version: CLIP_VERSION,
        name: clip.name.clone(),
        model_ref: clip.model_ref.clone(),
        rate: clip.rate,
        n_q: clip.n_q(),
        n_sites: clip.n_sites(),
        has_sites: true,
        has_grf,
        n_frames: clip.frames.len(),
    };
    let text = serde_json::to_string_pretty(&header).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;

    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Data(format!("{}: {e}", csv_path.display())))?;
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", csv_path.display()));
    w.write_record(column_names(header.n_q, header.n_sites, true, has_grf)).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::new();
    for f in &clip.frames {
        row.clear();
        row.extend(f.q.iter().chain(&f.q_dot).map(|v| v.to_string()));
        for s in 0..header.n_sites {
            let vals = [
                f.site_pos[s].x,
                f.site_pos[s].y,
                f.site_rot[s],
                f.site_linvel[s].x,
                f.site_linvel[s].y,
                f.site_angvel[s],
            ];
            row.extend(vals.iter().map(|v| v.to_string()));
        }
        if let Some(g) = f.grf {
            row.push(g.to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok((json_path, csv_path))
}

/// Loads a clip. Site kinematics absent from the table are recomputed from
/// `q` with the model named by `model_ref`.
pub fn load_clip(path: &Path) -> Result<MotionClip> {
    let (json_path, csv_path) = clip_paths(path);
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let header: ClipHeader =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", json_path.display())))?;
    if header.format != CLIP_FORMAT || header.version != CLIP_VERSION {
        return Err(Error::Parse(format!(
            "{}: unsupported clip format {} v{}",
            json_path.display(),
            header.format,
            header.version
        )));
    }
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| Error::Parse(format!("{}: {e}", csv_path.display())))?;
    let expected = column_names(header.n_q, header.n_sites, header.has_sites, header.has_grf);
    let got: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", csv_path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if got != expected {
        return Err(Error::Parse(format!(
            "{}: column header does not match the declared dimensions",
            csv_path.display()
        )));
    }
    let (nq, ns) = (header.n_q, header.n_sites);
    let mut frames = Vec::with_capacity(header.n_frames);
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("{}: frame {i}: {e}", csv_path.display())))?;
        if rec.len() != expected.len() {
            return Err(Error::Parse(format!(
                "{}: frame {i}: expected {} values, got {}",
                csv_path.display(),
                expected.len(),
                rec.len()
            )));
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Parse(format!("{}: frame {i}: column '{}' is not a number: {field:?}", csv_path.display(), expected[c]))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{}: frame {i}: column '{}' is not finite",
                    csv_path.display(),
                    expected[c]
                )));
            }
            vals.push(v);
        }
        let mut f = Frame {
            q: vals[..nq].to_vec(),
            q_dot: vals[nq..2 * nq].to_vec(),
            site_pos: Vec::new(),
            site_rot: Vec::new(),
            site_linvel: Vec::new(),
            site_angvel: Vec::new(),
            grf: header.has_grf.then(|| vals[vals.len() - 1]),
        };
        if header.has_sites {
            for s in 0..ns {
                let b = 2 * nq + 6 * s;
                f.site_pos.push(Vec2::new(vals[b], vals[b + 1]));
                f.site_rot.push(vals[b + 2]);
                f.site_linvel.push(Vec2::new(vals[b + 3], vals[b + 4]));
                f.site_angvel.push(vals[b + 5]);
            }
        }
        frames.push(f);
    }
    if frames.len() != header.n_frames {
        return Err(Error::Parse(format!(
            "{}: header declares {} frames, table has {}",
            json_path.display(),
            header.n_frames,
            frames.len()
        )));
    }
    let mut clip = MotionClip {
        name: header.name,
        model_ref: header.model_ref,
        rate: header.rate,
        frames,
    };
    if !header.has_sites {
        let model = MskModel::resolve(&clip.model_ref)?;
        clip.frames.iter_mut().for_each(|f| f.refresh_sites(&model));
    }
    clip.validate()?;
    Ok(clip)
}

/// Central differences (one-sided at the ends) of a uniformly sampled series.
fn differentiate(values: &[f64], rate: f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|k| {
            if n < 2 {
                0.0
            } else if k == 0 {
                (values[1] - values[0]) * rate
            } else if k == n - 1 {
                (values[n - 1] - values[n - 2]) * rate
            } else {
                (values[k + 1] - values[k - 1]) * rate / 2.0
            }
        })
        .collect()
}

/// Replaces every frame's `q_dot` by finite differences of `q`.
pub fn recompute_velocities(clip: &mut MotionClip) {
    let nq = clip.n_q();
    for c in 0..nq {
        let series: Vec<f64> = clip.frames.iter().map(|f| f.q[c]).collect();
        for (f, v) in clip.frames.iter_mut().zip(differentiate(&series, clip.rate)) {
            f.q_dot[c] = v;
        }
    }
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}

fn resample_positions(clip: &MotionClip, target_rate: f64) -> Result<MotionClip> {
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(Error::Input(format!("target rate must be positive, got {target_rate}")));
    }
    let duration = clip.duration();
    let n = (duration * target_rate + 1e-9).floor() as usize + 1;
    let last = clip.frames.len() - 1;
    let frames = (0..n)
        .map(|k| {
            let s = (k as f64 / target_rate * clip.rate).min(last as f64);
            let i = (s.floor() as usize).min(last.saturating_sub(1));
            let w = s - i as f64;
            let (a, b) = (&clip.frames[i], &clip.frames[i + 1]);
            Frame {
                q: a.q.iter().zip(&b.q).map(|(x, y)| lerp(*x, *y, w)).collect(),
                q_dot: vec![0.0; a.q.len()],
                site_pos: a.site_pos.iter().zip(&b.site_pos).map(|(x, y)| x + (y - x) * w).collect(),
                site_rot: a.site_rot.iter().zip(&b.site_rot).map(|(x, y)| lerp(*x, *y, w)).collect(),
                site_linvel: vec![Vec2::zeros(); a.site_pos.len()],
                site_angvel: vec![0.0; a.site_pos.len()],
                grf: a.grf.zip(b.grf).map(|(x, y)| lerp(x, y, w)),
            }
        })
        .collect();
    let mut out = MotionClip {
        name: clip.name.clone(),
        model_ref: clip.model_ref.clone(),
        rate: target_rate,
        frames,
    };
    recompute_velocities(&mut out);
    Ok(out)
}

/// Linear interpolation to `target_rate`; velocities are recomputed as
/// finite differences of the resampled positions (sites included).
pub fn resample(clip: &MotionClip, target_rate: f64) -> Result<MotionClip> {
    if target_rate == clip.rate {
        return Ok(clip.clone());
    }
    let mut out = resample_positions(clip, target_rate)?;
    for s in 0..out.n_sites() {
        let xs: Vec<f64> = out.frames.iter().map(|f| f.site_pos[s].x).collect();
        let zs: Vec<f64> = out.frames.iter().map(|f| f.site_pos[s].y).collect();
        let rs: Vec<f64> = out.frames.iter().map(|f| f.site_rot[s]).collect();
        let (vx, vz, w) = (
            differentiate(&xs, target_rate),
            differentiate(&zs, target_rate),
            differentiate(&rs, target_rate),
        );
        for (k, f) in out.frames.iter_mut().enumerate() {
            f.site_linvel[s] = Vec2::new(vx[k], vz[k]);
            f.site_angvel[s] = w[k];
        }
    }
    Ok(out)
}

/// Like [`resample`], but site kinematics are recomputed from the
/// resampled joint trajectory with forward kinematics.
pub fn resample_with_model(clip: &MotionClip, target_rate: f64, model: &MskModel) -> Result<MotionClip> {
    clip.check_model(model)?;
    if target_rate == clip.rate {
        return Ok(clip.clone());
    }
    let mut out = resample_positions(clip, target_rate)?;
    out.frames.iter_mut().for_each(|f| f.refresh_sites(model));
    Ok(out)
}

/// Lowest contact-probe height over all frames.
pub fn min_contact_height(clip: &MotionClip, model: &MskModel) -> Option<f64> {
    clip.frames
        .iter()
        .filter_map(|f| model.min_probe_height(&f.q))
        .reduce(f64::min)
}

/// Rigid vertical shift so the lowest contact probe over the whole clip
/// touches the ground. Fixed-base models are returned unchanged.
pub fn ground_correct(clip: &MotionClip, model: &MskModel) -> Result<MotionClip> {
    clip.check_model(model)?;
    if !model.root_free {
        log::warn!("ground correction skipped: model '{}' has a fixed base", model.name);
        return Ok(clip.clone());
    }
    let Some(min_h) = min_contact_height(clip, model) else {
        return Err(Error::Input(format!("model '{}' has no contact points", model.name)));
    };
    let mut out = clip.clone();
    if min_h.abs() < 1e-12 {
        return Ok(out);
    }
    for f in &mut out.frames {
        f.q[1] -= min_h;
        f.site_pos.iter_mut().for_each(|p| p.y -= min_h);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    Hold,
    Ramp,
    Sinusoid,
}

/// Synthetic clip parameters. Vectors are per coordinate; empty means
/// zeros (or the neutral pose for `center`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub name: String,
    pub rate: f64,
    /// seconds; the clip has `round(duration·rate)` frames
    pub duration: f64,
    /// hold pose, ramp start, or sinusoid center
    pub center: Vec<f64>,
    /// ramp end pose
    pub target: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
    /// Hz
    pub frequency: f64,
    /// constant horizontal root velocity (free-root models), m/s
    pub drift: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            rate: 100.0,
            duration: 1.0,
            center: Vec::new(),
            target: Vec::new(),
            amplitude: Vec::new(),
            phase: Vec::new(),
            frequency: 1.0,
            drift: 0.0,
        }
    }
}

fn per_coord(v: &[f64], n: usize, what: &str, default: &[f64]) -> Result<Vec<f64>> {
    match v.len() {
        0 => Ok(default.to_vec()),
        l if l == n => Ok(v.to_vec()),
        l => Err(Error::Input(format!("{what} has {l} entries, model has {n} coordinates"))),
    }
}

/// Generates a kinematically exact clip: velocities are analytic
/// derivatives, sites come from forward kinematics.
pub fn synth_clip(kind: SynthKind, params: &SynthParams, model: &MskModel) -> Result<MotionClip> {
    let n = model.n_dof();
    if !(params.rate > 0.0 && params.duration > 0.0) {
        return Err(Error::Input("rate and duration must be positive".into()));
    }
    let n_frames = (params.duration * params.rate).round() as usize;
    if n_frames < 2 {
        return Err(Error::Input(format!("duration {} s gives fewer than 2 frames", params.duration)));
    }
    let zeros = vec![0.0; n];
    let center = per_coord(&params.center, n, "center", &model.neutral_q())?;
    let target = per_coord(&params.target, n, "target", &center)?;
    let amp = per_coord(&params.amplitude, n, "amplitude", &zeros)?;
    let phase = per_coord(&params.phase, n, "phase", &zeros)?;
    if params.drift != 0.0 && !model.root_free {
        return Err(Error::Input("drift needs a free-root model".into()));
    }

    let n_root = model.n_root();
    for (j, joint) in model.joints.iter().enumerate() {
        let c = n_root + j;
        let (lo, hi) = match kind {
            SynthKind::Hold => (center[c], center[c]),
            SynthKind::Ramp => (center[c].min(target[c]), center[c].max(target[c])),
            SynthKind::Sinusoid => (center[c] - amp[c].abs(), center[c] + amp[c].abs()),
        };
        if lo < joint.range_lo || hi > joint.range_hi {
            return Err(Error::Input(format!(
                "joint '{}' would reach [{lo}, {hi}] outside its range [{}, {}]",
                joint.name, joint.range_lo, joint.range_hi
            )));
        }
    }

    let omega = TAU * params.frequency;
    let frames = (0..n_frames)
        .map(|k| {
            let t = k as f64 / params.rate;
            let (mut q, mut qd) = (vec![0.0; n], vec![0.0; n]);
            for c in 0..n {
                (q[c], qd[c]) = match kind {
                    SynthKind::Hold => (center[c], 0.0),
                    SynthKind::Ramp => {
                        let rate = (target[c] - center[c]) / params.duration;
                        (center[c] + rate * t, rate)
                    }
                    SynthKind::Sinusoid => {
                        let arg = omega * t + phase[c];
                        (center[c] + amp[c] * arg.sin(), amp[c] * omega * arg.cos())
                    }
                };
            }
            if model.root_free {
                q[0] += params.drift * t;
                qd[0] += params.drift;
            }
            Frame::from_state(model, q, qd)
        })
        .collect();
    Ok(MotionClip {
        name: params.name.clone(),
        model_ref: model.name.clone(),
        rate: params.rate,
        frames,
    })
}

/// Names accepted by [`preset`].
pub fn preset_names() -> &'static [&'static str] {
    &["arm2_reach", "walker_gait"]
}

/// Stride frequency of the `walker_gait` preset (Hz).
pub const WALKER_GAIT_STRIDE_HZ: f64 = 0.9;

/// Bundled reference clips: a 1 Hz two-joint reach for `arm2` and a 1 m/s
/// walking gait for `walker7`. Both are 4 s at 100 Hz.
pub fn preset(name: &str) -> Result<MotionClip> {
    match name {
        "arm2_reach" => {
            let model = MskModel::resolve("arm2")?;
            let params = SynthParams {
                name: name.into(),
                duration: 4.0,
                center: vec![0.7, 1.1],
                amplitude: vec![0.4, 0.5],
                phase: vec![0.0, std::f64::consts::FRAC_PI_2],
                frequency: 1.0,
                ..SynthParams::default()
            };
            synth_clip(SynthKind::Sinusoid, &params, &model)
        }
        "walker_gait" => walker_gait(),
        other => Err(Error::Input(format!(
            "unknown clip preset '{other}' (available: {})",
            preset_names().join(", ")
        ))),
    }
}

/// Sinusoidal leg kinematics with the pelvis height chosen per frame so
/// the lowest foot probe stays on the ground.
fn walker_gait() -> Result<MotionClip> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let model = MskModel::resolve("walker7")?;
    let mut center = model.neutral_q();
    let mut amp = vec![0.0; model.n_dof()];
    let mut phase = vec![0.0; model.n_dof()];
    let coord = |name: String| {
        model
            .joint_index(&name)
            .map(|j| model.joint_coord(j))
            .ok_or_else(|| Error::Model(format!("walker7 lacks joint '{name}'")))
    };
    for (side, offset) in [("l", 0.0), ("r", PI)] {
        let hip = coord(format!("hip_{side}"))?;
        let knee = coord(format!("knee_{side}"))?;
        let ankle = coord(format!("ankle_{side}"))?;
        (center[hip], amp[hip], phase[hip]) = (0.15, 0.35, offset);
        // knee flexes most while the hip swings forward
        (center[knee], amp[knee], phase[knee]) = (-0.45, -0.4, offset + FRAC_PI_2);
        (center[ankle], amp[ankle], phase[ankle]) = (0.0, 0.15, offset);
    }
    let params = SynthParams {
        name: "walker_gait".into(),
        duration: 4.0,
        center,
        amplitude: amp,
        phase,
        frequency: WALKER_GAIT_STRIDE_HZ,
        drift: 1.0,
        ..SynthParams::default()
    };
    let mut clip = synth_clip(SynthKind::Sinusoid, &params, &model)?;
    for f in &mut clip.frames {
        let h = model.min_probe_height(&f.q).expect("walker has contact probes");
        f.q[1] -= h;
    }
    let exact: Vec<Vec<f64>> = clip.frames.iter().map(|f| f.q_dot.clone()).collect();
    recompute_velocities(&mut clip);
    // only the pelvis height was adjusted; keep analytic rates elsewhere
    for (f, e) in clip.frames.iter_mut().zip(exact) {
        for c in (0..f.q.len()).filter(|&c| c != 1) {
            f.q_dot[c] = e[c];
        }
        f.refresh_sites(&model);
    }
    Ok(clip)
}

/// A clip from a file path or `preset:<name>`.
pub fn resolve_clip(spec: &str) -> Result<MotionClip> {
    match spec.strip_prefix("preset:") {
        Some(name) => preset(name),
        None => load_clip(Path::new(spec)),
    }
}
