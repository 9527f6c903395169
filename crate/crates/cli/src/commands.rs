use crate::{AuditArgs, BenchArgs, ConvertArgs, EvalArgs, GaitArgs, TrainArgs};
use mimic_core::analysis::{
    correlate, cycle_average, evaluate, kinematic_contact_series, link_touch_series, run_episode, ClipMetrics, Driver, GaitConfig,
};
use mimic_core::audit::{audit_clip, mean_report, TendonJumpConfig};
use mimic_core::env::{prepare_clip, EnvConfig};
use mimic_core::model::MskModel;
use mimic_core::motion::{ground_correct, resample_with_model, resolve_clip, save_clip, MotionClip};
use mimic_core::policy::GaussianPolicy;
use mimic_core::ppo::{bench_throughput, resolve_threads, TrainConfig, Trainer};
use mimic_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

/// Exit-code contract.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        e if e.is_schema() => 2,
        _ => 1,
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Input(format!("{what} not found: {}", path.display())))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256(bytes: &[u8]) -> String {
    hex(Sha256::digest(bytes).as_slice())
}

/// Writes JSON to `dest` (`-` = stdout); `None` also means stdout.
fn emit_json<T: Serialize>(value: &T, dest: Option<&str>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    match dest {
        None | Some("-") => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
        }
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| Error::io(p, e)),
    }
}

fn load_model(spec: Option<&str>, clip: &MotionClip) -> Result<MskModel> {
    MskModel::resolve(spec.unwrap_or(&clip.model_ref))
}

/// Immutable record of a training run, written before any compute.
#[derive(Serialize)]
struct RunManifest<'a> {
    tool: String,
    seed: u64,
    model_hash: String,
    clips_hash: String,
    started: String,
    config: &'a TrainConfig,
}

fn clip_digest(spec: &str, clip: &MotionClip, h: &mut Sha256) {
    h.update(spec.as_bytes());
    h.update(clip.rate.to_le_bytes());
    for f in &clip.frames {
        for v in f.q.iter().chain(&f.q_dot) {
            h.update(v.to_le_bytes());
        }
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    require_file(&a.config, "config")?;
    let mut cfg = TrainConfig::from_path(&a.config)?;
    if let Some(s) = a.seed {
        cfg.ppo.seed = s;
    }
    if let Some(n) = a.total_steps {
        cfg.total_steps = n;
    }
    cfg.validate()?;
    let model = MskModel::resolve(&cfg.model)?;
    let mut h = Sha256::new();
    for c in &cfg.clips {
        clip_digest(c, &resolve_clip(c)?, &mut h);
    }
    let model_json = serde_json::to_vec(&model.to_doc()).map_err(|e| Error::Data(e.to_string()))?;
    let manifest = RunManifest {
        tool: format!("mimic {}", crate::VERSION),
        seed: cfg.ppo.seed,
        model_hash: sha256(&model_json),
        clips_hash: hex(h.finalize().as_slice()),
        started: chrono::Utc::now().to_rfc3339(),
        config: &cfg,
    };
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mpath = a.out.join("manifest.json");
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?)
        .map_err(|e| Error::io(&mpath, e))?;
    let mut trainer = Trainer::new(cfg)?;
    eprintln!(
        "training {} on {} clip(s): {} iterations, {} threads",
        trainer.cfg.model,
        trainer.clips.len(),
        trainer.cfg.n_iterations(),
        trainer.threads
    );
    let hist = trainer.train(Some(&a.out), |_, _| false)?;
    if let Some(last) = hist.last() {
        eprintln!("done: {} steps, mean reward {:.4}", last.steps, last.mean_reward);
    }
    Ok(())
}

fn eval_setup(model_spec: Option<&str>, clips: &[String]) -> Result<(Arc<MskModel>, Vec<MotionClip>)> {
    let clips: Vec<MotionClip> = clips.iter().map(|c| resolve_clip(c)).collect::<Result<_>>()?;
    let model = Arc::new(load_model(model_spec, &clips[0])?);
    for c in &clips {
        c.check_model(&model)?;
    }
    Ok((model, clips))
}

fn load_policy(path: &Path, model: &MskModel, cfg: &EnvConfig) -> Result<GaussianPolicy> {
    let (json, _) = mimic_core::policy::checkpoint_paths(path);
    require_file(&json, "checkpoint")?;
    let pol = GaussianPolicy::load(path)?;
    let dim = mimic_core::env::ObsLayout::new(model, &cfg.goal).dim;
    if pol.obs_dim != dim || pol.act_dim != model.n_muscles() {
        return Err(Error::Input(format!(
            "checkpoint expects obs {} / act {}, model '{}' gives {} / {}",
            pol.obs_dim,
            pol.act_dim,
            model.name,
            dim,
            model.n_muscles()
        )));
    }
    Ok(pol)
}

const METRIC_COLUMNS: &str = "clip,episodes,success_rate,frame_coverage,joint_angle_err,joint_vel_err,root_pos_err,root_yaw_err,rel_site_err,abs_site_err,mean_ep_len,mean_ep_return";

fn metrics_row(m: &ClipMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        m.clip, m.episodes, m.success_rate, m.frame_coverage, m.joint_angle_err, m.joint_vel_err, m.root_pos_err, m.root_yaw_err,
        m.rel_site_err, m.abs_site_err, m.mean_ep_len, m.mean_ep_return
    )
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (model, clips) = eval_setup(a.model.as_deref(), &a.clips)?;
    let mut cfg = EnvConfig::for_model(&model);
    if let Some(d) = a.delta_site {
        cfg.termination.delta_site = d;
    }
    cfg.validate()?;
    let pol;
    let driver = if a.oracle {
        Driver::Oracle
    } else {
        let path = a.checkpoint.as_ref().ok_or_else(|| Error::Input("--checkpoint or --oracle is required".into()))?;
        pol = load_policy(path, &model, &cfg)?;
        Driver::Policy(&pol)
    };
    let (report, _) = evaluate(&model, &clips, &cfg, driver, a.episodes)?;
    if let Some(p) = &a.csv {
        let mut text = format!("{METRIC_COLUMNS}\n");
        for m in report.per_clip.iter().chain(std::iter::once(&report.overall)) {
            text += &metrics_row(m);
            text.push('\n');
        }
        std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
    }
    eprintln!(
        "success {:.1}%  coverage {:.1}%  rel site {:.3} cm",
        report.overall.success_rate, report.overall.frame_coverage, report.overall.rel_site_err
    );
    emit_json(&report, a.json.as_deref())
}

#[derive(Serialize)]
struct AuditOutput {
    reports: Vec<mimic_core::audit::AuditReport>,
    mean: mimic_core::audit::AuditReport,
}

pub fn audit(a: AuditArgs) -> Result<()> {
    let reference = a.reference.as_deref().map(resolve_clip).transpose()?;
    let cfg = TendonJumpConfig::default();
    let mut reports = Vec::new();
    for spec in &a.clips {
        let clip = resolve_clip(spec)?;
        let model = load_model(a.model.as_deref(), &clip)?;
        reports.push(audit_clip(&clip, &model, reference.as_ref(), &cfg)?);
    }
    let mean = mean_report(&reports)?;
    emit_json(&AuditOutput { reports, mean }, a.json.as_deref())
}

/// Reads a reference EMG table: header of muscle names, one row per grid point.
fn read_emg(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    require_file(path, "EMG table")?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines.next().ok_or_else(|| Error::Parse("empty EMG table".into()))?.split(',').map(|s| s.trim().to_string()).collect();
    let mut cols = vec![Vec::new(); header.len()];
    for (r, line) in lines.enumerate() {
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != header.len() {
            return Err(Error::Parse(format!("EMG row {r}: {} fields, expected {}", vals.len(), header.len())));
        }
        for (c, v) in vals.iter().enumerate() {
            cols[c].push(v.trim().parse::<f64>().map_err(|e| Error::Parse(format!("EMG row {r}, column {}: {e}", header[c])))?);
        }
    }
    if cols.first().is_some_and(|c| c.len() != mimic_core::analysis::CYCLE_GRID) {
        return Err(Error::Parse(format!("EMG table needs {} rows", mimic_core::analysis::CYCLE_GRID)));
    }
    Ok(header.into_iter().zip(cols).collect())
}

#[derive(Serialize)]
struct GaitSummary {
    clip: String,
    foot: String,
    n_cycles: usize,
    cycles: Vec<(usize, usize)>,
    correlations: Vec<(String, Option<f64>)>,
}

pub fn gait(a: GaitArgs) -> Result<()> {
    let (model, clips) = eval_setup(a.model.as_deref(), std::slice::from_ref(&a.clip))?;
    let cfg = EnvConfig::for_model(&model);
    let emg = a.emg.as_deref().map(read_emg).transpose()?;
    let clip = Arc::new(prepare_clip(&model, &clips[0], &cfg.sim)?);
    let pol;
    let trace = if a.oracle {
        run_episode(&model, &clip, &cfg, Driver::Oracle, 0)?
    } else {
        let path = a.checkpoint.as_ref().ok_or_else(|| Error::Input("--checkpoint or --oracle is required".into()))?;
        pol = load_policy(path, &model, &cfg)?;
        run_episode(&model, &clip, &cfg, Driver::Policy(&pol), 0)?
    };
    let series = if a.oracle {
        kinematic_contact_series(&model, &trace, &a.foot, 0.005)?
    } else {
        link_touch_series(&model, &trace, &a.foot)?
    };
    let gcfg = GaitConfig { min_duration: a.min_duration, max_duration: a.max_duration, ..GaitConfig::default() };
    let weight = model.total_mass() * model.gravity.abs();
    let cycles = mimic_core::analysis::segment_gait_cycles(&series, trace.rate, weight, &gcfg);
    if cycles.is_empty() {
        return Err(Error::Data(format!("no complete gait cycles on '{}' in {} steps", a.foot, trace.steps)));
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut text = String::from("muscle,percent,mean,std\n");
    let mut correlations = Vec::new();
    for (m, muscle) in model.muscles.iter().enumerate() {
        let act: Vec<f64> = trace.activations.iter().map(|v| v[m]).collect();
        let prof = cycle_average(&muscle.name, &act, &cycles)?;
        for k in 0..prof.mean.len() {
            text += &format!("{},{},{},{}\n", muscle.name, prof.percent[k], prof.mean[k], prof.std[k]);
        }
        if let Some(table) = &emg {
            if let Some((_, col)) = table.iter().find(|(n, _)| *n == muscle.name) {
                correlations.push((muscle.name.clone(), correlate(&prof.mean, col)));
            }
        }
    }
    let ppath = a.out.join("profiles.csv");
    std::fs::write(&ppath, text).map_err(|e| Error::io(&ppath, e))?;
    if emg.is_some() {
        let mut c = String::from("muscle,r\n");
        for (n, r) in &correlations {
            c += &format!("{n},{}\n", r.map(|v| v.to_string()).unwrap_or_default());
        }
        let cpath = a.out.join("correlation.csv");
        std::fs::write(&cpath, c).map_err(|e| Error::io(&cpath, e))?;
    }
    emit_json(
        &GaitSummary { clip: clip.name.clone(), foot: a.foot, n_cycles: cycles.len(), cycles, correlations },
        Some("-"),
    )
}

pub fn convert(a: ConvertArgs) -> Result<()> {
    let mut clip = resolve_clip(&a.input)?;
    let model = load_model(a.model.as_deref(), &clip)?;
    clip.check_model(&model)?;
    if a.ground_correct {
        clip = ground_correct(&clip, &model)?;
    }
    if let Some(r) = a.rate {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Input(format!("rate must be positive, got {r}")));
        }
        clip = resample_with_model(&clip, r, &model)?;
    }
    let (json, csv) = save_clip(&clip, &a.output)?;
    eprintln!("wrote {} and {} ({} frames at {} Hz)", json.display(), csv.display(), clip.frames.len(), clip.rate);
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let mut cfg = match a.model.as_str() {
        "walker7" => TrainConfig::walker7(),
        "arm2" => TrainConfig::arm2(),
        other => {
            let clip = a.clip.clone().ok_or_else(|| Error::Input(format!("--clip is required for model '{other}'")))?;
            TrainConfig { model: other.into(), clips: vec![clip], ..TrainConfig::arm2() }
        }
    };
    if let Some(c) = &a.clip {
        cfg.clips = vec![c.clone()];
    }
    cfg.ppo.rollout_steps = a.steps.max(1);
    let threads = if a.threads.is_empty() { vec![resolve_threads(None)] } else { a.threads.clone() };
    let rows = bench_throughput(&cfg, &a.n_env, &threads, a.iters)?;
    if a.json.is_some() {
        return emit_json(&rows, a.json.as_deref());
    }
    let mut out = std::io::stdout().lock();
    let w = |e| Error::io("<stdout>", e);
    writeln!(out, "n_env,threads,rollout_sps,train_sps").map_err(w)?;
    for r in rows {
        writeln!(out, "{},{},{:.1},{:.1}", r.n_env, r.threads, r.rollout_sps, r.train_sps).map_err(w)?;
    }
    Ok(())
}
