//! Forward dynamics of planar musculoskeletal trees.
//!
//! Each control step holds the excitation constant over `n_substeps`
//! substeps. A substep advances activations with the exact exponential
//! update, assembles the joint-space mass matrix and bias forces from link
//! Jacobians, adds muscle, damping, joint-limit and penalty-contact forces,
//! and integrates with semi-implicit Euler.

use crate::error::{Error, Result};
use crate::model::muscle::{advance_activation, muscle_force};
use crate::model::{MskModel, Vec2};
use crate::motion::MotionClip;

/// Integration settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimConfig {
    /// substep length (s)
    pub dt: f64,
    /// substeps per control step
    pub n_substeps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 5e-4,
            n_substeps: 20,
        }
    }
}

impl SimConfig {
    /// Control period (s).
    pub fn control_dt(&self) -> f64 {
        self.dt * self.n_substeps as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub q: Vec<f64>,
    pub q_dot: Vec<f64>,
    pub activations: Vec<f64>,
    pub time: f64,
}

impl SimState {
    /// Neutral pose at rest, activations taken from the model file.
    pub fn new(model: &MskModel) -> Self {
        Self {
            q: model.neutral_q(),
            q_dot: vec![0.0; model.n_dof()],
            activations: model.muscles.iter().map(|m| m.act).collect(),
            time: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.q_dot).chain(&self.activations).all(|v| v.is_finite())
            && self.time.is_finite()
    }
}

/// Per-control-step sensor summary, averaged over substeps.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// total ground reaction force (horizontal, vertical) in N
    pub grf: Vec2,
    /// normal force magnitude at each contact probe (N)
    pub touch: Vec<f64>,
    pub terminated_nan: bool,
}

/// Scratch buffers reused across substeps; one per environment.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub cfg: SimConfig,
    n: usize,
    mass: Vec<f64>,
    rhs: Vec<f64>,
    cols: Vec<Vec2>,
    cols_b: Vec<Vec2>,
    row: Vec<f64>,
    pts: Vec<Vec2>,
    acc_origin: Vec<Vec2>,
    qdd: Vec<f64>,
    /// most recent muscle lengths, velocities and tensions
    pub muscle_len: Vec<f64>,
    pub muscle_vel: Vec<f64>,
    pub muscle_force: Vec<f64>,
}

/// Contact force at one probe: (horizontal friction, vertical normal).
#[inline]
pub fn probe_force(model: &MskModel, height: f64, vel: Vec2) -> Vec2 {
    if height >= 0.0 {
        return Vec2::zeros();
    }
    let c = &model.contact;
    let pen = -height;
    let pen_rate = -vel.y;
    let normal = (c.k_n * pen + c.c_n * pen_rate).max(0.0);
    let tangential = -c.mu * normal * (vel.x / c.v_slip).tanh();
    Vec2::new(tangential, normal)
}

impl Stepper {
    pub fn new(model: &MskModel, cfg: SimConfig) -> Self {
        let n = model.n_dof();
        let nm = model.n_muscles();
        Self {
            cfg,
            n,
            mass: vec![0.0; n * n],
            rhs: vec![0.0; n],
            cols: vec![Vec2::zeros(); n],
            cols_b: vec![Vec2::zeros(); n],
            row: vec![0.0; n],
            pts: Vec::new(),
            acc_origin: vec![Vec2::zeros(); model.links.len()],
            qdd: vec![0.0; n],
            muscle_len: vec![0.0; nm],
            muscle_vel: vec![0.0; nm],
            muscle_force: vec![0.0; nm],
        }
    }

    /// Joint-space accelerations for the current state and activations.
    /// Adds contact forces into `grf`/`touch`.
    fn accelerations(&mut self, model: &MskModel, s: &SimState, grf: &mut Vec2, touch: &mut [f64]) -> bool {
        let n = self.n;
        let poses = model.link_poses(&s.q);
        let omega = model.link_angvel(&s.q_dot);
        let topo = &model.topo;
        self.mass.iter_mut().for_each(|v| *v = 0.0);
        self.rhs.iter_mut().for_each(|v| *v = 0.0);

        // velocity-product acceleration of every link origin (q̈ = 0)
        for &l in &topo.order {
            self.acc_origin[l] = match topo.parent_joint[l] {
                None => Vec2::zeros(),
                Some(j) => match topo.joint_parent[j] {
                    None => Vec2::zeros(),
                    Some(p) => self.acc_origin[p] - (poses.origin[l] - poses.origin[p]) * (omega[p] * omega[p]),
                },
            };
        }

        let g = Vec2::new(0.0, -model.gravity);
        for (l, link) in model.links.iter().enumerate() {
            let com = poses.point(Some(l), Vec2::new(link.com[0], link.com[1]));
            model.point_jacobian(&poses, Some(l), com, &mut self.cols);
            let a_vp = self.acc_origin[l] - (com - poses.origin[l]) * (omega[l] * omega[l]);
            // rhs = τ − h with h = m Jᵀ (a_vp − g)
            let f = (g - a_vp) * link.mass;
            let rot = &topo.link_rot_coords[l];
            for a in 0..n {
                let ja = self.cols[a];
                if ja.x == 0.0 && ja.y == 0.0 {
                    continue;
                }
                self.rhs[a] += ja.dot(&f);
                for b in 0..=a {
                    let v = link.mass * ja.dot(&self.cols[b]);
                    self.mass[a * n + b] += v;
                }
            }
            for &a in rot {
                for &b in rot {
                    if b <= a {
                        self.mass[a * n + b] += link.inertia;
                    }
                }
            }
        }

        // muscles
        for (m, muscle) in model.muscles.iter().enumerate() {
            let len = crate::model::tendon_length_and_jacobian(
                model, &poses, m, &mut self.pts, &mut self.cols, &mut self.cols_b, &mut self.row,
            );
            let vel: f64 = self.row.iter().zip(&s.q_dot).map(|(a, b)| a * b).sum();
            let force = muscle_force(muscle, s.activations[m], len, vel);
            self.muscle_len[m] = len;
            self.muscle_vel[m] = vel;
            self.muscle_force[m] = force;
            for (r, jr) in self.rhs.iter_mut().zip(&self.row) {
                *r -= jr * force;
            }
        }

        // joint damping and soft limits
        let n_root = model.n_root();
        for (j, joint) in model.joints.iter().enumerate() {
            let c = n_root + j;
            let (q, qd) = (s.q[c], s.q_dot[c]);
            let mut tau = -joint.damping * qd;
            if q < joint.range_lo {
                tau += model.limit_stiffness * (joint.range_lo - q) - model.limit_damping * qd.min(0.0);
            } else if q > joint.range_hi {
                tau += model.limit_stiffness * (joint.range_hi - q) - model.limit_damping * qd.max(0.0);
            }
            self.rhs[c] += tau;
        }

        // ground contact
        for (i, &(l, local)) in topo.probes.iter().enumerate() {
            let p = poses.point(Some(l), local);
            if p.y >= 0.0 {
                continue;
            }
            let v = model.point_velocity(&poses, Some(l), p, &s.q_dot);
            let f = probe_force(model, p.y, v);
            if f.y == 0.0 && f.x == 0.0 {
                continue;
            }
            model.point_jacobian(&poses, Some(l), p, &mut self.cols);
            for (r, j) in self.rhs.iter_mut().zip(&self.cols) {
                *r += j.dot(&f);
            }
            *grf += f;
            touch[i] += f.y;
        }

        cholesky_solve(&mut self.mass, n, &self.rhs, &mut self.qdd)
    }

    /// Advances `state` by one control step under excitation `ctrl`.
    ///
    /// On a non-finite result the state is left at its pre-step value and
    /// the report carries `terminated_nan`.
    pub fn step(&mut self, model: &MskModel, state: &mut SimState, ctrl: &[f64]) -> StepReport {
        debug_assert_eq!(ctrl.len(), model.n_muscles());
        let backup = state.clone();
        let dt = self.cfg.dt;
        let mut grf = Vec2::zeros();
        let mut touch = vec![0.0; model.n_probes()];
        let mut ok = true;
        for _ in 0..self.cfg.n_substeps {
            for ((a, &u), m) in state.activations.iter_mut().zip(ctrl).zip(&model.muscles) {
                *a = advance_activation(m.tau_act, m.tau_deact, *a, u, dt);
            }
            if !self.accelerations(model, state, &mut grf, &mut touch) {
                ok = false;
                break;
            }
            for ((qd, q), a) in state.q_dot.iter_mut().zip(state.q.iter_mut()).zip(&self.qdd) {
                *qd += dt * a;
                *q += dt * *qd;
            }
            state.time += dt;
            if !state.is_finite() {
                ok = false;
                break;
            }
        }
        if !ok {
            *state = backup;
            return StepReport {
                grf: Vec2::zeros(),
                touch: vec![0.0; model.n_probes()],
                terminated_nan: true,
            };
        }
        let k = 1.0 / self.cfg.n_substeps as f64;
        touch.iter_mut().for_each(|t| *t *= k);
        StepReport {
            grf: grf * k,
            touch,
            terminated_nan: false,
        }
    }

    /// Refreshes the cached muscle lengths, velocities and tensions for `state`
    /// without advancing time.
    pub fn observe_muscles(&mut self, model: &MskModel, state: &SimState) {
        let poses = model.link_poses(&state.q);
        for (m, muscle) in model.muscles.iter().enumerate() {
            let len = crate::model::tendon_length_and_jacobian(
                model, &poses, m, &mut self.pts, &mut self.cols, &mut self.cols_b, &mut self.row,
            );
            let vel: f64 = self.row.iter().zip(&state.q_dot).map(|(a, b)| a * b).sum();
            self.muscle_len[m] = len;
            self.muscle_vel[m] = vel;
            self.muscle_force[m] = muscle_force(muscle, state.activations[m], len, vel);
        }
    }
}

/// Solves `A x = b` for symmetric positive-definite `A` given by its lower
/// triangle (row-major, n×n). `A` is overwritten by its Cholesky factor.
fn cholesky_solve(a: &mut [f64], n: usize, b: &[f64], x: &mut [f64]) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * x[k];
        }
        x[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= a[k * n + i] * x[k];
        }
        x[i] = s / a[i * n + i];
    }
    true
}

/// One control step on a copy of `state`.
pub fn step(model: &MskModel, state: &SimState, ctrl: &[f64], n_substeps: usize) -> Result<(SimState, StepReport)> {
    if ctrl.len() != model.n_muscles() {
        return Err(Error::Input(format!(
            "ctrl has {} entries, model has {} muscles",
            ctrl.len(),
            model.n_muscles()
        )));
    }
    if n_substeps == 0 {
        return Err(Error::Input("n_substeps must be >= 1".into()));
    }
    let mut stepper = Stepper::new(model, SimConfig { n_substeps, ..SimConfig::default() });
    let mut next = state.clone();
    let report = stepper.step(model, &mut next, ctrl);
    Ok((next, report))
}

/// Simulation state matching frame `frame_index` of `clip`, activations zeroed.
pub fn reset_to_frame(model: &MskModel, clip: &MotionClip, frame_index: usize) -> Result<SimState> {
    let frame = clip.frames.get(frame_index).ok_or_else(|| {
        Error::Input(format!(
            "frame {frame_index} out of range for clip '{}' with {} frames",
            clip.name,
            clip.frames.len()
        ))
    })?;
    if frame.q.len() != model.n_dof() {
        return Err(Error::Input(format!(
            "clip '{}' has {} coordinates, model '{}' has {}",
            clip.name,
            frame.q.len(),
            model.name,
            model.n_dof()
        )));
    }
    Ok(SimState {
        q: frame.q.clone(),
        q_dot: frame.q_dot.clone(),
        activations: vec![0.0; model.n_muscles()],
        time: frame_index as f64 / clip.rate,
    })
}

/// Kinetic plus gravitational potential energy (J).
pub fn mechanical_energy(model: &MskModel, state: &SimState) -> f64 {
    let poses = model.link_poses(&state.q);
    let omega = model.link_angvel(&state.q_dot);
    let mut energy = 0.0;
    for (l, link) in model.links.iter().enumerate() {
        let com = poses.point(Some(l), Vec2::new(link.com[0], link.com[1]));
        let v = model.point_velocity(&poses, Some(l), com, &state.q_dot);
        energy += 0.5 * link.mass * v.norm_squared() + 0.5 * link.inertia * omega[l] * omega[l];
        energy += link.mass * model.gravity * com.y;
    }
    energy
}

#[cfg(test)]
mod tests;
