//! Hill-type muscle: first-order activation dynamics and tension from
//! normalized force–length, force–velocity and passive curves.
//!
//! Tendons are inelastic and fibers have no pennation, so the muscle length
//! is the full muscle–tendon path length.

use crate::error::{Error, Result};

use super::MuscleActuator;

/// Normalized muscle curves. Module constants so they can be swapped.
pub struct MuscleCurves;

impl MuscleCurves {
    /// Half-width of the active force–length parabola (in optimal lengths).
    pub const FL_WIDTH: f64 = 0.5;
    /// Upper clamp of the force–velocity curve (eccentric enhancement).
    pub const FV_MAX: f64 = 1.5;
    /// Stretch (in optimal lengths) at which passive force reaches 1.
    pub const FP_STRAIN: f64 = 0.3;
    pub const FP_MAX: f64 = 1.5;

    /// Active force–length: peak 1 at l̃ = 1, zero beyond ±FL_WIDTH.
    #[inline]
    pub fn force_length(l_norm: f64) -> f64 {
        let x = (l_norm - 1.0) / Self::FL_WIDTH;
        (1.0 - x * x).max(0.0)
    }

    /// Force–velocity with ṽ < 0 shortening; 1 at isometric.
    #[inline]
    pub fn force_velocity(v_norm: f64) -> f64 {
        (1.0 + v_norm).clamp(0.0, Self::FV_MAX)
    }

    /// Passive elastic force, zero up to optimal length.
    #[inline]
    pub fn passive(l_norm: f64) -> f64 {
        if l_norm <= 1.0 {
            0.0
        } else {
            let x = (l_norm - 1.0) / Self::FP_STRAIN;
            (x * x).min(Self::FP_MAX)
        }
    }
}

/// Effective time constant τ(ctrl, act). Ties (ctrl = act) use the
/// deactivation branch.
#[inline]
pub fn activation_time_constant(tau_act: f64, tau_deact: f64, ctrl: f64, act: f64) -> f64 {
    if ctrl - act > 0.0 {
        tau_act * (0.5 + 1.5 * act)
    } else {
        tau_deact / (0.5 + 1.5 * act)
    }
}

/// Exact solution of d act/dt = (ctrl − act)/τ over `dt` with τ frozen at the
/// start of the step. Inputs must already be finite; ctrl is clamped.
#[inline]
pub(crate) fn advance_activation(tau_act: f64, tau_deact: f64, act: f64, ctrl: f64, dt: f64) -> f64 {
    let ctrl = ctrl.clamp(0.0, 1.0);
    let act = act.clamp(0.0, 1.0);
    let tau = activation_time_constant(tau_act, tau_deact, ctrl, act);
    (ctrl + (act - ctrl) * (-dt / tau).exp()).clamp(0.0, 1.0)
}

/// One activation update for `muscle` from activation `act` under excitation `ctrl`.
pub fn activation_step(muscle: &MuscleActuator, act: f64, ctrl: f64, dt: f64) -> Result<f64> {
    if !ctrl.is_finite() {
        return Err(Error::Input(format!("non-finite excitation {ctrl} for muscle '{}'", muscle.name)));
    }
    if !(dt > 0.0) {
        return Err(Error::Input(format!("activation step needs dt > 0, got {dt}")));
    }
    Ok(advance_activation(muscle.tau_act, muscle.tau_deact, act, ctrl, dt))
}

/// Muscle tension (N, never negative) at activation `act`, path length `l`
/// and lengthening velocity `l_dot`.
#[inline]
pub fn muscle_force(muscle: &MuscleActuator, act: f64, l: f64, l_dot: f64) -> f64 {
    let l_norm = l / muscle.l_opt;
    let v_norm = l_dot / (muscle.l_opt * muscle.v_max);
    let active = act * MuscleCurves::force_length(l_norm) * MuscleCurves::force_velocity(v_norm);
    (muscle.f_max * (active + MuscleCurves::passive(l_norm))).max(0.0)
}
