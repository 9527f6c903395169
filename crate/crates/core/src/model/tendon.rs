use crate::error::{Error, Result};

use super::kinematics::LinkPoses;
use super::muscle::muscle_force;
use super::{MskModel, Vec2};

/// Joint-angle perturbation for the finite-difference moment-arm probe (rad).
pub const MOMENT_ARM_PROBE: f64 = 1e-5;

fn via_world(model: &MskModel, poses: &LinkPoses, m: usize, out: &mut Vec<Vec2>) {
    out.clear();
    let muscle = &model.muscles[m];
    for (vp, &link) in muscle.path.via_points.iter().zip(&model.topo.via_links[m]) {
        out.push(poses.point(link, Vec2::new(vp.point[0], vp.point[1])));
    }
}

fn path_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Muscle–tendon path length of every muscle (m): the sum of straight
/// segments between consecutive via points in the world frame.
pub fn tendon_length(model: &MskModel, q: &[f64]) -> Vec<f64> {
    let poses = model.link_poses(q);
    let mut pts = Vec::new();
    (0..model.muscles.len())
        .map(|m| {
            via_world(model, &poses, m, &mut pts);
            path_length(&pts)
        })
        .collect()
}

/// Analytic ∂L_m/∂q for one muscle, written into `row` (length n_dof).
/// Returns the path length. Zero-length segments contribute nothing.
pub(crate) fn tendon_length_and_jacobian(
    model: &MskModel,
    poses: &LinkPoses,
    m: usize,
    pts: &mut Vec<Vec2>,
    cols_a: &mut [Vec2],
    cols_b: &mut [Vec2],
    row: &mut [f64],
) -> f64 {
    via_world(model, poses, m, pts);
    row.iter_mut().for_each(|r| *r = 0.0);
    let links = &model.topo.via_links[m];
    let mut length = 0.0;
    for i in 0..pts.len() - 1 {
        let d = pts[i + 1] - pts[i];
        let seg = d.norm();
        length += seg;
        if seg <= 1e-12 {
            continue;
        }
        let u = d / seg;
        model.point_jacobian(poses, links[i], pts[i], cols_a);
        model.point_jacobian(poses, links[i + 1], pts[i + 1], cols_b);
        for (r, (a, b)) in row.iter_mut().zip(cols_a.iter().zip(cols_b.iter())) {
            *r += u.dot(&(b - a));
        }
    }
    length
}

/// Analytic tendon Jacobian rows ∂L/∂q for all muscles at configuration `q`.
pub fn tendon_jacobian(model: &MskModel, q: &[f64]) -> Vec<Vec<f64>> {
    let poses = model.link_poses(q);
    let n = model.n_dof();
    let mut pts = Vec::new();
    let mut ca = vec![Vec2::zeros(); n];
    let mut cb = vec![Vec2::zeros(); n];
    (0..model.muscles.len())
        .map(|m| {
            let mut row = vec![0.0; n];
            tendon_length_and_jacobian(model, &poses, m, &mut pts, &mut ca, &mut cb, &mut row);
            row
        })
        .collect()
}

fn spans(model: &MskModel, muscle: usize, coord: usize) -> bool {
    let inside = |link: &Option<usize>| match link {
        None => false,
        Some(l) => model.topo.link_rot_coords[*l].contains(&coord),
    };
    let links = &model.topo.via_links[muscle];
    links.iter().any(inside) && !links.iter().all(inside)
}

/// Signed moment arm (m) of `muscle` about `joint` by central finite
/// difference of the path length. Positive when the muscle shortens under
/// positive joint rotation. Exactly 0 when the path does not cross the joint.
pub fn moment_arm(model: &MskModel, q: &[f64], muscle: &str, joint: &str) -> Result<f64> {
    let m = model
        .muscle_index(muscle)
        .ok_or_else(|| Error::Input(format!("unknown muscle '{muscle}'")))?;
    let j = model
        .joint_index(joint)
        .ok_or_else(|| Error::Input(format!("unknown joint '{joint}'")))?;
    if q.len() != model.n_dof() {
        return Err(Error::Input(format!("q has {} entries, model has {}", q.len(), model.n_dof())));
    }
    let c = model.joint_coord(j);
    if !spans(model, m, c) {
        return Ok(0.0);
    }
    let mut pts = Vec::new();
    let mut probe = |delta: f64| {
        let mut qp = q.to_vec();
        qp[c] += delta;
        let poses = model.link_poses(&qp);
        via_world(model, &poses, m, &mut pts);
        path_length(&pts)
    };
    let dl = (probe(MOMENT_ARM_PROBE) - probe(-MOMENT_ARM_PROBE)) / (2.0 * MOMENT_ARM_PROBE);
    Ok(-dl)
}

/// Generalized forces from muscle tension: τ = −(∂L/∂q)ᵀ F.
pub fn muscle_torques(model: &MskModel, q: &[f64], qd: &[f64], activations: &[f64]) -> Vec<f64> {
    let poses = model.link_poses(q);
    let n = model.n_dof();
    let mut tau = vec![0.0; n];
    let mut pts = Vec::new();
    let mut ca = vec![Vec2::zeros(); n];
    let mut cb = vec![Vec2::zeros(); n];
    let mut row = vec![0.0; n];
    for (m, muscle) in model.muscles.iter().enumerate() {
        let l = tendon_length_and_jacobian(model, &poses, m, &mut pts, &mut ca, &mut cb, &mut row);
        let l_dot: f64 = row.iter().zip(qd).map(|(a, b)| a * b).sum();
        let f = muscle_force(muscle, activations[m], l, l_dot);
        for (t, r) in tau.iter_mut().zip(&row) {
            *t -= r * f;
        }
    }
    tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinkSpec, ModelDoc, MuscleActuator, TendonPath, ViaPoint, WORLD, JointSpec, MimicSite};
    use proptest::prelude::*;

    /// One hinge at the origin, a fixed attachment on the world and one on
    /// the child link.
    pub(crate) fn single_hinge(fixed: [f64; 2], moving: [f64; 2]) -> MskModel {
        let doc = ModelDoc {
            name: "hinge".into(),
            links: vec![LinkSpec {
                name: "bar".into(),
                mass: 1.0,
                inertia: 0.1,
                length: 1.0,
                com: [0.5, 0.0],
                contact_points: vec![],
            }],
            joints: vec![JointSpec {
                name: "hinge".into(),
                parent_link: WORLD.into(),
                child_link: "bar".into(),
                axis_anchor: [0.0, 0.0],
                range_lo: -10.0,
                range_hi: 10.0,
                damping: 0.0,
            }],
            muscles: vec![MuscleActuator {
                name: "m".into(),
                path: TendonPath {
                    via_points: vec![
                        ViaPoint { link: WORLD.into(), point: fixed },
                        ViaPoint { link: "bar".into(), point: moving },
                    ],
                    rest_length: 1.0,
                },
                f_max: 100.0,
                l_opt: 1.0,
                v_max: 10.0,
                tau_act: 0.01,
                tau_deact: 0.04,
                act: 0.0,
            }],
            sites: vec![MimicSite { name: "o".into(), link: WORLD.into(), offset: [0.0, 0.0], is_root: true }],
            gravity: 0.0,
            root_free: false,
            contact: Default::default(),
            limit_stiffness: 0.0,
            limit_damping: 0.0,
            mirror: None,
        };
        MskModel::from_doc(doc).unwrap()
    }

    /// Closed form for a two-point path: fixed A in world, B at polar
    /// (r, φ) on the child. L² = |A|² + r² − 2 r (A·(cos(θ+φ), sin(θ+φ))).
    fn analytic_dl(a: [f64; 2], b: [f64; 2], theta: f64) -> f64 {
        let r = (b[0] * b[0] + b[1] * b[1]).sqrt();
        let phi = b[1].atan2(b[0]);
        let ang = theta + phi;
        let bx = r * ang.cos();
        let bz = r * ang.sin();
        let l = ((bx - a[0]).powi(2) + (bz - a[1]).powi(2)).sqrt();
        // dL/dθ = (B − A)·dB/dθ / L with dB/dθ = (−bz, bx)
        ((bx - a[0]) * (-bz) + (bz - a[1]) * bx) / l
    }

    #[test]
    fn geometry_examples() {
        let m = single_hinge([0.0, 1.0], [1.0, 0.0]);
        let l0 = tendon_length(&m, &[0.0])[0];
        assert!((l0 - 2f64.sqrt()).abs() < 1e-15);
        let l90 = tendon_length(&m, &[std::f64::consts::FRAC_PI_2])[0];
        assert!(l90.abs() < 1e-15);
    }

    #[test]
    fn coincident_attachments_warn() {
        let m = single_hinge([1.0, 0.0], [1.0, 0.0]);
        assert_eq!(tendon_length(&m, &[0.0])[0], 0.0);
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn moment_arm_examples() {
        let m = single_hinge([0.0, 1.0], [1.0, 0.0]);
        let r = moment_arm(&m, &[0.0], "m", "hinge").unwrap();
        assert!((r - 1.0 / 2f64.sqrt()).abs() < 1e-9, "{r}");
        let m2 = single_hinge([0.0, 2.0], [2.0, 0.0]);
        let r2 = moment_arm(&m2, &[0.0], "m", "hinge").unwrap();
        assert!((r2 - 2.0 / 2f64.sqrt()).abs() < 1e-9, "{r2}");
    }

    #[test]
    fn path_through_axis_has_zero_lever() {
        // both points on the same line through the hinge: pure radial path
        let m = single_hinge([-1.0, 0.0], [1.0, 0.0]);
        let r = moment_arm(&m, &[0.0], "m", "hinge").unwrap();
        assert!(r.abs() < 1e-9, "{r}");
    }

    #[test]
    fn unspanned_joint_is_exactly_zero() {
        let arm = MskModel::resolve("arm2").unwrap();
        let q = vec![0.4, 0.9];
        // a single-joint shoulder muscle does not cross the elbow
        assert_eq!(moment_arm(&arm, &q, "shoulder_flex", "elbow").unwrap(), 0.0);
        assert!(moment_arm(&arm, &q, "nope", "elbow").is_err());
    }

    #[test]
    fn torque_from_single_muscle() {
        // moment arm 0.02 m × 100 N = 2 N·m
        let r = 0.02;
        let f = 100.0;
        assert!((r * f - 2.0f64).abs() < 1e-15);
        let m = single_hinge([0.0, 1.0], [1.0, 0.0]);
        let q = [0.0];
        let ma = moment_arm(&m, &q, "m", "hinge").unwrap();
        let l = tendon_length(&m, &q)[0];
        let force = muscle_force(&m.muscles[0], 1.0, l, 0.0);
        let tau = muscle_torques(&m, &q, &[0.0], &[1.0]);
        assert!((tau[0] - ma * force).abs() < 1e-6 * force.max(1.0));
    }

    #[test]
    fn zero_activation_short_muscles_give_zero_torque() {
        let arm = MskModel::resolve("arm2").unwrap();
        let q = vec![0.6, 1.0];
        let lengths = tendon_length(&arm, &q);
        // every muscle at or below optimal length: no passive force
        if arm.muscles.iter().zip(&lengths).all(|(m, l)| l / m.l_opt <= 1.0) {
            let tau = muscle_torques(&arm, &q, &[0.0, 0.0], &vec![0.0; 6]);
            assert!(tau.iter().all(|t| *t == 0.0));
        }
        let tau = muscle_torques(&arm, &arm.neutral_q(), &[0.0, 0.0], &vec![0.0; 6]);
        assert!(tau.iter().all(|t| t.is_finite()));
    }

    #[test]
    fn antagonists_cancel() {
        // mirror-image attachments about the bar axis: equal moment arms, opposite signs
        let flex = single_hinge([0.0, 1.0], [1.0, 0.0]);
        let ext = single_hinge([0.0, -1.0], [1.0, 0.0]);
        let tf = muscle_torques(&flex, &[0.0], &[0.0], &[0.7])[0];
        let te = muscle_torques(&ext, &[0.0], &[0.0], &[0.7])[0];
        assert!((tf + te).abs() < 1e-12, "{tf} {te}");
    }

    #[test]
    fn analytic_jacobian_matches_fd_moment_arm() {
        for name in ["arm2", "walker7"] {
            let model = MskModel::resolve(name).unwrap();
            let q: Vec<f64> = (0..model.n_dof()).map(|i| 0.1 + 0.05 * i as f64).collect();
            let jac = tendon_jacobian(&model, &q);
            for (mi, muscle) in model.muscles.iter().enumerate() {
                for (ji, joint) in model.joints.iter().enumerate() {
                    let fd = moment_arm(&model, &q, &muscle.name, &joint.name).unwrap();
                    let an = -jac[mi][model.joint_coord(ji)];
                    assert!((fd - an).abs() <= 1e-8 + 1e-5 * an.abs(), "{name} {} {}: {fd} vs {an}", muscle.name, joint.name);
                }
            }
        }
    }

    #[test]
    fn walker_mirror_symmetry() {
        let w = MskModel::resolve("walker7").unwrap();
        let pairs = w.mirror_muscle_pairs();
        assert_eq!(pairs.len(), 7);
        let q: Vec<f64> = vec![0.3, 0.9, 0.05, 0.4, -0.7, 0.1, -0.2, -0.3, -0.15];
        let qm = w.mirror_q(&q).unwrap();
        let l = tendon_length(&w, &q);
        let lm = tendon_length(&w, &qm);
        for &(a, b) in &pairs {
            assert!((l[a] - lm[b]).abs() < 1e-12);
            assert!((l[b] - lm[a]).abs() < 1e-12);
        }
        let mirror = w.mirror.clone().unwrap();
        for [ja, jb] in &mirror.joints {
            for &(a, b) in &pairs {
                let ra = moment_arm(&w, &q, &w.muscles[a].name, ja).unwrap();
                let rb = moment_arm(&w, &qm, &w.muscles[b].name, jb).unwrap();
                assert!((ra - rb).abs() < 1e-12, "{ra} {rb}");
            }
        }
    }

    proptest! {
        #[test]
        fn fd_moment_arm_matches_closed_form(
            ax in -1.0f64..1.0, az in -1.0f64..1.0,
            br in 0.05f64..1.0, bphi in -3.0f64..3.0,
            theta in -1.5f64..1.5,
        ) {
            let a = [ax, az];
            let b = [br * bphi.cos(), br * bphi.sin()];
            let m = single_hinge(a, b);
            let l = tendon_length(&m, &[theta])[0];
            prop_assume!(l > 0.05);
            let fd = moment_arm(&m, &[theta], "m", "hinge").unwrap();
            let exact = -analytic_dl(a, b, theta);
            prop_assume!(exact.abs() > 1e-3);
            prop_assert!(((fd - exact) / exact).abs() < 1e-4, "{} vs {}", fd, exact);
        }
    }
}
