use super::*;
use crate::model::{JointSpec, LinkSpec, MimicSite, ModelDoc};
use crate::motion::{preset, synth_clip, SynthKind, SynthParams};
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI};

fn bar(name: &str, mass: f64, inertia: f64, com: f64) -> LinkSpec {
    LinkSpec {
        name: name.into(),
        mass,
        inertia,
        length: 2.0 * com,
        com: [com, 0.0],
        contact_points: vec![],
    }
}

fn hinge(name: &str, parent: &str, child: &str, anchor: [f64; 2]) -> JointSpec {
    JointSpec {
        name: name.into(),
        parent_link: parent.into(),
        child_link: child.into(),
        axis_anchor: anchor,
        range_lo: -10.0,
        range_hi: 10.0,
        damping: 0.0,
    }
}

/// Chain of bars hinged at the world origin, no muscles, no damping.
fn chain(n: usize, gravity: f64) -> MskModel {
    let links = (0..n).map(|i| bar(&format!("b{i}"), 1.0, 0.1, 0.5)).collect();
    let joints = (0..n)
        .map(|i| {
            let (parent, anchor) = if i == 0 { ("world".to_string(), [0.0, 0.0]) } else { (format!("b{}", i - 1), [1.0, 0.0]) };
            hinge(&format!("j{i}"), &parent, &format!("b{i}"), anchor)
        })
        .collect();
    MskModel::from_doc(ModelDoc {
        name: "chain".into(),
        links,
        joints,
        muscles: vec![],
        sites: vec![MimicSite { name: "o".into(), link: "world".into(), offset: [0.0, 0.0], is_root: true }],
        gravity,
        root_free: false,
        contact: Default::default(),
        limit_stiffness: 0.0,
        limit_damping: 0.0,
        mirror: None,
    })
    .unwrap()
}

#[test]
fn zero_gravity_rest_is_equilibrium() {
    let arm = MskModel::resolve("arm2").unwrap();
    assert_eq!(arm.gravity, 0.0);
    let mut state = SimState::new(&arm);
    state.q = vec![0.4, 0.9];
    let before = state.clone();
    let (next, report) = step(&arm, &state, &vec![0.0; arm.n_muscles()], 20).unwrap();
    assert!(!report.terminated_nan);
    assert_eq!(next.q, before.q);
    assert_eq!(next.q_dot, before.q_dot);
    assert_eq!(next.activations, before.activations);
}

#[test]
fn pendulum_small_angle_period() {
    let m = chain(1, 9.81);
    let (mass, inertia, d): (f64, f64, f64) = (1.0, 0.1, 0.5);
    let expected = 2.0 * PI * ((inertia + mass * d * d) / (mass * 9.81 * d)).sqrt();
    let mut stepper = Stepper::new(&m, SimConfig { dt: 5e-4, n_substeps: 1 });
    let mut s = SimState::new(&m);
    s.q[0] = -FRAC_PI_2 + 0.05;
    // upward zero crossings of the deviation from hanging
    let mut crossings = Vec::new();
    let mut prev = s.q[0] + FRAC_PI_2;
    while crossings.len() < 4 && s.time < 10.0 {
        stepper.step(&m, &mut s, &[]);
        let dev = s.q[0] + FRAC_PI_2;
        if prev < 0.0 && dev >= 0.0 {
            // linear interpolation inside the substep
            crossings.push(s.time - 5e-4 * dev / (dev - prev));
        }
        prev = dev;
    }
    let period = (crossings[3] - crossings[0]) / 3.0;
    assert!((period - expected).abs() / expected < 0.01, "period {period} vs {expected}");
}

#[test]
fn double_pendulum_energy_drift() {
    let m = chain(2, 9.81);
    let mut stepper = Stepper::new(&m, SimConfig::default());
    let mut s = SimState::new(&m);
    s.q = vec![-FRAC_PI_2 + 0.6, 0.4];
    let e0 = mechanical_energy(&m, &s);
    // energy measured from the hanging rest configuration
    let floor = mechanical_energy(&m, &SimState { q: vec![-FRAC_PI_2, 0.0], ..s.clone() });
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        stepper.step(&m, &mut s, &[]);
        worst = worst.max((mechanical_energy(&m, &s) - e0).abs());
    }
    let rel = worst / (e0 - floor);
    assert!(rel < 1e-3, "relative energy drift {rel}");
}

fn standing_walker() -> (MskModel, SimState) {
    let w = MskModel::resolve("walker7").unwrap();
    let mut s = SimState::new(&w);
    s.activations.iter_mut().for_each(|a| *a = 0.0);
    let h = w.min_probe_height(&s.q).unwrap();
    let sink = w.total_mass() * w.gravity / (w.n_probes() as f64 * w.contact.k_n);
    s.q[1] = -h - sink;
    (w, s)
}

#[test]
fn standing_walker_carries_its_weight() {
    let (w, mut s) = standing_walker();
    let mut stepper = Stepper::new(&w, SimConfig::default());
    let ctrl = vec![0.0; w.n_muscles()];
    // contact settles within 0.1 s; without muscle tone the upright pose is
    // an unstable equilibrium, so average over the following 0.2 s
    for _ in 0..10 {
        assert!(!stepper.step(&w, &mut s, &ctrl).terminated_nan);
    }
    let mut fz = 0.0;
    for _ in 0..20 {
        let r = stepper.step(&w, &mut s, &ctrl);
        fz += r.grf.y / 20.0;
        assert!(r.touch.iter().all(|&t| t >= 0.0));
    }
    assert!(s.q[3..].iter().all(|q| q.abs() < 0.05), "posture drifted: {:?}", s.q);
    let weight = w.total_mass() * w.gravity;
    assert!((fz - weight).abs() / weight < 0.01, "GRF {fz} vs weight {weight}");
}

#[test]
fn nan_freezes_state() {
    let (w, s) = standing_walker();
    let mut bad = s.clone();
    bad.q_dot[4] = f64::NAN;
    let mut stepper = Stepper::new(&w, SimConfig::default());
    let mut state = bad.clone();
    let r = stepper.step(&w, &mut state, &vec![0.0; w.n_muscles()]);
    assert!(r.terminated_nan);
    assert_eq!(format!("{state:?}"), format!("{bad:?}"));
}

#[test]
fn deterministic_trajectories() {
    let (w, s0) = standing_walker();
    let run = || {
        let mut st = Stepper::new(&w, SimConfig::default());
        let mut s = s0.clone();
        let mut trace = Vec::new();
        for k in 0..30 {
            let ctrl: Vec<f64> = (0..w.n_muscles()).map(|m| ((k * 7 + m * 3) % 10) as f64 / 10.0).collect();
            st.step(&w, &mut s, &ctrl);
            trace.extend(s.q.iter().map(|v| v.to_bits()));
        }
        trace
    };
    assert_eq!(run(), run());
}

#[test]
fn step_rejects_bad_arguments() {
    let arm = MskModel::resolve("arm2").unwrap();
    let s = SimState::new(&arm);
    assert!(step(&arm, &s, &[0.0], 20).is_err());
    assert!(step(&arm, &s, &vec![0.0; arm.n_muscles()], 0).is_err());
}

#[test]
fn reset_to_frame_times_and_sites() {
    let arm = MskModel::resolve("arm2").unwrap();
    let params = SynthParams { duration: 3.0, center: vec![0.5, 1.0], amplitude: vec![0.3, 0.3], ..Default::default() };
    let clip = synth_clip(SynthKind::Sinusoid, &params, &arm).unwrap();
    assert_eq!(reset_to_frame(&arm, &clip, 0).unwrap().time, 0.0);
    let s = reset_to_frame(&arm, &clip, 250).unwrap();
    assert_eq!(s.time, 2.5);
    assert!(s.activations.iter().all(|&a| a == 0.0));
    assert!(reset_to_frame(&arm, &clip, clip.frames.len()).is_err());

    let walk = preset("walker_gait").unwrap();
    let w = MskModel::resolve("walker7").unwrap();
    for k in [0, 17, 301] {
        let s = reset_to_frame(&w, &walk, k).unwrap();
        let sites = w.site_kinematics(&s.q, &s.q_dot);
        for (a, b) in sites.iter().zip(&walk.frames[k].site_pos) {
            assert!((a.pos - b).norm() < 1e-9);
        }
    }
}

proptest! {
    #[test]
    fn contact_is_unilateral_and_inside_friction_cone(
        h in -0.05f64..0.05, vx in -3.0f64..3.0, vz in -3.0f64..3.0,
    ) {
        let w = MskModel::resolve("walker7").unwrap();
        let f = probe_force(&w, h, Vec2::new(vx, vz));
        prop_assert!(f.y >= 0.0);
        if h >= 0.0 {
            prop_assert_eq!(f, Vec2::zeros());
        }
        prop_assert!(f.x.abs() <= w.contact.mu * f.y + 1e-9);
    }

    #[test]
    fn touch_is_nonnegative_during_random_control(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let (w, mut s) = standing_walker();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut st = Stepper::new(&w, SimConfig::default());
        for _ in 0..5 {
            let ctrl: Vec<f64> = (0..w.n_muscles()).map(|_| rng.random::<f64>()).collect();
            let r = st.step(&w, &mut s, &ctrl);
            prop_assert!(r.touch.iter().all(|&t| t >= 0.0));
            prop_assert!(s.activations.iter().all(|&a| (0.0..=1.0).contains(&a)));
        }
    }
}
