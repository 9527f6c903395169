use super::*;
use crate::motion::preset;
use proptest::prelude::*;

fn arm() -> MskModel {
    MskModel::resolve("arm2").unwrap()
}

fn walker() -> MskModel {
    MskModel::resolve("walker7").unwrap()
}

/// arm2 with only the shoulder (root) and hand sites.
fn arm_two_sites() -> MskModel {
    let mut doc = arm().to_doc();
    doc.sites.retain(|s| s.name != "elbow");
    MskModel::from_doc(doc).unwrap()
}

#[test]
fn layout_dimensions() {
    let a = arm();
    let layout = ObsLayout::new(&a, &GoalSpec::default());
    let sum: usize = layout.slices.iter().map(|(_, r)| r.len()).sum();
    assert_eq!(sum, layout.dim);
    // 2·2 joints + 6·4 muscle + 0 touch + 5·(2 + 3·2) goals + 6 previous action
    assert_eq!(layout.dim, 2 * 2 + 6 * 4 + 5 * (2 + 3 * 2) + 6);
    assert_eq!(layout.slice("prev_action").unwrap().len(), a.n_muscles());

    let w = walker();
    let layout = ObsLayout::new(&w, &GoalSpec::default());
    assert_eq!(layout.dim, 17 + 56 + 4 + 5 * (6 + 6 + 18) + 14);
}

#[test]
fn observation_matches_layout_and_zero_goal_delta_on_reference() {
    for (m, clip) in [(arm(), preset("arm2_reach").unwrap()), (walker(), preset("walker_gait").unwrap())] {
        let goal = GoalSpec::default();
        let layout = ObsLayout::new(&m, &goal);
        let f = 37;
        let state = reset_to_frame(&m, &clip, f).unwrap();
        let prev = vec![0.25; m.n_muscles()];
        let obs = build_observation(&m, &state, &clip, f, &prev, &goal).unwrap();
        assert_eq!(obs.len(), layout.dim);
        assert!(obs.iter().all(|v| v.is_finite()));
        assert!(obs[layout.slice("goal0_joint_delta").unwrap()].iter().all(|&v| v == 0.0));
        assert!(obs[layout.slice("goal0_root_delta").unwrap()].iter().all(|&v| v == 0.0));
        assert!(obs[layout.slice("goal1_joint_delta").unwrap()].iter().any(|&v| v != 0.0));
        assert_eq!(&obs[layout.slice("prev_action").unwrap()], &prev[..]);
    }
}

#[test]
fn goals_clamp_to_clip_end() {
    let clip = preset("arm2_reach").unwrap();
    let last = clip.frames.len() - 1;
    assert_eq!(goal_frame(&clip, last - 3, 4, &GoalSpec::default()), last);
    assert_eq!(goal_frame(&clip, 10, 2, &GoalSpec::default()), 50);
}

#[test]
fn perfect_tracking_gives_weight_sum() {
    for (m, clip) in [(arm(), preset("arm2_reach").unwrap()), (walker(), preset("walker_gait").unwrap())] {
        let spec = RewardSpec::for_model(&m);
        let state = reset_to_frame(&m, &clip, 120).unwrap();
        let c = imitation_reward(&m, &state, &clip, 120, &spec);
        for v in [c.r_q, c.r_qdot, c.r_p, c.r_theta, c.r_v_ang, c.r_v_lin, c.r_v_root] {
            assert_eq!(v, 1.0);
        }
        assert!((c.r_t - spec.weight_sum()).abs() < 1e-15);
    }
    assert!((RewardSpec::free_root().weight_sum() - 1.11).abs() < 1e-12);
}

#[test]
fn site_position_spot_value() {
    let m = arm_two_sites();
    let clip = preset("arm2_reach").unwrap();
    let mut clip2 = clip.clone();
    for f in &mut clip2.frames {
        f.refresh_sites(&m);
    }
    let state = reset_to_frame(&m, &clip2, 5).unwrap();
    let mut reference = clip2.frames[5].clone();
    reference.site_pos[1].x += 0.1;
    let sites = m.site_kinematics(&state.q, &state.q_dot);
    let e = tracking_errors(&m, &state, &sites, &reference);
    let c = reward_from_errors(&e, 0.0, &RewardSpec::fixed_base());
    assert!((c.r_p - (-1.0f64).exp()).abs() < 1e-12);
    assert!((c.r_p - 0.36788).abs() < 1e-5);
}

#[test]
fn joint_position_spot_value() {
    let m = arm();
    let clip = preset("arm2_reach").unwrap();
    let mut state = reset_to_frame(&m, &clip, 5).unwrap();
    // one of two joints off by sqrt(0.2): mean squared error 0.1, β_q = 10
    state.q[0] += 0.2f64.sqrt();
    let c = imitation_reward(&m, &state, &clip, 5, &RewardSpec::fixed_base());
    assert!((c.r_q - (-1.0f64).exp()).abs() < 1e-12);
}

#[test]
fn reward_floors_at_zero() {
    let spec = RewardSpec { w_q: 0.3, w_qdot: 0.0, w_p: 0.0, w_theta: 0.0, w_v: 0.0, w_v_root: 0.0, ..RewardSpec::fixed_base() };
    let c = reward_from_errors(&TrackingErrors::default(), -0.5, &spec);
    assert!((c.r_imit - 0.3).abs() < 1e-15);
    assert_eq!(c.r_t, 0.0);
}

#[test]
fn penalty_examples() {
    let spec = RewardSpec { lambda_act_bound: 1.0, lambda_act_rate: 1.0, lambda_energy: 0.1, ..RewardSpec::fixed_base() };
    assert_eq!(penalty(&[0.2, 0.7], &[0.2, 0.7], &[0.0, 0.0], &spec), 0.0);
    let energy_only = RewardSpec { lambda_act_bound: 0.0, lambda_act_rate: 0.0, lambda_energy: 0.1, ..spec };
    assert!((penalty(&[0.5; 4], &[0.5; 4], &[1.0; 4], &energy_only) + 0.1).abs() < 1e-15);
    assert_eq!(penalty(&[1e6, -1e6], &[0.0, 0.0], &[1.0, 1.0], &spec), -1.0);
}

#[test]
fn termination_rules() {
    let m = walker();
    let clip = preset("walker_gait").unwrap();
    let spec = TerminationSpec::for_model(&m);
    let state = reset_to_frame(&m, &clip, 50).unwrap();
    assert!(!terminate_check(&m, &state, &clip, 50, &spec));

    // whole body shifted 2 m: relative sites intact, root rule fires
    let mut moved = state.clone();
    moved.q[0] += 2.0;
    let sites = m.site_kinematics(&moved.q, &moved.q_dot);
    let (site_dev, root_dev) = site_deviation(&m, &sites, &clip.frames[50]);
    assert!(site_dev < 1e-12 && (root_dev - 2.0).abs() < 1e-12);
    assert!(terminate_check(&m, &moved, &clip, 50, &spec));
    let site_only = TerminationSpec { delta_root: None, ..spec };
    assert!(!terminate_check(&m, &moved, &clip, 50, &site_only));

    // every non-root site displaced 0.6 m relative to the root
    let mut reference = clip.frames[50].clone();
    let root = m.root_site();
    for (i, p) in reference.site_pos.iter_mut().enumerate() {
        if i != root {
            p.x += 0.6;
        }
    }
    let sites = m.site_kinematics(&state.q, &state.q_dot);
    let (dev, _) = site_deviation(&m, &sites, &reference);
    assert!((dev - 0.6).abs() < 1e-12);
    assert!(terminated_by(&m, &sites, &reference, &spec));
}

#[test]
fn env_episode_runs_to_clip_end_without_termination() {
    let m = Arc::new(arm());
    let clip = Arc::new(preset("arm2_reach").unwrap());
    let cfg = EnvConfig { termination: TerminationSpec::never(), random_start: false, ..EnvConfig::for_model(&m) };
    let mut env = ImitationEnv::new(m.clone(), clip.clone(), cfg, 7).unwrap();
    let mut obs = vec![0.0; env.obs_dim()];
    env.reset(&mut obs).unwrap();
    let mut steps = 0;
    loop {
        let out = env.step(&vec![0.1; env.act_dim()], &mut obs).unwrap();
        steps += 1;
        assert!(!out.terminated);
        assert!(out.reward >= 0.0);
        if out.truncated {
            break;
        }
    }
    assert_eq!(steps, clip.frames.len() - 1);
}

#[test]
fn env_rejects_wrong_rate_and_action_length() {
    let m = Arc::new(arm());
    let clip = preset("arm2_reach").unwrap();
    let slow = crate::motion::resample(&clip, 50.0).unwrap();
    assert!(ImitationEnv::new(m.clone(), Arc::new(slow.clone()), EnvConfig::for_model(&m), 0).is_err());
    let fixed = prepare_clip(&m, &slow, &SimConfig::default()).unwrap();
    let mut env = ImitationEnv::new(m.clone(), Arc::new(fixed), EnvConfig::for_model(&m), 0).unwrap();
    let mut obs = vec![0.0; env.obs_dim()];
    env.reset(&mut obs).unwrap();
    assert!(env.step(&[0.0], &mut obs).is_err());
}

#[test]
fn wrap_angle_range() {
    assert_eq!(wrap_angle(PI), PI);
    assert_eq!(wrap_angle(-PI), PI);
    assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
}

fn errors_strategy() -> impl Strategy<Value = TrackingErrors> {
    (0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0, 0.0f64..50.0, 0.0f64..50.0, 0.0f64..50.0).prop_map(
        |(q, qdot, p, theta, v_ang, v_lin, v_root)| TrackingErrors { q, qdot, p, theta, v_ang, v_lin, v_root },
    )
}

proptest! {
    #[test]
    fn components_in_unit_interval(e in errors_strategy(), pen in -1.0f64..=0.0) {
        let c = reward_from_errors(&e, pen, &RewardSpec::free_root());
        for v in [c.r_q, c.r_qdot, c.r_p, c.r_theta, c.r_v_ang, c.r_v_lin, c.r_v_root] {
            prop_assert!(v > 0.0 && v <= 1.0);
        }
        prop_assert!(c.r_t >= 0.0);
        prop_assert_eq!(c.r_p == 1.0, e.p == 0.0 || RewardSpec::free_root().beta_p * e.p < f64::EPSILON);
    }

    #[test]
    fn reward_monotone_in_each_error(e in errors_strategy(), which in 0usize..7, extra in 0.0f64..5.0) {
        let spec = RewardSpec::free_root();
        let base = reward_from_errors(&e, 0.0, &spec).r_t;
        let mut worse = e;
        let field = match which {
            0 => &mut worse.q, 1 => &mut worse.qdot, 2 => &mut worse.p, 3 => &mut worse.theta,
            4 => &mut worse.v_ang, 5 => &mut worse.v_lin, _ => &mut worse.v_root,
        };
        *field += extra;
        prop_assert!(reward_from_errors(&worse, 0.0, &spec).r_t <= base);
    }

    #[test]
    fn penalty_in_range(
        a in proptest::collection::vec(-3.0f64..3.0, 4),
        b in proptest::collection::vec(-3.0f64..3.0, 4),
        act in proptest::collection::vec(0.0f64..=1.0, 4),
        l1 in 0.0f64..10.0, l2 in 0.0f64..10.0, l3 in 0.0f64..10.0,
    ) {
        let spec = RewardSpec { lambda_act_bound: l1, lambda_act_rate: l2, lambda_energy: l3, ..RewardSpec::free_root() };
        let p = penalty(&a, &b, &act, &spec);
        prop_assert!((-1.0..=0.0).contains(&p));
    }

    #[test]
    fn site_terms_invariant_under_rigid_motion(
        frame in 0usize..390, dx in -3.0f64..3.0, dz in -1.0f64..1.0, angle in -0.5f64..0.5,
        noise in proptest::collection::vec(-0.1f64..0.1, 18),
    ) {
        let m = walker();
        let clip = preset("walker_gait").unwrap();
        let mut state = reset_to_frame(&m, &clip, frame).unwrap();
        for (i, n) in noise.iter().enumerate() {
            if i < 9 { state.q[i] += n } else { state.q_dot[i - 9] += 10.0 * n }
        }
        let reference = clip.frames[frame].clone();
        let spec = RewardSpec::free_root();
        let sites = m.site_kinematics(&state.q, &state.q_dot);
        let before = reward_from_errors(&tracking_errors(&m, &state, &sites, &reference), 0.0, &spec);

        // rotate about the world origin, then translate, both state and reference
        let rot = |v: Vec2| crate::model::rot(angle, v);
        let mut s2 = state.clone();
        let p = rot(Vec2::new(state.q[0], state.q[1])) + Vec2::new(dx, dz);
        let v = rot(Vec2::new(state.q_dot[0], state.q_dot[1]));
        s2.q[0] = p.x; s2.q[1] = p.y; s2.q[2] += angle;
        s2.q_dot[0] = v.x; s2.q_dot[1] = v.y;
        let mut r2 = reference.clone();
        for i in 0..r2.site_pos.len() {
            r2.site_pos[i] = rot(reference.site_pos[i]) + Vec2::new(dx, dz);
            r2.site_rot[i] += angle;
            r2.site_linvel[i] = rot(reference.site_linvel[i]);
        }
        let sites2 = m.site_kinematics(&s2.q, &s2.q_dot);
        let after = reward_from_errors(&tracking_errors(&m, &s2, &sites2, &r2), 0.0, &spec);
        for (x, y) in [(before.r_p, after.r_p), (before.r_theta, after.r_theta), (before.r_v_ang, after.r_v_ang), (before.r_v_lin, after.r_v_lin)] {
            prop_assert!((x - y).abs() < 1e-9, "{} vs {}", x, y);
        }
    }

    #[test]
    fn infinite_thresholds_never_terminate(frame in 0usize..399, shift in -10.0f64..10.0, bend in -2.0f64..0.0) {
        let m = walker();
        let clip = preset("walker_gait").unwrap();
        let mut state = reset_to_frame(&m, &clip, frame).unwrap();
        state.q[0] += shift;
        state.q[4] = bend;
        prop_assert!(!terminate_check(&m, &state, &clip, frame, &TerminationSpec::never()));
    }
}
