use super::*;
use crate::motion::{preset, preset_names};
use proptest::prelude::*;

fn arm() -> Arc<MskModel> {
    Arc::new(MskModel::resolve("arm2").unwrap())
}

#[test]
fn oracle_replay_is_exact_on_every_preset() {
    for name in preset_names() {
        let clip = preset(name).unwrap();
        let model = Arc::new(MskModel::resolve(&clip.model_ref).unwrap());
        let cfg = EnvConfig::for_model(&model);
        let (rep, traces) = evaluate(&model, &[clip], &cfg, Driver::Oracle, 1).unwrap();
        assert_eq!(rep.overall.success_rate, 100.0);
        assert_eq!(rep.overall.frame_coverage, 100.0);
        for v in [
            rep.overall.joint_angle_err,
            rep.overall.joint_vel_err,
            rep.overall.root_pos_err,
            rep.overall.root_yaw_err,
            rep.overall.rel_site_err,
            rep.overall.abs_site_err,
        ] {
            assert_eq!(v, 0.0, "{name}: {rep:?}");
        }
        assert_eq!(traces[0].steps, traces[0].available);
    }
}

#[test]
fn wrapped_yaw_error() {
    let e = wrap_angle(179f64.to_radians() - (-179f64).to_radians()).abs().to_degrees();
    assert!((e - 2.0).abs() < 1e-9);
}

#[test]
fn joint_angle_rms_of_one_offset_joint() {
    let model = arm();
    let clip = preset("arm2_reach").unwrap();
    let f = &clip.frames[10];
    let mut q = f.q.clone();
    q[1] += 0.1;
    let sites = model.site_kinematics(&q, &f.q_dot);
    let e = frame_errors(&model, &q, &f.q_dot, &sites, f, Vec2::zeros());
    // 0.1/√2 rad = 4.0514°
    assert!((e.joint_angle - 0.1 / 2f64.sqrt()).abs() < 1e-15);
    assert!((e.joint_angle.to_degrees() - 4.0514).abs() < 1e-3);
    assert_eq!(e.root_pos, 0.0);
}

#[test]
fn empty_clip_set_is_input_error() {
    let model = arm();
    let cfg = EnvConfig::for_model(&model);
    assert!(matches!(evaluate(&model, &[], &cfg, Driver::Oracle, 1), Err(Error::Input(_))));
}

#[test]
fn policy_evaluation_is_deterministic() {
    let model = arm();
    let clip = preset("arm2_reach").unwrap();
    let cfg = EnvConfig::for_model(&model);
    let obs = crate::env::ObsLayout::new(&model, &cfg.goal).dim;
    let pcfg = crate::policy::PolicyConfig { actor_widths: vec![16, 16], critic_widths: vec![8], init_std: 0.2, ..Default::default() };
    let pol = GaussianPolicy::new(obs, model.n_muscles(), pcfg, 3).unwrap();
    let a = evaluate_policy(&pol, &model, &[clip.clone()], &cfg, 2).unwrap();
    let b = evaluate_policy(&pol, &model, &[clip], &cfg, 2).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert!((0.0..=100.0).contains(&a.overall.success_rate));
    assert!((0.0..=100.0).contains(&a.overall.frame_coverage));
    assert!(a.overall.frame_coverage >= a.overall.success_rate - 1e-9 || a.overall.success_rate == 100.0);
}

fn square(onsets: &[usize], high: usize, len: usize) -> Vec<f64> {
    let mut g = vec![0.0; len];
    for &o in onsets {
        for v in g.iter_mut().skip(o).take(high) {
            *v = 500.0;
        }
    }
    g
}

#[test]
fn square_wave_cycles() {
    let g = square(&[0, 100, 200], 40, 260);
    let cycles = segment_gait_cycles(&g, 100.0, 700.0, &GaitConfig::default());
    assert_eq!(cycles, vec![(0, 100), (100, 200)]);
    assert!(segment_gait_cycles(&vec![0.0; 300], 100.0, 700.0, &GaitConfig::default()).is_empty());
    // 0.2 s cycle dropped by a 0.4 s minimum
    let g = square(&[0, 20], 5, 60);
    let cfg = GaitConfig { min_duration: 0.4, ..Default::default() };
    assert!(segment_gait_cycles(&g, 100.0, 700.0, &cfg).is_empty());
}

#[test]
fn hysteresis_rejects_chatter() {
    let mut g = square(&[0, 100], 40, 200);
    // a 2-frame dip inside the stance and a 2-frame spike in swing
    g[20] = 0.0;
    g[21] = 0.0;
    g[70] = 500.0;
    g[71] = 500.0;
    assert_eq!(contact_onsets(&g, 100.0, 35.0, 0.05), vec![0, 100]);
}

#[test]
fn cycle_average_cases() {
    let s: Vec<f64> = (0..21).map(|i| ((i % 10) as f64).sin()).collect();
    let p = cycle_average("x", &s, &[(0, 10), (10, 20)]).unwrap();
    assert_eq!(p.mean.len(), CYCLE_GRID);
    assert!(p.std.iter().all(|v| *v < 1e-12));
    let s = [vec![0.0; 10], vec![1.0; 11]].concat();
    let p = cycle_average("y", &s, &[(0, 9), (10, 20)]).unwrap();
    assert!(p.mean.iter().all(|v| (v - 0.5).abs() < 1e-15));
    assert!(p.std.iter().all(|v| (v - 0.5).abs() < 1e-15));
    let s: Vec<f64> = (0..=37).map(|i| (i as f64 * 0.3).cos()).collect();
    let p = cycle_average("z", &s, &[(0, 37)]).unwrap();
    assert_eq!(p.mean[0], s[0]);
    assert_eq!(p.mean[100], s[37]);
    assert!(cycle_average("w", &s, &[]).is_err());
}

#[test]
fn emg_envelope_cases() {
    let c = emg_preprocess(&vec![-0.3; 500], 1000.0).unwrap();
    assert!(c.iter().all(|v| (v - 1.0).abs() < 1e-12));
    let x: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.01).sin() * (i as f64 * 0.3).cos()).collect();
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    assert_eq!(emg_preprocess(&x, 1000.0).unwrap(), emg_preprocess(&neg, 1000.0).unwrap());
    assert_eq!(emg_preprocess(&[0.0; 10], 1000.0).unwrap(), vec![0.0; 10]);
    assert!(emg_preprocess(&x, 0.0).is_err());
    let e = emg_preprocess(&x, 1000.0).unwrap();
    assert!(e.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn lowpass_attenuates_50hz_vs_1hz() {
    let rate = 1000.0;
    let amp = |f: f64| {
        let x: Vec<f64> = (0..4000).map(|i| (std::f64::consts::TAU * f * i as f64 / rate).sin()).collect();
        let y = lowpass_filtfilt(&x, rate, EMG_CUTOFF);
        y[1000..3000].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let db = 20.0 * (amp(1.0) / amp(50.0)).log10();
    assert!(db > 20.0, "{db} dB");
    // zero-phase forward-backward: cutoff gain is |H|² = 0.5
    assert!((amp(EMG_CUTOFF) - 0.5).abs() < 0.01);
}

#[test]
fn correlation_cases() {
    let a: Vec<f64> = (0..101).map(|i| (i as f64 * 0.1).sin()).collect();
    assert!((correlate(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let n: Vec<f64> = a.iter().map(|v| -v).collect();
    assert!((correlate(&a, &n).unwrap() + 1.0).abs() < 1e-12);
    assert!((correlate(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap() - 0.98198).abs() < 1e-5);
    assert_eq!(correlate(&a, &vec![2.0; 101]), None);
}

#[test]
fn mpjae_cases() {
    let model = MskModel::resolve("walker7").unwrap();
    let clip = preset("walker_gait").unwrap();
    let joints = ["hip_r", "knee_r"];
    assert_eq!(mpjae(&model, &clip, &clip, &joints).unwrap(), 0.0);
    let shift = |offs: &[(usize, f64)]| {
        let mut c = clip.clone();
        for f in &mut c.frames {
            for &(j, d) in offs {
                f.q[model.joint_coord(j)] += d.to_radians();
            }
        }
        c
    };
    let (h, k) = (model.joint_index("hip_r").unwrap(), model.joint_index("knee_r").unwrap());
    let two = shift(&[(h, 2.0), (k, 2.0)]);
    assert!((mpjae(&model, &two, &clip, &joints).unwrap() - 2.0).abs() < 1e-9);
    let mixed = shift(&[(h, 1.0), (k, 3.0)]);
    assert!((mpjae(&model, &mixed, &clip, &joints).unwrap() - 2.0).abs() < 1e-9);
    assert!(matches!(mpjae(&model, &clip, &clip, &["nope"]), Err(Error::Input(_))));
}

#[test]
fn walker_link_touch_series() {
    let model = Arc::new(MskModel::resolve("walker7").unwrap());
    let clip = Arc::new(crate::env::prepare_clip(&model, &preset("walker_gait").unwrap(), &Default::default()).unwrap());
    let cfg = EnvConfig::for_model(&model);
    let tr = run_episode(&model, &clip, &cfg, Driver::Oracle, 0).unwrap();
    let r = link_touch_series(&model, &tr, "foot_r").unwrap();
    assert_eq!(r.len(), tr.steps);
    assert!(r.iter().all(|v| *v >= 0.0));
    assert!(link_touch_series(&model, &tr, "hand").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn correlation_affine_invariance(seed in 0u64..1000, alpha in 0.1f64..10.0, beta in -5.0f64..5.0) {
        let a: Vec<f64> = (0..101).map(|i| ((i as f64 + seed as f64) * 0.37).sin()).collect();
        let b: Vec<f64> = (0..101).map(|i| ((i as f64 * 1.3 + seed as f64) * 0.11).cos() + 0.1 * i as f64 / 101.0).collect();
        let r = correlate(&a, &b).unwrap();
        let bt: Vec<f64> = b.iter().map(|v| alpha * v + beta).collect();
        let bn: Vec<f64> = b.iter().map(|v| -alpha * v + beta).collect();
        prop_assert!((correlate(&a, &bt).unwrap() - r).abs() < 1e-9);
        prop_assert!((correlate(&a, &bn).unwrap() + r).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn cycles_disjoint_and_ordered(bits in proptest::collection::vec(any::<bool>(), 10..80)) {
        // piecewise-constant random contact pattern, 10-frame blocks
        let g: Vec<f64> = bits.iter().flat_map(|&b| std::iter::repeat_n(if b { 400.0 } else { 0.0 }, 10)).collect();
        let cycles = segment_gait_cycles(&g, 100.0, 700.0, &GaitConfig::default());
        for w in cycles.windows(2) {
            prop_assert!(w[0].1 <= w[1].0);
        }
        for &(a, b) in &cycles {
            prop_assert!(a < b);
        }
    }

    #[test]
    fn cycle_std_nonnegative(vals in proptest::collection::vec(-10.0f64..10.0, 31..31usize+1)) {
        let p = cycle_average("p", &vals, &[(0, 10), (10, 20), (20, 30)]).unwrap();
        prop_assert!(p.std.iter().all(|v| *v >= 0.0));
        prop_assert_eq!(p.n_cycles, 3);
    }
}
