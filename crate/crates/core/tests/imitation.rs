mod common;

use common::{load_data_model, random_q, random_v, rng};
use kickopt_core::imitation::*;
use kickopt_core::kinodyn::Configuration;
use kickopt_core::model::RobotModel;
use nalgebra::{DVector, Vector3};
use proptest::prelude::*;
use rand::Rng;

fn model() -> RobotModel {
    load_data_model("kick_reduced.json")
}

fn standing(model: &RobotModel) -> State {
    State::new(Configuration::neutral(model).into_inner(), DVector::zeros(model.nv()))
}

#[test]
fn zero_error_gives_the_weights() {
    let model = model();
    let w = RewardWeights::default();
    let mut r = rng(3);
    for _ in 0..20 {
        let s = State::new(random_q(&model, &mut r), random_v(&model, &mut r, 2.0));
        let c = reward_imitation(&model, &s, &s, &w).unwrap();
        assert_eq!(c.keypoint, w.w_k);
        assert_eq!(c.joint, w.w_q + w.w_v);
        assert_eq!(c.com, w.w_c);
    }
}

#[test]
fn unit_joint_error_decays_by_e() {
    let model = model();
    let w = RewardWeights { w_q: 1.0, k_q: -1.0, ..Default::default() };
    let reference = standing(&model);
    let mut s = reference.clone();
    // Error vector (0.6, 0.8) on two joints has unit norm.
    s.q[7] += 0.6;
    s.q[8] += 0.8;
    let c = reward_imitation(&model, &s, &reference, &w).unwrap();
    assert!((c.joint - ((-1.0_f64).exp() + w.w_v)).abs() < 1e-15);
}

#[test]
fn rewards_decrease_with_error() {
    let model = model();
    let w = RewardWeights::default();
    let reference = standing(&model);
    let mut last: Option<RewardComponents> = None;
    for step in 0..6 {
        let mut s = reference.clone();
        s.q[0] += 0.05 * step as f64;
        s.q[9] += 0.1 * step as f64;
        s.v[8] += 0.3 * step as f64;
        let c = reward_imitation(&model, &s, &reference, &w).unwrap();
        if let Some(p) = last {
            assert!(c.keypoint < p.keypoint);
            assert!(c.joint < p.joint);
            assert!(c.com < p.com);
        }
        last = Some(c);
    }
}

#[test]
fn reward_weights_reject_positive_scales() {
    let w = RewardWeights { k_c: 0.5, ..Default::default() };
    assert!(w.validate().is_err());
    let w = RewardWeights { w_v: -0.1, ..Default::default() };
    assert!(w.validate().is_err());
}

#[test]
fn ball_reward_examples() {
    let n = Vector3::x();
    assert_eq!(reward_ball(&Vector3::new(0.0, 3.0, -1.0), &n, 1.0).unwrap(), 0.0);
    let r = reward_ball(&Vector3::new(2.0_f64.ln(), 0.0, 0.0), &n, 1.0).unwrap();
    assert!((r - 1.0).abs() < 1e-15);
    assert_eq!(reward_ball(&Vector3::new(-5.0, 0.0, 0.0), &n, 1.0).unwrap(), 0.0);
    assert!(reward_ball(&Vector3::x(), &Vector3::new(1.0, 0.1, 0.0), 1.0).is_err());
}

#[test]
fn pd_torque_examples() {
    let model = model();
    let n = model.n_joints();
    let hip = model.joint_index("r_hip_pitch").unwrap() - 1;
    let zeros = vec![0.0; n];
    let q = vec![0.2; n];
    let kp = vec![100.0; n];
    let kd = vec![5.0; n];
    let tau = pd_torque(&model, &q, &q, &zeros, &kp, &kd).unwrap();
    assert!(tau.iter().all(|t| *t == 0.0));

    let mut q_des = zeros.clone();
    q_des[hip] = 1.0;
    let tau = pd_torque(&model, &q_des, &zeros, &zeros, &kp, &zeros).unwrap();
    assert_eq!(model.joints[hip + 1].tau_max, 48.0);
    assert_eq!(tau[hip], 48.0);

    let small: Vec<f64> = (0..n).map(|i| 0.001 * i as f64).collect();
    let a = pd_torque(&model, &small, &zeros, &small, &kp, &kd).unwrap();
    let b = pd_torque(&model, &small, &zeros, &small, &vec![200.0; n], &kd).unwrap();
    let c = pd_torque(&model, &small, &zeros, &zeros, &kp, &zeros).unwrap();
    for i in 0..n {
        assert!((b[i] - a[i] - c[i]).abs() < 1e-12);
    }

    assert!(pd_torque(&model, &zeros, &zeros, &zeros, &kp[1..], &kd).is_err());
}

fn reference_motion(model: &RobotModel, frames: usize) -> ReferenceMotion {
    let base = standing(model);
    ReferenceMotion {
        rate: 30.0,
        frames: (0..frames)
            .map(|i| {
                let mut s = base.clone();
                s.q[0] = i as f64;
                s
            })
            .collect(),
    }
}

#[test]
fn observation_lookahead_indices() {
    let model = model();
    let reference = reference_motion(&model, 60);
    let idx: Vec<usize> = LOOKAHEAD.iter().map(|d| reference.frame_index(*d)).collect();
    assert_eq!(idx, vec![1, 20, 40]);

    let s = standing(&model);
    let prev = vec![0.0; model.n_joints()];
    let o = assemble_observation(&model, &reference, 0.0, &s, &prev).unwrap();
    let d = State::dim(&model);
    assert_eq!(o.len(), 4 * d + model.n_joints());
    assert_eq!([o[0], o[d], o[2 * d]], [1.0, 20.0, 40.0]);
}

#[test]
fn observation_clamps_past_the_end() {
    let model = model();
    let reference = reference_motion(&model, 10);
    let s = standing(&model);
    let prev = vec![0.1; model.n_joints()];
    let o = assemble_observation(&model, &reference, 5.0, &s, &prev).unwrap();
    let d = State::dim(&model);
    for i in 0..3 {
        assert_eq!(o.rows(i * d, d), o.rows(0, d));
        assert_eq!(o[i * d], 9.0);
    }
    let again = assemble_observation(&model, &reference, 0.4, &s, &prev).unwrap();
    assert_eq!(again.len(), o.len());
    assert!(assemble_observation(&model, &reference, -0.1, &s, &prev).is_err());
}

#[test]
fn experiment_schedule_endpoints() {
    let s = RetSchedule::experiment();
    s.validate().unwrap();
    assert_eq!(ret_threshold(0.0, &s), 0.30);
    assert_eq!(ret_threshold(s.t_start - 1.0, &s), 0.30);
    assert_eq!(ret_threshold(s.t_end, &s), 0.10);
    assert_eq!(ret_threshold(2e9, &s), 0.10);
}

#[test]
fn two_stair_schedule_levels() {
    let s = RetSchedule {
        d_max: 0.3,
        d_min: 0.1,
        t_start: 0.0,
        t_end: 2000.0,
        n: 2,
        gamma: 200.0,
    };
    // Stairs drop at t_start + iΔt; the middle of the schedule is the first
    // drop itself, so it sits half way down that stair.
    assert!((ret_threshold(1000.0, &s) - 0.25).abs() < 1e-3);
    assert!((ret_threshold(500.0, &s) - 0.3).abs() < 1e-3);
    assert!((ret_threshold(1500.0, &s) - 0.2).abs() < 1e-3);
}

#[test]
fn schedule_validation() {
    let good = RetSchedule::experiment();
    assert!(RetSchedule { d_min: 0.4, ..good }.validate().is_err());
    assert!(RetSchedule { t_end: good.t_start, ..good }.validate().is_err());
    assert!(RetSchedule { n: 0, ..good }.validate().is_err());
    assert!(RetSchedule { gamma: 0.0, ..good }.validate().is_err());
}

#[test]
fn termination_examples() {
    let model = model();
    let links = default_link_set(&model);
    let reference = standing(&model).q;
    for d in [1e-6, 0.1, 0.3] {
        assert!(!should_terminate(&model, reference.as_slice(), reference.as_slice(), &links, d).unwrap());
    }
    let mut q = reference.clone();
    q[0] += 0.31;
    assert!(should_terminate(&model, q.as_slice(), reference.as_slice(), &links, 0.30).unwrap());
    let mut q = reference.clone();
    q[1] += 0.05;
    assert!(!should_terminate(&model, q.as_slice(), reference.as_slice(), &links, 0.10).unwrap());
    assert!(should_terminate(&model, q.as_slice(), reference.as_slice(), &[], 0.10).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn ball_reward_ignores_away_and_orthogonal(
        v in prop::array::uniform3(-20.0..20.0f64),
        n in prop::array::uniform3(-1.0..1.0f64),
        w in 0.0..5.0f64,
        o in -10.0..10.0f64,
    ) {
        let n = Vector3::from(n);
        prop_assume!(n.norm() > 1e-3);
        let n = n.normalize();
        let v = Vector3::from(v);
        let r = reward_ball(&v, &n, w).unwrap();
        if v.dot(&n) <= 0.0 {
            prop_assert_eq!(r, 0.0);
        }
        // Add a component orthogonal to n.
        let t = n.cross(&Vector3::new(0.3, -0.7, 0.64)).normalize();
        let r2 = reward_ball(&(v + t * o), &n, w).unwrap();
        prop_assert!((r - r2).abs() <= 1e-9 * (1.0 + r.abs()));
    }

    #[test]
    fn ret_threshold_is_bounded_and_monotone(
        d_min in 0.01..0.5f64,
        span in 0.01..0.5f64,
        t_start in 0.0..1e6f64,
        len in 1.0..1e6f64,
        n in 1usize..8,
        gamma in 0.1..50.0f64,
        a in 0.0..1.0f64,
        b in 0.0..1.0f64,
    ) {
        let s = RetSchedule { d_max: d_min + span, d_min, t_start, t_end: t_start + len, n, gamma };
        let horizon = t_start + 1.2 * len;
        let (t0, t1) = if a < b { (a * horizon, b * horizon) } else { (b * horizon, a * horizon) };
        let (d0, d1) = (ret_threshold(t0, &s), ret_threshold(t1, &s));
        prop_assert!(d1 <= d0 + 1e-15);
        prop_assert!(d0 >= s.d_min && d0 <= s.d_max);
    }

    #[test]
    fn pd_torque_stays_within_limits(seed in 0u64..1000) {
        let model = model();
        let n = model.n_joints();
        let mut r = rng(seed);
        let mut draw = |s: f64| -> Vec<f64> { (0..n).map(|_| r.random_range(-s..s)).collect() };
        let (q_des, q, v) = (draw(3.0), draw(3.0), draw(20.0));
        let kp: Vec<f64> = draw(500.0).iter().map(|x| x.abs()).collect();
        let kd: Vec<f64> = draw(50.0).iter().map(|x| x.abs()).collect();
        let tau = pd_torque(&model, &q_des, &q, &v, &kp, &kd).unwrap();
        for i in 0..n {
            let j = &model.joints[i + 1];
            prop_assert!(tau[i] >= j.tau_min && tau[i] <= j.tau_max);
        }
    }

    #[test]
    fn termination_is_monotone(seed in 0u64..200, d in 0.01..1.0f64, shrink in 0.1..1.0f64) {
        let model = model();
        let mut r = rng(seed);
        let q = random_q(&model, &mut r);
        let mut q_ref = q.clone();
        for i in 7..q_ref.len() {
            q_ref[i] += r.random_range(-0.5..0.5);
        }
        q_ref[0] += r.random_range(-0.2..0.2);
        let all = default_link_set(&model);
        let some = &all[..all.len() / 2 + 1];
        let small = should_terminate(&model, q.as_slice(), q_ref.as_slice(), some, d).unwrap();
        let large = should_terminate(&model, q.as_slice(), q_ref.as_slice(), &all, d).unwrap();
        let tighter = should_terminate(&model, q.as_slice(), q_ref.as_slice(), some, d * shrink).unwrap();
        prop_assert!(!small || large);
        prop_assert!(!small || tighter);
    }

    #[test]
    fn imitation_components_are_bounded(seed in 0u64..300) {
        let model = model();
        let w = RewardWeights::default();
        let mut r = rng(seed);
        let a = State::new(random_q(&model, &mut r), random_v(&model, &mut r, 3.0));
        let b = State::new(random_q(&model, &mut r), random_v(&model, &mut r, 3.0));
        let c = reward_imitation(&model, &a, &b, &w).unwrap();
        prop_assert!(c.keypoint > 0.0 && c.keypoint <= w.w_k);
        prop_assert!(c.joint > 0.0 && c.joint <= w.w_q + w.w_v);
        prop_assert!(c.com > 0.0 && c.com <= w.w_c);
    }
}
