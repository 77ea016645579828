mod common;

use std::sync::Arc;

use common::{
    consistent_knot, load_data_model, random_q, random_v, reference_at, rng, standing_q, static_standing, two_leg_model,
};
use kickopt_core::kinodyn::{
    capsule_distance, forward_kinematics, integrate_configuration, Configuration, WorldCapsule,
};
use kickopt_core::mocap::synth::{synth_clip, Motion, SynthOptions};
use kickopt_core::mocap::{ContactSchedule, KickTimings};
use kickopt_core::model::RobotModel;
use kickopt_core::solver::{Nlp, TermKind};
use kickopt_core::transcription::*;
use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn kick_model() -> Arc<RobotModel> {
    Arc::new(load_data_model("kick_reduced.json"))
}

fn kick_schedule(n: usize, n_contacts: usize, dt: f64, swing: usize, lock: usize, impact: usize) -> ContactSchedule {
    ContactSchedule {
        dt,
        active: vec![vec![true; n_contacts]; n],
        timings: Some(KickTimings {
            t_swing: swing as f64 * dt,
            t_lock: lock as f64 * dt,
            t_impact: impact as f64 * dt,
        }),
    }
}

// ----- cost terms ----------------------------------------------------------

#[test]
fn reference_cost_examples() {
    let model = kick_model();
    let q = standing_q(&model);
    let kin = forward_kinematics(&model, q.as_slice());
    let kps: Vec<usize> = (0..model.keypoints.len()).collect();
    let targets: Vec<Vector3<f64>> = kps.iter().map(|&k| kin.keypoint(&model, k)).collect();
    assert!(cost_reference(&model, q.as_slice(), &kps, &targets, 10.0) < 1e-28);

    let mut shifted = targets.clone();
    shifted[3] += Vector3::new(1.0, 0.0, 0.0);
    let one = cost_reference(&model, q.as_slice(), &kps, &shifted, 2.0);
    assert!((one - 2.0).abs() < 1e-12);
    let two = cost_reference(&model, q.as_slice(), &kps, &shifted, 4.0);
    assert!((two - 2.0 * one).abs() < 1e-12);
}

#[test]
fn impact_cost_examples() {
    let model = kick_model();
    let foot = model.link_index("r_foot").unwrap();
    let sched = kick_schedule(20, model.n_contacts(), 0.05, 5, 10, 12);
    let unit = Diagonal3([1.0; 3]);
    let q = standing_q(&model);
    // Pure base translation moves every point with the base velocity.
    let mut v = DVector::zeros(model.nv());
    v[0] = 2.0;
    assert_eq!(cost_impact(&model, q.as_slice(), v.as_slice(), 4, &sched, foot, &unit), 0.0);
    let still = DVector::zeros(model.nv());
    assert_eq!(cost_impact(&model, q.as_slice(), still.as_slice(), 8, &sched, foot, &unit), 0.0);
    let c = cost_impact(&model, q.as_slice(), v.as_slice(), 8, &sched, foot, &unit);
    assert!((c + 4.0).abs() < 1e-12);
}

#[test]
fn regularization_examples() {
    let w = Weights {
        q_h: 1.0,
        ..Default::default()
    };
    let zero_f = vec![Vector3::zeros(); 4];
    assert_eq!(cost_regularization(&[0.0; 8], &Vector3::zeros(), &zero_f, false, &w), 0.0);
    assert_eq!(cost_regularization(&[0.3; 8], &Vector3::zeros(), &zero_f, true, &w), 0.0);
    let h = Vector3::new(1.0, 1.0, 1.0);
    assert_eq!(cost_regularization(&[0.0; 8], &h, &zero_f, false, &w), 3.0);
}

#[test]
fn swing_gates_are_exact() {
    let model = kick_model();
    let foot = model.link_index("r_foot").unwrap();
    let sched = kick_schedule(20, model.n_contacts(), 0.05, 5, 10, 12);
    let w = Weights::default();
    let mut r = rng(11);
    let q = random_q(&model, &mut r);
    let v = random_v(&model, &mut r, 3.0);
    let f = vec![Vector3::zeros(); model.n_contacts()];
    for k in 0..20 {
        let imp = cost_impact(&model, q.as_slice(), v.as_slice(), k, &sched, foot, &w.q_i);
        let reg = cost_regularization(v.as_slice(), &Vector3::zeros(), &f, sched.in_swing(k), &w);
        if (5..=12).contains(&k) {
            assert!(imp < 0.0);
            assert_eq!(reg, 0.0);
        } else {
            assert_eq!(imp, 0.0);
            assert!(reg > 0.0);
        }
    }
}

// ----- centroidal and consistency -----------------------------------------

#[test]
fn centroidal_examples() {
    let model = kick_model();
    let m = model.total_mass;
    assert_eq!(m, 29.5);
    let mut k = Knot::zeros(&model);
    k.rdd = Vector3::new(0.0, 0.0, -9.81);
    let next = k.clone();
    let res = residual_centroidal(&k, &next, &model, 0.1);
    assert!(res.rows(0, 3).amax() < 1e-12);

    let mut k = Knot::zeros(&model);
    k.r = Vector3::new(0.1, 0.2, 0.7);
    k.c[0] = k.r;
    k.f[0] = Vector3::new(3.0, -4.0, 50.0);
    k.hd = Vector3::new(0.5, -0.25, 1.0);
    let res = centroidal_dynamics(&k, m);
    assert!((res.rows(3, 3) - k.hd).amax() < 1e-15);

    let mut k = Knot::zeros(&model);
    k.r = Vector3::new(0.0, 0.0, 1.0);
    k.c[0] = Vector3::new(0.1, 0.0, 0.0);
    k.c[1] = Vector3::new(-0.1, 0.0, 0.0);
    k.f[0] = Vector3::new(0.0, 0.0, 150.0);
    k.f[1] = Vector3::new(0.0, 0.0, 150.0);
    k.rdd = Vector3::new(0.0, 0.0, 300.0 / 29.5 - 9.81);
    let res = centroidal_dynamics(&k, m);
    assert!(res.rows(0, 3).amax() < 1e-12);
    assert_eq!(res[4], 0.0);
}

#[test]
fn centroidal_integration_rows() {
    let model = kick_model();
    let mut a = Knot::zeros(&model);
    a.r = Vector3::new(0.0, 0.0, 0.7);
    a.rd = Vector3::new(1.0, 0.0, 0.0);
    a.rdd = Vector3::new(0.0, 2.0, 0.0);
    a.hd = Vector3::new(0.0, 0.0, 3.0);
    let mut b = a.clone();
    b.r += a.rd * 0.1;
    b.rd += a.rdd * 0.1;
    b.h += a.hd * 0.1;
    assert!(centroidal_integration(&a, &b, 0.1).amax() < 1e-15);
    b.h.z += 0.2;
    assert!((centroidal_integration(&a, &b, 0.1)[8] - 0.2).abs() < 1e-15);
}

#[test]
fn consistency_examples() {
    let model = kick_model();
    let mut r = rng(5);
    for _ in 0..10 {
        let q = random_q(&model, &mut r);
        let v = random_v(&model, &mut r, 2.0);
        let k = consistent_knot(&model, q, v);
        assert!(residual_consistency(&model, &k).amax() < 1e-12);

        let mut moved = k.clone();
        moved.r.z += 0.1;
        let res = residual_consistency(&model, &moved);
        assert!((res.rows(3, 3) - Vector3::new(0.0, 0.0, 0.1)).amax() < 1e-12);
    }
}

#[test]
fn consistency_matches_brute_force_momentum() {
    let model = kick_model();
    let mut r = rng(6);
    for _ in 0..10 {
        let mut k = Knot::zeros(&model);
        k.q = random_q(&model, &mut r);
        k.v = random_v(&model, &mut r, 2.0);
        k.h = Vector3::new(0.3, -0.2, 0.1);
        k.r = Vector3::new(0.05, 0.0, 0.6);
        // Angular momentum about the CoM, link by link from point velocities.
        let kin = forward_kinematics(&model, k.q.as_slice());
        let com = kin.center_of_mass(&model);
        let mut h = Vector3::zeros();
        for (l, link) in model.links.iter().enumerate() {
            let c = kin.link_com(&model, l);
            let vel = kin.point_jacobian(&model, l, &link.com_offset) * &k.v;
            let omega = kin.angular_jacobian(&model, l) * &k.v;
            h += (c - com).cross(&(vel * link.mass)) + kin.world_inertia(&model, l) * omega;
        }
        let res = residual_consistency(&model, &k);
        assert!((res.rows(0, 3) - (k.h - h)).amax() < 1e-12);
        assert!((res.rows(3, 3) - (k.r - com)).amax() < 1e-12);
        for i in 0..model.n_contacts() {
            let expect = k.c[i] - kin.contact_point(&model, i);
            assert!((res.rows(6 + 3 * i, 3) - expect).amax() < 1e-12);
        }
    }
}

// ----- contact, biomechanics, limits --------------------------------------

#[test]
fn friction_examples() {
    let ok = friction_pyramid(&Vector3::new(0.0, 0.0, 10.0), 0.7);
    assert!(ok.iter().all(|v| *v <= 0.0));
    let bad = friction_pyramid(&Vector3::new(8.0, 0.0, 10.0), 0.7);
    assert!((bad[0] - 1.0).abs() < 1e-12);
    assert!(bad[1..].iter().all(|v| *v <= 0.0));
}

#[test]
fn contact_residual_rows() {
    let model = kick_model();
    let mut k = Knot::zeros(&model);
    let active: Vec<bool> = (0..model.n_contacts()).map(|i| i != 0).collect();
    k.f[0] = Vector3::new(0.0, 0.0, 1.0);
    for i in 1..model.n_contacts() {
        k.f[i] = Vector3::new(8.0, 0.0, 10.0);
    }
    let ground = FlatGround(0.0);
    let res = residual_contact(&k, &active, None, 0.7, &ground);
    // Inactive point first: its force rows, then active ground heights.
    assert_eq!(res.equality.len(), 3 + (model.n_contacts() - 1));
    assert_eq!(res.equality[2], 1.0);
    assert!((res.inequality.max_violation() - 1.0).abs() < 1e-12);

    let mut next = k.clone();
    next.c[3] += Vector3::new(0.01, 0.0, 0.0);
    let res = residual_contact(&next, &active, Some((&k, &active)), 0.7, &ground);
    assert!((res.equality.amax() - 1.0).abs() < 1e-12);
    assert!(res.equality.iter().any(|v| (v - 0.01).abs() < 1e-12));
}

#[test]
fn approach_angle_examples() {
    let body = Vector2::zeros();
    let a = approach_angle(&body, &Vector2::new(2.0, 1.0)).unwrap();
    assert!((a.to_degrees() - 26.565051177).abs() < 1e-6);
    let a = approach_angle(&body, &Vector2::new(1.0, 0.0)).unwrap();
    assert_eq!(a, 0.0);
    assert!(approach_angle(&body, &body).is_err());

    let model = kick_model();
    let mut traj = KinodynamicTrajectory {
        dt: 0.05,
        knots: vec![Knot::zeros(&model); 6],
    };
    let sched = kick_schedule(6, model.n_contacts(), 0.05, 1, 3, 5);
    let ankles = [5, 6, 7];
    let theta = (24f64.to_radians(), 43f64.to_radians());
    let res = residual_biomechanics(&traj, &sched, &ankles, theta, &Vector2::new(2.0, 1.0)).unwrap();
    assert_eq!(res.ankle_rates.len(), 9);
    assert_eq!(res.ankle_rates.amax(), 0.0);
    assert_eq!(res.approach.max_violation(), 0.0);
    let res = residual_biomechanics(&traj, &sched, &ankles, theta, &Vector2::new(1.0, 0.0)).unwrap();
    assert!((res.approach.max_violation() - 24f64.to_radians()).abs() < 1e-12);
    traj.knots[4].v[RobotModel::v_index(6)] = 0.3;
    let res = residual_biomechanics(&traj, &sched, &ankles, theta, &Vector2::new(2.0, 1.0)).unwrap();
    assert_eq!(res.ankle_rates.amax(), 0.3);
}

#[test]
fn torque_proxy_against_the_hip_limit() {
    let model = kick_model();
    let hip = model.joint_index("r_hip_pitch").unwrap();
    let mut k = Knot::zeros(&model);
    k.q = standing_q(&model);
    let bounds: Vec<(f64, f64)> = model.joints[1..].iter().map(|j| (j.tau_min, j.tau_max)).collect();
    let kin = forward_kinematics(&model, k.q.as_slice());
    assert_eq!(torque_proxy(&model, &kin, &k.f).amax(), 0.0);
    let clean = residual_limits_and_collision(&model, &k, &bounds);
    let n = model.n_joints();
    assert!(clean.values.rows(2 * n, n).iter().all(|v| *v == 0.0));

    // Scale a heel force so the proxy reads exactly 50 N·m at the hip.
    k.f[0] = Vector3::new(30.0, 0.0, 100.0);
    let tau = torque_proxy(&model, &kin, &k.f)[hip - 1];
    k.f[0] *= 50.0 / tau;
    let rows = residual_limits_and_collision(&model, &k, &bounds);
    let row = 2 * n + hip - 1;
    assert!((rows.values[row] - 50.0).abs() < 1e-9);
    assert!((rows.violation()[row] - 2.0).abs() < 1e-9);
}

#[test]
fn thigh_capsules_overlap_by_two_centimetres() {
    let model = two_leg_model();
    let q = Configuration::neutral(&model).into_inner();
    let kin = forward_kinematics(&model, q.as_slice());
    let margins = collision_margins(&model, &kin);
    assert_eq!(margins.len(), 1);
    assert!((margins[0] + 0.02).abs() < 1e-12);
    let a = WorldCapsule::of_link(&model, &kin, 1).unwrap();
    let b = WorldCapsule::of_link(&model, &kin, 2).unwrap();
    assert!((capsule_distance(&a, &b) - 0.10).abs() < 1e-12);
}

#[test]
fn pose_integration_examples() {
    let model = kick_model();
    let mut r = rng(9);
    let q = random_q(&model, &mut r);
    let v = random_v(&model, &mut r, 2.0);
    let next = integrate_configuration(q.as_slice(), v.as_slice(), 0.05);
    assert!(residual_pose_integration(q.as_slice(), v.as_slice(), next.as_slice(), 0.05).amax() < 1e-12);

    let mut off = next.clone();
    off[RobotModel::q_index(5)] += 0.01;
    let res = residual_pose_integration(q.as_slice(), v.as_slice(), off.as_slice(), 0.05);
    assert!((res[RobotModel::v_index(5)] - 0.01).abs() < 1e-12);
    let others: f64 = (0..res.len()).filter(|&i| i != RobotModel::v_index(5)).map(|i| res[i].abs()).sum();
    assert!(others < 1e-12);

    let mut yawed = next.clone();
    let rot = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(next[3], next[4], next[5], next[6]));
    let turned = UnitQuaternion::from_euler_angles(0.0, 0.0, 10f64.to_radians()) * rot;
    yawed[3] = turned.w;
    yawed[4] = turned.i;
    yawed[5] = turned.j;
    yawed[6] = turned.k;
    let res = residual_pose_integration(q.as_slice(), v.as_slice(), yawed.as_slice(), 0.05);
    assert!((res.rows(3, 3).norm() - 10f64.to_radians()).abs() < 1e-9);
}

// ----- problem assembly -----------------------------------------------------

fn prestoe_spec(n: usize) -> Arc<ProblemSpec> {
    let model = Arc::new(load_data_model("prestoe.json"));
    let q = Configuration::neutral(&model).into_inner();
    let reference = reference_at(&model, &vec![q; n]);
    let schedule = ContactSchedule::standing(n, model.n_contacts(), 1.0 / 30.0);
    Arc::new(ProblemSpec::new(model, reference, schedule, &ProblemConfig::default()).unwrap())
}

#[test]
fn prestoe_variable_counts() {
    let spec = prestoe_spec(112);
    let model = spec.model.clone();
    assert_eq!((model.n_joints(), model.n_contacts()), (25, 10));
    let q = Configuration::neutral(&model).into_inner();
    let mut knot = Knot::zeros(&model);
    knot.q = q;
    let traj = KinodynamicTrajectory {
        dt: spec.dt(),
        knots: vec![knot; 112],
    };
    let full = build_problem(spec.clone(), Stage::Full, Some(traj.clone())).unwrap();
    // q 32, v 31, r/r'/r'' 9, h/h' 6, c 30, f 30.
    assert_eq!(full.n_variables(), 112 * (32 + 31 + 9 + 6 + 30 + 30));
    assert_eq!(full.layout.n_tangent(), 112 * 137);

    let kin = build_problem(spec, Stage::KinematicsOnly, Some(traj)).unwrap();
    assert_eq!(kin.n_variables(), 112 * (32 + 31));
    assert!(!kin.layout.has(Field::F) && !kin.layout.has(Field::C));
    let families: Vec<&str> = kin.blocks.iter().map(|b| b.family()).collect();
    for absent in ["dynamics", "consistency", "zero_force", "friction_cone", "torque_proxy", "ankle_lock"] {
        assert!(!families.contains(&absent), "{absent} in kinematics stage");
    }
    for present in ["reference", "pose_integration", "joint_limits", "collision", "contact_height"] {
        assert!(families.contains(&present), "{present} missing");
    }
}

#[test]
fn full_stage_needs_a_warm_start() {
    let spec = prestoe_spec(4);
    assert!(build_problem(spec, Stage::Full, None).is_err());
}

#[test]
fn seeds_evaluate_finite() {
    let model = kick_model();
    let clip = synth_clip(&model, Motion::Kick, &SynthOptions::default()).unwrap();
    let spec = Arc::new(ProblemSpec::from_clip(model, &clip, &ProblemConfig::default()).unwrap());
    let kin = build_problem(spec.clone(), Stage::KinematicsOnly, None).unwrap();
    for t in kin.evaluate(&kin.initial, false).unwrap() {
        assert!(t.values.iter().all(|v| v.is_finite()), "{}", t.family);
    }
    let warm = centroidal_seed(&spec, &kin.initial);
    let full = build_problem(spec, Stage::Full, Some(warm)).unwrap();
    for t in full.evaluate(&full.initial, false).unwrap() {
        assert!(t.values.iter().all(|v| v.is_finite()), "{}", t.family);
    }
}

// ----- derivative property on a small instance ------------------------------

fn small_spec(r: &mut ChaCha8Rng) -> Arc<ProblemSpec> {
    let model = Arc::new(two_leg_model());
    let n = 5;
    let dt = 0.05;
    let qs: Vec<DVector<f64>> = (0..n).map(|_| random_q(&model, r)).collect();
    let reference = reference_at(&model, &qs);
    let mut schedule = kick_schedule(n, model.n_contacts(), dt, 2, 3, 4);
    for k in 2..4 {
        schedule.active[k][0] = false;
        schedule.active[k][1] = false;
    }
    let config = ProblemConfig {
        ankle_joints: vec!["r_hip".into()],
        kicking_foot_link: "r_leg".into(),
        ball_xy: [2.0, 1.0],
        weights: Weights {
            q_i: Diagonal3([0.5, 0.2, 0.1]),
            ..Default::default()
        },
        rest_boundaries: true,
        ..Default::default()
    };
    Arc::new(ProblemSpec::new(model, reference, schedule, &config).unwrap())
}

fn random_trajectory(model: &RobotModel, n: usize, dt: f64, r: &mut ChaCha8Rng) -> KinodynamicTrajectory {
    let mut v3 = |s: f64| Vector3::new(r.random_range(-s..s), r.random_range(-s..s), r.random_range(-s..s));
    let mut knots = Vec::new();
    for _ in 0..n {
        let mut k = Knot::zeros(model);
        k.r = v3(1.0);
        k.rd = v3(1.0);
        k.rdd = v3(3.0);
        k.h = v3(1.0);
        k.hd = v3(1.0);
        k.c = (0..model.n_contacts()).map(|_| v3(0.5)).collect();
        k.f = (0..model.n_contacts()).map(|_| v3(40.0)).collect();
        knots.push(k);
    }
    for k in &mut knots {
        k.q = random_q(model, r);
        k.v = random_v(model, r, 2.0);
    }
    KinodynamicTrajectory { dt, knots }
}

/// Block Jacobian by central differences on the knot variables.
fn fd_block_jacobian(spec: &ProblemSpec, b: &Block, knots: &[Knot]) -> DMatrix<f64> {
    let h = 1e-6;
    let mut cols = Vec::new();
    for ki in 0..b.span {
        for &field in &b.fields {
            for c in 0..field.tangent_dim(&spec.model) {
                let mut plus = knots.to_vec();
                plus[ki].nudge(field, c, h);
                let mut minus = knots.to_vec();
                minus[ki].nudge(field, c, -h);
                cols.push((b.eval(spec, &plus).unwrap() - b.eval(spec, &minus).unwrap()) / (2.0 * h));
            }
        }
    }
    DMatrix::from_columns(&cols)
}

#[test]
fn jacobians_match_finite_differences() {
    let mut r = rng(21);
    for trial in 0..4 {
        let spec = small_spec(&mut r);
        let traj = random_trajectory(&spec.model, spec.n_knots(), spec.dt(), &mut r);
        for stage in [Stage::KinematicsOnly, Stage::Full] {
            let problem = build_problem(spec.clone(), stage, Some(traj.clone())).unwrap();
            for b in &problem.blocks {
                let knots = problem.knots_of(b, &traj);
                let analytic = b.jacobian(&spec, knots).unwrap();
                let fd = fd_block_jacobian(&spec, b, knots);
                let err = (&analytic - &fd).amax();
                assert!(
                    err <= 1e-4 * fd.amax().max(1.0),
                    "trial {trial} {stage:?} {} at knot {}: {err:e}",
                    b.family(),
                    b.knot
                );
            }
        }
    }
}

#[test]
fn cost_gradient_matches_finite_differences() {
    let mut r = rng(22);
    for _ in 0..4 {
        let spec = small_spec(&mut r);
        let traj = random_trajectory(&spec.model, spec.n_knots(), spec.dt(), &mut r);
        let problem = build_problem(spec.clone(), Stage::Full, Some(traj.clone())).unwrap();
        let n = problem.n_tangent();
        let mut grad = DVector::<f64>::zeros(n);
        for t in problem.evaluate(&traj, true).unwrap() {
            let sign = match t.kind {
                TermKind::Cost => 2.0,
                TermKind::Concave => -2.0,
                _ => continue,
            };
            let g = t.jacobian.as_ref().unwrap().tr_mul(&t.values) * sign;
            for (i, &c) in t.cols.iter().enumerate() {
                grad[c] += g[i];
            }
        }
        for _ in 0..5 {
            let dir: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let h = 1e-6;
            let step = |s: f64| -> Vec<f64> { dir.iter().map(|d| d * s).collect() };
            let plus = problem.cost(&problem.retract(&traj, &step(h))).unwrap();
            let minus = problem.cost(&problem.retract(&traj, &step(-h))).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            assert!((fd - analytic).abs() <= 1e-4 * fd.abs().max(1.0), "{fd} vs {analytic}");
        }
    }
}

// ----- static standing ------------------------------------------------------

#[test]
fn static_standing_satisfies_all_equalities() {
    let model = kick_model();
    let n = 4;
    let traj = static_standing(&model, n, 1.0 / 30.0);
    let q = &traj.knots[0].q;
    let reference = reference_at(&model, &vec![q.clone(); n]);
    let schedule = ContactSchedule::standing(n, model.n_contacts(), 1.0 / 30.0);
    let config = ProblemConfig {
        rest_boundaries: true,
        ..Default::default()
    };
    let spec = Arc::new(ProblemSpec::new(model.clone(), reference, schedule, &config).unwrap());
    let problem = build_problem(spec, Stage::Full, Some(traj.clone())).unwrap();
    assert!(problem.blocks.iter().any(|b| b.family() == "rest_boundary"));
    for t in problem.evaluate(&traj, false).unwrap() {
        if t.kind == TermKind::Equality {
            assert!(t.values.amax() < 1e-10, "{} {:e}", t.family, t.values.amax());
        }
    }

    // Virtual work: τ_j = −Σ f_i · ∂c_i/∂q_j.
    let k = &traj.knots[0];
    let kin = forward_kinematics(&model, k.q.as_slice());
    let proxy = torque_proxy(&model, &kin, &k.f);
    let total: Vector3<f64> = k.f.iter().sum();
    assert!((total.z - 29.5 * 9.81).abs() < 1e-9);
    for j in 1..=model.n_joints() {
        let h = 1e-6;
        let mut plus = k.q.clone();
        plus[RobotModel::q_index(j)] += h;
        let mut minus = k.q.clone();
        minus[RobotModel::q_index(j)] -= h;
        let (kp, km) = (forward_kinematics(&model, plus.as_slice()), forward_kinematics(&model, minus.as_slice()));
        let work: f64 = (0..model.n_contacts())
            .map(|i| k.f[i].dot(&(kp.contact_point(&model, i) - km.contact_point(&model, i))) / (2.0 * h))
            .sum();
        assert!((proxy[j - 1] + work).abs() < 1e-5, "joint {j}: {} vs {}", proxy[j - 1], -work);
    }
}
