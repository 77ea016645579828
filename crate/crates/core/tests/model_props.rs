mod common;

use common::*;
use kickopt_core::{load_model, model_to_json, Error};
use proptest::prelude::*;
use serde_json::{json, Value};

fn prestoe_doc() -> Value {
    let text = std::fs::read_to_string(data_path("prestoe.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn prestoe_matches_table_limits() {
    let model = load_data_model("prestoe.json");
    assert_eq!(model.n_joints(), 25);
    assert_eq!(model.n_contacts(), 10);
    assert_eq!(model.nq(), 32);
    assert_eq!(model.nv(), 31);
    assert!((model.total_mass - 29.5).abs() < 1e-9);
    let limit = |name: &str| model.joints[model.joint_index(name).unwrap()].tau_max;
    assert_eq!(limit("r_hip_pitch"), 48.0);
    assert_eq!(limit("l_knee"), 200.0);
    assert_eq!(limit("r_ankle_pitch"), 100.0);
    assert_eq!(limit("l_toe"), 10.0);
    for side in [kickopt_core::model::Side::Left, kickopt_core::model::Side::Right] {
        assert_eq!(model.contacts_on(side).count(), 5);
    }
}

#[test]
fn single_link_total_mass() {
    let model = load_model(
        r#"{"links":[{"name":"b","mass":1,"inertia":[0.1,0,0,0.1,0,0.1]}],
            "joints":[{"name":"root","kind":"floating-base"}]}"#,
    )
    .unwrap();
    assert_eq!(model.total_mass, 1.0);
    assert_eq!(model.n_joints(), 0);
}

#[test]
fn shipped_models_round_trip() {
    for name in ["prestoe.json", "kick_reduced.json"] {
        let model = load_data_model(name);
        let again = load_model(&model_to_json(&model)).unwrap();
        assert_eq!(model, again);
    }
}

/// Mutations that each break exactly one documented invariant, paired with
/// the invariant name the error must carry.
fn mutate(doc: &mut Value, kind: usize, pick: usize) -> &'static str {
    let n_links = doc["links"].as_array().unwrap().len();
    let n_joints = doc["joints"].as_array().unwrap().len();
    let link = pick % n_links;
    let joint = 1 + pick % (n_joints - 1);
    match kind {
        0 => {
            doc["joints"][joint]["q_min"] = json!(1.0);
            doc["joints"][joint]["q_max"] = json!(-1.0);
            "q_min <= q_max"
        }
        1 => {
            doc["joints"][joint]["v_min"] = json!(5.0);
            doc["joints"][joint]["v_max"] = json!(-5.0);
            "v_min <= v_max"
        }
        2 => {
            doc["joints"][joint]["tau_min"] = json!(5.0);
            doc["joints"][joint]["tau_max"] = json!(-5.0);
            "tau_min <= tau_max"
        }
        3 => {
            doc["joints"][joint]["axis"] = json!([0.0, 1.0, 0.001]);
            "unit axis"
        }
        4 => {
            doc["links"][link]["inertia"] = json!([1.0, 0.0, 0.0, -1.0, 0.0, 1.0]);
            "inertia"
        }
        5 => {
            let idx = pick % doc["collision_pairs"].as_array().unwrap().len();
            let first = doc["collision_pairs"][idx][0].clone();
            doc["collision_pairs"][idx] = json!([first, first]);
            "collision pair"
        }
        6 => {
            let c = pick % doc["contact_points"].as_array().unwrap().len();
            doc["contact_points"][c]["link"] = json!(n_links + 3);
            "contact link"
        }
        7 => {
            let k = pick % doc["keypoints"].as_array().unwrap().len();
            doc["keypoints"][k]["link"] = json!(n_links);
            "keypoint link"
        }
        8 => {
            doc["total_mass"] = json!(30.5);
            "total mass"
        }
        9 => {
            doc["joints"][joint]["parent"] = json!(joint);
            "cycle"
        }
        _ => {
            // Capsule radius must be positive; pick a link that has one.
            let with_capsule: Vec<usize> = (0..n_links)
                .filter(|&i| !doc["links"][i]["capsule"].is_null())
                .collect();
            let l = with_capsule[pick % with_capsule.len()];
            doc["links"][l]["capsule"]["radius"] = json!(0.0);
            "capsule radius"
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn every_invariant_mutation_is_rejected(kind in 0usize..11, pick in 0usize..1000) {
        let mut doc = prestoe_doc();
        let expected = mutate(&mut doc, kind, pick);
        match load_model(&doc.to_string()) {
            Err(Error::Validation { invariant, .. }) => {
                prop_assert!(invariant.contains(expected), "{invariant} vs {expected}");
            }
            other => prop_assert!(false, "expected validation error for {expected}, got {other:?}"),
        }
    }
}

#[test]
fn wrong_type_names_field() {
    let mut doc = prestoe_doc();
    doc["joints"][4]["q_max"] = json!("high");
    match load_model(&doc.to_string()) {
        Err(Error::Parse { field, .. }) => assert_eq!(field, "joints[4].q_max"),
        other => panic!("{other:?}"),
    }
}
