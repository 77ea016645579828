use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use kickopt_core::mocap::ContactSchedule;
use kickopt_core::model::RobotModel;
use kickopt_core::transcription::{foot_velocity, KinodynamicTrajectory};
use nalgebra::Vector3;
use serde::Serialize;

pub const TOOL: &str = "kickopt";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance stamped on every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_hash: String,
}

impl Header {
    pub fn new(config_hash: String) -> Self {
        Header {
            tool: TOOL,
            version: VERSION,
            config_hash,
        }
    }

    /// Comment lines for CSV outputs.
    pub fn csv_comment(&self) -> String {
        format!("# {} {}\n# config {}\n", self.tool, self.version, self.config_hash)
    }
}

#[derive(Serialize)]
struct KnotRecord<'a> {
    t: f64,
    q: &'a [f64],
    v: &'a [f64],
    r: [f64; 3],
    rd: [f64; 3],
    rdd: [f64; 3],
    h: [f64; 3],
    hd: [f64; 3],
    c: Vec<[f64; 3]>,
    f: Vec<[f64; 3]>,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[derive(Serialize)]
struct TrajectoryDoc<'a> {
    #[serde(flatten)]
    header: &'a Header,
    model: &'a str,
    model_hash: &'a str,
    dt: f64,
    n_knots: usize,
    schedule: &'a ContactSchedule,
    knots: Vec<KnotRecord<'a>>,
}

pub fn trajectory_json(
    header: &Header,
    model: &RobotModel,
    model_hash: &str,
    schedule: &ContactSchedule,
    traj: &KinodynamicTrajectory,
) -> String {
    let knots = traj
        .knots
        .iter()
        .enumerate()
        .map(|(k, kn)| KnotRecord {
            t: k as f64 * traj.dt,
            q: kn.q.as_slice(),
            v: kn.v.as_slice(),
            r: arr(&kn.r),
            rd: arr(&kn.rd),
            rdd: arr(&kn.rdd),
            h: arr(&kn.h),
            hd: arr(&kn.hd),
            c: kn.c.iter().map(arr).collect(),
            f: kn.f.iter().map(arr).collect(),
        })
        .collect();
    let doc = TrajectoryDoc {
        header,
        model: &model.name,
        model_hash,
        dt: traj.dt,
        n_knots: traj.n_knots(),
        schedule,
        knots,
    };
    serde_json::to_string_pretty(&doc).expect("plain data") + "\n"
}

/// Any serializable payload with the header merged in at the top level.
pub fn stamped_json<T: Serialize>(header: &Header, body: &T) -> String {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        #[serde(flatten)]
        header: &'a Header,
        #[serde(flatten)]
        body: &'a T,
    }
    serde_json::to_string_pretty(&Doc { header, body }).expect("plain data") + "\n"
}

/// Links from the root down to the kicking foot.
pub fn kicking_chain(model: &RobotModel, foot_link: usize) -> Vec<usize> {
    model.chain(foot_link).to_vec()
}

/// Forward (target-direction) velocity of each link CoM of the kicking
/// chain at every knot, one column per link.
pub fn forward_velocity_csv(
    header: &Header,
    model: &RobotModel,
    traj: &KinodynamicTrajectory,
    foot_link: usize,
    forward: &Vector3<f64>,
) -> String {
    let links = kicking_chain(model, foot_link);
    let mut out = header.csv_comment();
    out.push('t');
    for &l in &links {
        out.push(',');
        out.push_str(&model.links[l].name);
    }
    out.push('\n');
    for (k, kn) in traj.knots.iter().enumerate() {
        write!(out, "{}", k as f64 * traj.dt).unwrap();
        for &l in &links {
            let v = foot_velocity(model, kn.q.as_slice(), kn.v.as_slice(), l).dot(forward);
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}
