//! `kickopt`: retarget a mocap kick onto a robot, verify it, and inspect
//! the schedules and rewards used to imitate it.
//!
//! Exit codes: 0 success, 1 error, 2 the run finished but its result is
//! flagged (solver did not converge or torque limits are exceeded).

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kickopt_core::imitation::{reward_imitation, ret_threshold, State};
use kickopt_core::kinodyn::GRAVITY;
use kickopt_core::mocap::synth::{synth_clip, Motion, SynthOptions};
use kickopt_core::mocap::{detect_contacts, load_clip, resample, rescale_to_robot, write_clip_csv, MocapClip};
use kickopt_core::model::RobotModel;
use kickopt_core::solver::{retarget_until_feasible, solve, two_stage_retarget, verify_torques, SolveReport};
use kickopt_core::transcription::{build_problem, centroidal_seed, ProblemSpec, Stage as ProblemStage};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use config::{file_hash, RunConfig};
use output::Header;

#[derive(Parser)]
#[command(name = "kickopt", version, about = "Kinodynamic kick retargeting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a clip into a feasible trajectory and verify its torques.
    Retarget(RetargetArgs),
    /// Print schedules or rewards without optimizing.
    #[command(subcommand)]
    Inspect(Inspect),
    /// Write a synthetic clip generated from the model itself.
    SynthClip(SynthArgs),
}

#[derive(Args)]
struct Common {
    /// Config document (JSON); every key can also be set through
    /// `KICKOPT_<SECTION>__<KEY>` environment variables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ClipArgs {
    #[arg(long)]
    model: PathBuf,
    /// Clip CSV; the skeleton sidecar defaults to the same path with a
    /// `.json` extension.
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    /// Kinematics-only stage.
    Kin,
    /// Both stages, verified once.
    Full,
    /// Both stages, then tighten and re-solve until torque-feasible.
    All,
}

#[derive(Args)]
struct RetargetArgs {
    #[command(flatten)]
    clip: ClipArgs,
    #[command(flatten)]
    common: Common,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    stage: StageArg,
    #[arg(long)]
    max_rounds: Option<usize>,
}

#[derive(Subcommand)]
enum Inspect {
    /// Contact schedule and kick timings of a clip, as JSON.
    Contacts {
        #[command(flatten)]
        clip: ClipArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Early-termination threshold over training steps, as CSV.
    RetSchedule {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 11)]
        points: usize,
        /// Last tabulated step; defaults to one stair past the end.
        #[arg(long)]
        until: Option<f64>,
    },
    /// Reward components of a `{state, reference}` pair, as JSON.
    Rewards {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pair: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MotionArg {
    Kick,
    Standing,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// File stem of the written `.csv` and `.json`.
    #[arg(long, default_value = "clip")]
    name: String,
    #[arg(long, value_enum, default_value = "kick")]
    motion: MotionArg,
    #[arg(long, default_value_t = 237)]
    frames: usize,
    #[arg(long, default_value_t = 120.0)]
    rate: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Retarget(args) => retarget(args),
        Command::Inspect(cmd) => {
            inspect(cmd)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::SynthClip(args) => {
            synth(args)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = RunConfig::load(common.config.as_deref(), std::env::vars())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.solver.seed = config.seed;
    Ok(config)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

fn load_model_file(path: &Path) -> Result<RobotModel> {
    require(path, "model file")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    kickopt_core::load_model(&text).with_context(|| format!("invalid model {}", path.display()))
}

impl ClipArgs {
    fn sidecar_path(&self) -> PathBuf {
        self.sidecar.clone().unwrap_or_else(|| self.clip.with_extension("json"))
    }

    fn check(&self) -> Result<()> {
        require(&self.model, "model file")?;
        require(&self.clip, "clip file")?;
        require(&self.sidecar_path(), "clip sidecar")
    }

    fn load(&self) -> Result<(RobotModel, MocapClip)> {
        self.check()?;
        let model = load_model_file(&self.model)?;
        let clip = load_clip(&self.clip, &self.sidecar_path())
            .with_context(|| format!("invalid clip {}", self.clip.display()))?;
        Ok((model, clip))
    }
}

#[derive(Serialize)]
struct RunReports<'a> {
    stage: &'static str,
    converged: bool,
    feasible: Option<bool>,
    rounds: usize,
    torque_bounds: Option<&'a [(f64, f64)]>,
    kinematic: &'a SolveReport,
    full: Option<&'a SolveReport>,
}

fn retarget(args: RetargetArgs) -> Result<ExitCode> {
    let mut config = load_config(&args.common)?;
    if let Some(n) = args.max_rounds {
        config.solver.max_rounds = n;
    }
    config.validate()?;
    let (model, clip) = args.clip.load()?;
    let model_hash = file_hash(&args.clip.model)?;
    let header = Header::new(config.hash());
    let model = Arc::new(model);
    let spec = Arc::new(ProblemSpec::from_clip(model.clone(), &clip, &config.problem)?);
    std::fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;

    let options = &config.solver;
    let (traj, kinematic, full, torques, rounds, bounds) = match args.stage {
        StageArg::Kin => {
            let problem = build_problem(spec.clone(), ProblemStage::KinematicsOnly, None)?;
            let (stage1, report) = solve(&problem, &problem.initial, options)?;
            (centroidal_seed(&spec, &stage1), report, None, None, 1, None)
        }
        StageArg::Full => {
            let (traj, r1, r2) = two_stage_retarget(spec.clone(), options)?;
            let torques = verify_torques(&model, &traj, &GRAVITY)?;
            (traj, r1, Some(r2), Some(torques), 1, Some(spec.torque_bounds.clone()))
        }
        StageArg::All => {
            let out = retarget_until_feasible(spec.clone(), options)?;
            (out.trajectory, out.kinematic_report, Some(out.report), Some(out.torques), out.rounds, Some(out.torque_bounds))
        }
    };

    let converged = full.as_ref().unwrap_or(&kinematic).converged();
    let feasible = torques.as_ref().map(|t| t.feasible());
    let reports = RunReports {
        stage: match args.stage {
            StageArg::Kin => "kin",
            StageArg::Full => "full",
            StageArg::All => "all",
        },
        converged,
        feasible,
        rounds,
        torque_bounds: bounds.as_deref(),
        kinematic: &kinematic,
        full: full.as_ref(),
    };
    let forward = spec.target_direction;
    output::write(&args.out, "config.json", &output::stamped_json(&header, &config))?;
    output::write(
        &args.out,
        "trajectory.json",
        &output::trajectory_json(&header, &model, &model_hash, &spec.schedule, &traj),
    )?;
    output::write(&args.out, "reports.json", &output::stamped_json(&header, &reports))?;
    if let Some(t) = &torques {
        output::write(&args.out, "torques.json", &output::stamped_json(&header, t))?;
    }
    output::write(
        &args.out,
        "forward_velocity.csv",
        &output::forward_velocity_csv(&header, &model, &traj, spec.kicking_foot_link, &forward),
    )?;

    let summary = full.as_ref().unwrap_or(&kinematic);
    eprintln!(
        "{:?} after {} outer iterations, max equality {:.3e}, max inequality {:.3e}, {} round(s), torque-feasible: {}",
        summary.status,
        summary.iterations,
        summary.max_equality,
        summary.max_inequality,
        rounds,
        feasible.map_or("n/a".to_string(), |f| f.to_string()),
    );
    Ok(if converged && feasible != Some(false) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlainState {
    q: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardPair {
    state: PlainState,
    reference: PlainState,
}

impl From<PlainState> for State {
    fn from(s: PlainState) -> Self {
        State::new(DVector::from_vec(s.q), DVector::from_vec(s.v))
    }
}

fn inspect(cmd: Inspect) -> Result<()> {
    match cmd {
        Inspect::Contacts { clip, common } => {
            let config = load_config(&common)?;
            config.validate()?;
            let (model, clip) = clip.load()?;
            let scaled = rescale_to_robot(&clip, &model)?;
            let knots = resample(&scaled, config.problem.knot_rate)?;
            let schedule = detect_contacts(&knots, &model, &config.problem.contacts)?;
            println!("{}", schedule.to_json());
        }
        Inspect::RetSchedule { common, points, until } => {
            let config = load_config(&common)?;
            config.validate()?;
            if points < 2 {
                bail!("need at least two points");
            }
            let s = &config.ret;
            let end = until.unwrap_or(s.t_end + s.stair_length());
            println!("step,threshold");
            for i in 0..points {
                let t = end * i as f64 / (points - 1) as f64;
                println!("{t},{}", ret_threshold(t, s));
            }
        }
        Inspect::Rewards { model, pair, common } => {
            let config = load_config(&common)?;
            config.validate()?;
            let model = load_model_file(&model)?;
            require(&pair, "pair file")?;
            let text = std::fs::read_to_string(&pair).with_context(|| format!("cannot read {}", pair.display()))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            let doc: RewardPair = serde_path_to_error::deserialize(de).with_context(|| format!("invalid pair {}", pair.display()))?;
            let r = reward_imitation(&model, &doc.state.into(), &doc.reference.into(), &config.rewards)?;
            #[derive(Serialize)]
            struct Out {
                keypoint: f64,
                joint: f64,
                com: f64,
                total: f64,
            }
            let out = Out {
                keypoint: r.keypoint,
                joint: r.joint,
                com: r.com,
                total: r.total(),
            };
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let model = load_model_file(&args.model)?;
    let motion = match args.motion {
        MotionArg::Kick => Motion::Kick,
        MotionArg::Standing => Motion::Standing,
    };
    let opts = SynthOptions {
        rate: args.rate,
        n_frames: args.frames,
        noise: args.noise,
        seed: args.seed,
        ..Default::default()
    };
    let clip = synth_clip(&model, motion, &opts)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let csv_path = args.out.join(format!("{}.csv", args.name));
    let file = std::fs::File::create(&csv_path).with_context(|| format!("cannot write {}", csv_path.display()))?;
    write_clip_csv(&clip, std::io::BufWriter::new(file))?;
    let sidecar = serde_json::to_string_pretty(&clip.skeleton_doc())? + "\n";
    output::write(&args.out, &format!("{}.json", args.name), &sidecar)?;
    Ok(())
}
