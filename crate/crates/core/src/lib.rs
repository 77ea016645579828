//! Human-to-humanoid kick retargeting via kinodynamic trajectory
//! optimization, plus the imitation-learning reward and early-termination
//! functions used to track the resulting reference.

pub mod error;
pub mod imitation;
pub mod kinodyn;
pub mod mocap;
pub mod model;
pub mod solver;
pub mod transcription;

pub use error::{Error, Result};
pub use model::{load_model, model_to_json, RobotModel};
