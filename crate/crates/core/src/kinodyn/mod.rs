//! Rigid-body kernels: forward kinematics, Jacobians, centre of mass, the
//! centroidal momentum matrix, inverse dynamics, capsule distance and
//! configuration integration on the floating-base manifold.
//!
//! Angular momentum is expressed in the world frame about the CoM. Base
//! angular velocity is a body-frame quantity; base linear velocity is a
//! world-frame quantity.

mod capsule;
mod config;
mod dynamics;
mod kinematics;

pub use capsule::{capsule_distance, closest_parameters, segment_distance, WorldCapsule};
pub use config::{configuration_difference, integrate_configuration, Configuration, Velocity};
pub use dynamics::{inverse_dynamics, InverseDynamics, GRAVITY};
pub use kinematics::{
    center_of_mass, centroidal_momentum_matrix, com_jacobian, forward_kinematics, point_jacobian,
    CentroidalMatrix, Kinematics,
};
