//! Hierarchical quadruped locomotion control.
//!
//! A model-based low-level controller (pose PD, force QP, swing-foot
//! placement, `τ = Jᵀf`) executes one of nine contact primitives; a
//! high-level policy picks the primitive every 0.4 s. The crate also carries
//! the split-belt treadmill simulator used to train and compare high-level
//! controllers, and a small double-Q learner.

pub mod controller;
pub mod kinematics;
pub mod model;
pub mod policy;
pub mod primitives;
pub mod qp;
pub mod rl;
pub mod sim;

pub use controller::{BodyCommand, ControlOutput, GainSet, LowLevelController, TickContext};
pub use kinematics::{JointState, JointTorques};
pub use model::{BodyPose, FootForces, PhysicalParams, RobotState};
pub use primitives::{ContactPattern, Primitive, SelectionMode};
