//! Simulated robots: kinematics, sensing, navigation and formation.

pub mod agent;
pub mod allocation;
pub mod arena;
pub mod control;
pub mod dynamics;
pub mod formation;
pub mod mocap;
pub mod nominal;

pub use agent::{AgentConfig, ObjectState, RobotAgent, RobotSnapshot, RobotTuning, WorldCtx};
pub use allocation::{allocate_safe_positions, AllocationConfig};
pub use arena::Arena;
pub use control::{adaptive_velocity, ControllerConfig, NavController};
pub use dynamics::{step_dynamics, Command, RobotState, VelocityLimits};
pub use formation::{check_symmetry, formation_back_to_back, SymmetryTolerance};
pub use mocap::{mocap_sample, MocapConfig, PoseFilter};
pub use nominal::NominalModel;
