pub mod acoustics;
pub mod coordination;
pub mod geometry;
pub mod harness;
pub mod messaging;
pub mod nl_parse;
pub mod robot_sim;
pub mod session;
pub mod task_model;
