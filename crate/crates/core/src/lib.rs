//! Capturability analysis and push-recovery planning for quadrupeds on a
//! switched linear inverted pendulum model.

pub mod archive;
pub mod capturability;
pub mod lip;
pub mod ocp;
pub mod planner;
pub mod polytope;
pub mod sim;
pub mod solver;
