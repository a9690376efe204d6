//! Simulator and analysis toolkit for a motion-synchronizing, tendon-driven
//! continuum robot.

pub mod error;
pub mod kinematics;
pub mod seed;
pub mod sensing;

pub use error::{Error, Result};
pub mod actuation;
pub mod patterns;
pub mod records;
pub mod netsim;
pub mod trustgame;
pub mod analysis;
pub mod robot;
pub mod harness;
pub mod gateway;
