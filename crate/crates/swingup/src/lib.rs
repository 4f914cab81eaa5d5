//! Swing-up and balance control workbench for torque-limited double pendulums
//! (pendubot and acrobot), combining a soft actor-critic swing-up policy with
//! an LQR balance controller selected by a region-of-attraction test.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod env;
pub mod eval;
pub mod hybrid;
pub mod lqr;
pub mod nn;
pub mod plot;
pub mod roa;
pub mod sac;
pub mod traj;
