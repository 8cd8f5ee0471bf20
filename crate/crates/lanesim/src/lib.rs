//! Microscopic highway traffic simulation with a multi-agent deep
//! Q-learning trainer for discretionary lane changes.
//!
//! The crate is organized in layers: [`road`] holds geometry and kinematic
//! primitives, [`hv`] the car-following and lane-change models for
//! human-driven vehicles, [`sim`] the world state and step loop, [`env`] the
//! agent-facing observations and rewards, [`nn`] a self-contained dense
//! Q-network, [`dqn`] the shared-parameter multi-agent trainer, and
//! [`config`]/[`eval`]/[`cli`] the experiment harness around them.
//!
//! See the `examples/` directory for one runnable entry point per
//! capability, or the `lanesim` binary for the command-line harness.

pub mod cli;
pub mod config;
pub mod dqn;
pub mod env;
pub mod eval;
pub mod hv;
pub mod nn;
pub mod road;
pub mod sim;

pub use config::ExperimentConfig;
pub use env::{AgentAction, EnvConfig, Observation, RewardBreakdown};
pub use nn::DenseNet;
pub use road::{RoadSegment, VehicleState};
pub use sim::{SimConfig, SimState};
