//! Seedable MEC computation-offloading simulator with static and
//! reinforcement-learning offloading policies.

pub mod agents;
pub mod baselines;
pub mod channel;
pub mod config;
pub mod cost;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod testbeds;
pub mod verify;

pub use error::{Error, Result};
pub use agents::{DdqlAgent, DqlAgent, NetConfig};
pub use baselines::PolicyKind;
pub use channel::Position3D;
pub use config::{load_config, ExperimentConfig};
pub use env::{ActionVector, MecEnv, Transition};
pub use harness::{EpisodeMetrics, TrainOutput, TrainedPolicy};
