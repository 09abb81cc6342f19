//! Quality-diversity imitation learning on small simulated environments.

pub mod archive;
pub mod config;
pub mod demos;
pub mod driver;
pub mod envs;
pub mod error;
pub mod mlp;
pub mod output;
pub mod ppo;
pub mod reward;
pub mod xnes;

pub use error::{Error, Result};
