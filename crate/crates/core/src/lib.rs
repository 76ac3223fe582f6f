pub mod env;
pub mod equilibrium;
pub mod error;
pub mod estimation;
pub mod exec;
pub mod fixtures;
pub mod game;
pub mod lp;
pub mod optim;
pub mod orchestrator;
pub mod policy;
pub mod training;

pub use error::{Error, Result};
