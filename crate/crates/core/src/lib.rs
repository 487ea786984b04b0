pub mod clustering;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod ode;
pub mod pod_pipeline;
pub mod two_stage;

pub use error::{Result, RomError};
