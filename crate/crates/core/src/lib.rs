pub mod envs;
pub mod error;
pub mod kv;
pub mod nn;
pub mod policy;

pub use error::{Error, Result};
pub mod critics;
pub mod oracle;
pub mod learner;
pub mod seed;
pub mod harness;
