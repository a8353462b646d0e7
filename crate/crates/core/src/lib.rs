pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod filters;
pub mod guarantees;
pub mod output;
pub mod policy;
pub mod risk;
pub mod seed;
pub mod sim;
pub mod value;

pub use error::{Error, Result};
