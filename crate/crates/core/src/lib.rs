pub mod autodiff;
pub mod commands;
pub mod config;
mod error;
pub mod evaluation;
pub mod experiments;
pub mod model;
pub mod ranker;
pub mod retrieval;
pub mod sampling;
pub mod selectors;
pub mod synthetic;
pub mod text;
pub mod training;

pub use error::{Error, Result};
