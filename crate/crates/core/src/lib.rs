//! Session-graph recommendation with a language-model bridge.

pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod llm;
pub mod model;
pub mod nn;
pub mod params;
pub mod pca;
pub mod pretrain;
pub mod prompt;
pub mod sbr;
pub mod synthetic;
pub mod tuning;

pub use error::{Error, Result};
