pub mod backbones;
pub mod cli;
pub mod datahub;
pub mod disentangler;
pub mod embedkit;
pub mod evalkit;
pub mod error;
pub mod fusionhead;
pub mod numcore;
pub mod objectives;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
