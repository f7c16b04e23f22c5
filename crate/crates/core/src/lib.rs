//! Emotion-controllable talking-face video editing on a synthetic corpus.

pub mod autodiff;
pub mod config;
pub mod container;
pub mod error;
pub mod eval;
pub mod facegen;
pub mod losses;
pub mod masking;
pub mod media;
pub mod model;
pub mod nn;
pub mod scorers;
pub mod train;

pub use error::{Error, Result};
