//! Depth-aware accident anticipation from dashcam video features.
//!
//! The crate covers synthetic scenario generation and dataset I/O
//! ([`scenekit`]), 3D collision graphs ([`geometry`]), the differentiable
//! risk model ([`netcore`]), its training losses ([`objective`]), detection
//! and lead-time metrics ([`evalkit`]) and the training and ablation driver
//! ([`trainer`]).

pub mod autodiff;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod exec;
pub mod geometry;
pub mod netcore;
pub mod objective;
pub mod scenekit;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Execution;
