//! Scene flow domain adaptation on synthetic LiDAR.
//!
//! The crate covers the whole pipeline: a procedural LiDAR scene generator
//! with exact rigid-body flow annotation, rigid pseudo-label refinement of a
//! teacher's predictions, a small differentiable flow estimator and the
//! mean-teacher adaptation loop that ties them together.

pub mod ablation;
pub mod clustering;
pub mod config;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod pseudo_label;
pub mod seed;
pub mod synth;
pub mod uda;

pub use error::{Error, Result};
