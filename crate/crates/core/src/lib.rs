//! Score distillation and diffusion sampling against analytic Gaussian-mixture
//! scores, with a voxel renderer and view-dependent noise for the 3D case.

pub mod camera;
pub mod config;
pub mod distill;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod io;
pub mod noise_field;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod scene;
pub mod schedule;
pub mod vecops;

pub use error::{Error, Result};
