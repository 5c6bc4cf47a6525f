//! Template-mesh deformation pipeline.
//!
//! A point-cloud autoencoder produces a permutation-invariant encoding of a
//! deformed point cloud; a conditional Real-NVP (stack of affine coupling
//! blocks) moves the vertices of a template mesh so that it fits the cloud.
//! Faces are never touched, so every predicted mesh keeps the template's
//! topology.
//!
//! Crate layout:
//!
//! - [`geometry`]: meshes, point clouds, OBJ/OFF/XYZ I/O, surface sampling,
//!   topology checks and the brute-force chamfer oracle.
//! - [`deform`]: random thin-plate warp fields, trajectories and datasets A–D.
//! - [`tensor`]: a small reverse-mode autodiff engine, chamfer loss, Adam.
//! - [`autoencoder`] and [`flow`]: the two networks.
//! - [`train`], [`eval`]: training stages, checkpoints, metrics and benchmarks.
//! - [`config`]: flat key-value run configuration used by the CLI.

pub mod autoencoder;
pub mod config;
pub mod deform;
pub mod error;
pub mod eval;
pub mod flow;
pub mod geometry;
pub mod rng;
pub mod selftest;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
