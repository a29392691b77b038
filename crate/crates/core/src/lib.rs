//! Dynamic stress prediction for pentagonal gusset plates.
//!
//! The crate covers the whole pipeline:
//!
//! * [`geometry`] and [`mesh`]: perturbed pentagon family, constrained Delaunay
//!   meshing and boundary edge tagging.
//! * [`fem`]: linear constant-strain-triangle plane-stress solver with
//!   average-acceleration Newmark time stepping.
//! * [`dataset`]: load histories, input matrices, sample simulation,
//!   normalization, split presets and the binary container.
//! * [`grid`]: Gaussian kernel reconstruction of nodal fields on a regular
//!   grid, masked finite differences and the equilibrium residual.
//! * [`model`]: the spatiotemporal LSTM network and its two baselines.
//! * [`train`]: losses, metrics, the AdamW training loop and evaluation.
//!
//! Data-parallel loops go through [`exec::Exec`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.

pub mod bitmap;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod fem;
pub mod geometry;
pub mod grid;
pub mod mesh;
pub mod model;
pub mod train;

pub use error::{Error, Result};
