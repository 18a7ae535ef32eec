//! Discrete mean-field games on the periodic grid: a staggered finite-volume
//! forward solver and primal-dual inverse solvers that reconstruct either the
//! ground-metric kernel `g0` or the interaction-energy convolution kernel
//! `K̃` from observed density/velocity trajectories, plus an outer Bregman
//! iteration that relaxes the choice of the regularization weight.

pub mod bregman;
pub mod config;
pub mod error;
pub mod fields;
pub mod forward;
pub mod grid;
pub mod inverse;
pub mod io;
pub mod noise;
pub mod pipeline;

pub use error::{Error, Result};
