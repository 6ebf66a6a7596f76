//! Simulation, learning and prediction of received power over space when the
//! measurement locations are only known up to a Gaussian distribution.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod field;
pub mod geometry;
pub mod gp;
pub mod kernels;
pub mod linalg;
pub mod rng;
pub mod simplex;

pub use error::{Error, Result};
pub use field::{ChannelField, FieldConfig, FieldSampler, GridGeometry};
pub use geometry::{point1, Dim, LocationDistribution, Point};
pub use kernels::{Hyperparameters, KernelExponent, PolyLogApprox};
