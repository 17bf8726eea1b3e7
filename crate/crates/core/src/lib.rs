//! Numeric-symbolic laboratory for coordinate systems adapted to weighted
//! (anisotropic) scalings: weighted frames of vector fields, flow-based
//! charts, box quasimetrics and their scaling limits, homogeneous
//! approximations of vector fields, and diagnostics that decide which
//! scaling conditions a coordinate change satisfies.

pub mod charts;
pub mod convergence;
pub mod error;
pub mod experiments;
pub mod expr;
pub mod frames;
pub mod gallery;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod nilpotent;
pub mod quasimetric;
pub mod sampling;
pub mod transition;

pub use error::{Error, Result};
