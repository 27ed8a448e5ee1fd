//! Constructive Calderon-Zygmund machinery for measures on grids.

// `!(x > 0.0)` is how NaN gets rejected here.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod acceptance;
pub mod approx;
pub mod calibration;
pub mod closed;
pub mod coefficient;
pub mod cz;
pub mod edt;
pub mod error;
mod fft;
pub mod fixtures;
pub mod geometry;
pub mod grid;
pub mod kernels;
pub mod lipschitz;
pub mod maximal;
pub mod measure;
pub mod norms;
pub mod potential;
pub mod whitney;

pub use error::{Error, Result};
pub use geometry::{dist, dist_max, dist_point_to_cube, Aabb, Cube, DyadicCube, Point, Region};
pub use grid::{Grid, GridField};
pub use measure::{Atom, SignedMeasure};
