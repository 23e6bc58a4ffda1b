//! 2D ultrasonic travel-time tomography.
//!
//! The crate covers the full chain from synthetic data generation to image
//! reconstruction:
//!
//! - [`field`] — velocity grids, transducer arrays, region-of-interest
//!   boundaries and the tissue property table.
//! - [`phantom`] — the two built-in test objects (`smiley80`, `bone200`)
//!   and virtual-array placement on an ROI boundary.
//! - [`wave`] — a scalar-acoustic FDTD engine producing full-matrix-capture
//!   (FMC) datasets with an absorbing sponge layer.
//! - [`eikonal`] — fast-marching first-arrival solver (the ray-based forward
//!   model) plus a Dijkstra grid oracle for verification.
//! - [`picking`] — first-arrival extraction from FMC traces.
//! - [`virtualise`] — frequency-domain migration of a physical FMC dataset
//!   onto a virtual array on the ROI boundary (delay-and-sum with geometric
//!   spreading, trapezium angular quadrature and cardioid directivity).
//! - [`init`] — bi-velocity model initialisation by golden-section search.
//! - [`inversion`] — bent-ray inversion: eikonal forward solves, ray
//!   back-tracing, and regularized conjugate-gradient slowness updates.
//!
//! All positions are metres, times seconds, speeds m/s. Grids are row-major
//! with the y index outermost.

pub mod arrival;
pub mod eikonal;
pub mod field;
pub mod geom;
pub mod init;
pub mod inversion;
pub mod phantom;
pub mod picking;
pub mod spline;
pub mod virtualise;
pub mod wave;

pub use arrival::{ArrivalMatrix, Provenance};
pub use field::{RoiBoundary, TissueTable, TransducerArray, VelocityField};
pub use geom::Vec2;
pub use wave::{FmcData, Toneburst};
