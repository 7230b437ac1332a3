//! Desk-scale simulator of an autonomous robotic ultrasound scan for thyroid
//! volumetry.
//!
//! The pipeline mirrors the acquisition workflow of an image-guided robotic
//! scanner:
//!
//! 1. **Phantom**: analytic neck/thyroid geometry, voxelized ground truth and
//!    the skin surface the probe rides on.
//! 2. **Imaging**: synthetic B-mode frames and oracle label maps rendered from
//!    a probe pose, including full-depth contact-loss shadows.
//! 3. **Controller**: the per-lobe scan state machine with shadow prevention
//!    (roll about the scan axis) and lobe centering (lateral translation).
//! 4. **Compounding**: timestamp-aligned pose interpolation (lerp + slerp),
//!    forward splatting into voxel grids, lobe union and volume.
//! 5. **Analysis**: ellipsoid-formula baseline, Marinelli dosimetry and the
//!    ablation / comparison harnesses.
//!
//! Coordinates are millimetres: `x` runs superior-inferior (the scan axis),
//! `y` is lateral and `z` is anterior (skin crest at `z = 0`, tissue below).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod compounding;
pub mod controller;
pub mod error;
pub mod export;
pub mod grid;
pub mod image;
pub mod imaging;
pub mod phantom;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Quat = nalgebra::UnitQuaternion<f64>;

/// Cubic millimetres per millilitre.
pub const MM3_PER_ML: f64 = 1000.0;
