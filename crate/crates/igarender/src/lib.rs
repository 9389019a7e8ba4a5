//! Pixel-accurate ray-casting volume renderer for trivariate B-spline models.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod bvh;
pub mod camera;
pub mod inversion;
pub mod spline;
pub mod surfnet;
pub mod convergence;
pub mod testmaps;
pub mod scene;
pub mod shading;
pub mod image;
pub mod color;
pub mod pipeline;
pub mod models;
pub mod voxel;
pub mod volfile;
pub mod scenefile;
