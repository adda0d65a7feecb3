//! Multiview geometric consistency constraints for multi-camera pose estimation.

pub mod numerics;
pub mod camera;
pub mod ideal;
pub mod scenegen;
pub mod solver;
pub mod ter;
pub mod triangulate;
