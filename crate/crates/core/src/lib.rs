//! Steerable-mirror hyperspectral capture: cube handling, mirror geometry,
//! scan planning, a controller emulator, a line-camera simulator, attention
//! based patch selection, patch encoding and segmentation scoring.

pub mod attention;
pub mod camera;
pub mod controller;
pub mod cube;
pub mod cube_io;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod pipeline;
pub mod planner;
pub mod pnm;
pub mod synth;

pub use cube::{PatchRef, Reduction, Resolution, SpectralCube};
pub use error::{Error, Result};
pub use geometry::{MirrorSpec, UnitVector3, XYPosition};
