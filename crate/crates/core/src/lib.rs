//! Coded-reflector-antenna imaging: reflector geometry, physical-optics forward
//! model, sparse reconstruction and image analysis.

pub mod error;
pub mod forward;
pub mod geometry;
pub mod io;
pub mod postproc;
pub mod scene;
pub mod solver;
pub mod units;

pub use error::{Error, Result};
