//! Intrinsic image decomposition into albedo, shape-dependent shading and
//! shape-independent (cast shadow) shading, with a procedural scene
//! synthesizer for training and verification at desk scale.

pub mod error;
pub mod formation;
pub mod cli;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod plane;
pub mod preprocess;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use plane::{Mask, Plane};
