//! Deformable 3D Gaussian scenes with key-point motion distillation and
//! graph-network forecasting of future frames.

pub mod deform;
pub mod distill;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod frame;
pub mod imgbuf;
pub mod io;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod real;
pub mod splat;

pub use error::{Error, Result};
pub use imgbuf::Image;
pub use real::Real;
