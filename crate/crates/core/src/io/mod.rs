//! Files: dataset manifests, PNG frames, synthetic scenes with ground
//! truth, checkpoints and trajectory exports.

pub mod checkpoint;
pub mod manifest;
pub mod png;
pub mod synthetic;
