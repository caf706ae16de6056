//! Stage 2: a few key points in the hyper-canonical space drive every
//! Gaussian through time-independent blend weights.
//!
//! Key points start at k-means centres of the Gaussians' (position, motion
//! feature) coordinates, take their per-time translation and rotation from
//! the stage-1 deformation network, and are added where the screen-space
//! gradient stays large.

mod blend;
pub mod cluster;
mod keypoints;
mod train;
mod weights;

pub use blend::{blend_deform, blend_deform_backward, BlendTape, BlendWeights};
pub use keypoints::{
    adaptive_increase, assign_neighbors, init_keypoints, keypoint_motion, keypoint_motion_backward,
    select_new_keypoints, HyperMetric, KeyPointMotion, KeyPointSet, KeyPointTape,
};
pub use train::{DistilledScene, NeighborSpace, Stage2Config, Stage2Rates, Stage2Trainer};
pub use weights::{WeightField, WeightFieldConfig, WeightTape};
