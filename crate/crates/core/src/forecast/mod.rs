//! Stage 3: a graph network over key points learns their trajectories and
//! rolls them forward; the distilled scene turns forecast key points into
//! future frames.

mod net;
mod train;

pub use net::{build_graph, ForecastArch, ForecastNet, ForecastTape};
pub use train::{
    fit_trajectory, trajectory_loss, write_point_tracks, ForecastModel, Stage3Config,
    Stage3Trainer, Trajectory,
};
