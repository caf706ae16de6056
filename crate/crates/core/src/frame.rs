//! Posed, timestamped training images and the shared render-and-compare pass.

use crate::error::{Error, Result};
use crate::imgbuf::Image;
use crate::metrics::{image_loss, mse};
use crate::real::Real;
use crate::splat::{render, render_backward, Camera, Render, RenderGrads, RenderSettings, Splat3D};

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSample<F = f32> {
    pub image: Image<F>,
    pub camera: Camera,
    /// Normalised timestamp in [0, 1].
    pub t: f64,
}

impl<F: Real> FrameSample<F> {
    pub fn new(image: Image<F>, camera: Camera, t: f64) -> Result<Self> {
        if image.width != camera.width || image.height != camera.height {
            return Err(Error::Shape(format!(
                "image is {}×{} but the camera renders {}×{}",
                image.width, image.height, camera.width, camera.height
            )));
        }
        Ok(Self { image, camera, t })
    }
}

/// One forward/backward evaluation of the image loss on a frame.
#[derive(Clone, Debug)]
pub struct LossPass<F = f32> {
    pub loss: f64,
    pub mse: f64,
    pub render: Render<F>,
    pub grads: RenderGrads<F>,
}

/// Renders `splats` from the frame camera, scores them against the frame
/// image, and back-propagates the loss to the splats.
pub fn render_loss<F: Real>(
    splats: &[Splat3D<F>],
    frame: &FrameSample<F>,
    settings: &RenderSettings,
) -> Result<LossPass<F>> {
    let out = render(splats, &frame.camera, settings);
    let (loss, d_image) = image_loss(&out.image, &frame.image)?;
    let err = mse(&out.image, &frame.image)?;
    let grads = render_backward(splats, &frame.camera, &out, &d_image)?;
    Ok(LossPass {
        loss,
        mse: err,
        render: out,
        grads,
    })
}

/// Distinct timestamps of `frames`, ascending.
pub fn distinct_times<F>(frames: &[FrameSample<F>]) -> Vec<f64> {
    let mut ts: Vec<f64> = frames.iter().map(|f| f.t).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}
