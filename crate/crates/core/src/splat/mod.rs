//! Differentiable 3D Gaussian rasterisation.
//!
//! The pipeline is `compose_covariance` → [`project`] → depth sort → tile
//! binning → front-to-back α-blending. [`render_backward`] is the exact
//! adjoint of [`render`] and also accumulates the screen-space gradient norm
//! used to decide where key points are missing.

mod covariance;
mod project;
mod raster;
mod set;

pub use covariance::{compose_covariance, compose_covariance_backward};
pub use project::{project, project_backward, Splat2DGrad};
pub use raster::{rasterize, rasterize_backward, Rasterized};
pub use set::GaussianSet;

use crate::error::{Error, Result};
use crate::imgbuf::Image;
use crate::math::{quat_normalize, quat_normalize_backward, Quat, Vec3};
use crate::real::{sigmoid, Real};

/// Added to the projected covariance diagonal (px²) before inversion.
pub const COV2D_DILATION: f64 = 0.3;
/// Blending stops once transmittance falls below this value.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
pub const ALPHA_MAX: f64 = 0.999;

/// One Gaussian primitive with its learnable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian<F = f32> {
    pub mu: Vec3<F>,
    /// Unit quaternion, w first.
    pub rot: Quat<F>,
    pub log_scale: Vec3<F>,
    pub color: Vec3<F>,
    pub opacity_logit: F,
    pub motion_feat: Vec<F>,
}

impl<F: Real> Gaussian<F> {
    pub fn opacity(&self) -> F {
        sigmoid(self.opacity_logit)
    }

    /// Renderer input, with the opacity scaled by `multiplier` (the lifecycle).
    pub fn to_splat(&self, multiplier: F) -> Splat3D<F> {
        Splat3D {
            mu: self.mu,
            rot: quat_normalize(&self.rot),
            log_scale: self.log_scale,
            color: self.color,
            opacity: self.opacity() * multiplier,
        }
    }
}

/// Activated renderer input: everything [`render`] needs about one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat3D<F = f32> {
    pub mu: Vec3<F>,
    /// Unit quaternion used as-is by the covariance.
    pub rot: Quat<F>,
    pub log_scale: Vec3<F>,
    pub color: Vec3<F>,
    /// Peak α before the Gaussian falloff.
    pub opacity: F,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Splat3DGrad<F = f32> {
    pub mu: Vec3<F>,
    pub rot: Quat<F>,
    pub log_scale: Vec3<F>,
    pub color: Vec3<F>,
    pub opacity: F,
}

/// A projected Gaussian in pixel space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D<F = f32> {
    pub mu2d: [F; 2],
    /// `J W Σ Wᵀ Jᵀ` as `(xx, xy, yy)`, before dilation.
    pub cov2d: [F; 3],
    /// Inverse of the dilated covariance, `(a, b, c)`.
    pub conic: [F; 3],
    pub depth: F,
    pub color: Vec3<F>,
    pub alpha_base: F,
    /// Screen footprint half-width in pixels.
    pub radius: F,
}

impl<F: Real> Splat2D<F> {
    pub fn dilated_cov(&self) -> [F; 3] {
        let d = F::of(COV2D_DILATION);
        [self.cov2d[0] + d, self.cov2d[1], self.cov2d[2] + d]
    }
}

/// Pinhole camera; camera space is x right, y down, z forward.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub world_to_cam: [[f64; 4]; 4],
    pub focal: [f64; 2],
    pub principal: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn new(
        world_to_cam: [[f64; 4]; 4],
        focal: [f64; 2],
        principal: [f64; 2],
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Self {
            world_to_cam,
            focal,
            principal,
            width,
            height,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal[0] > 0.0 && self.focal[1] > 0.0) {
            return Err(Error::Camera(format!(
                "focal lengths must be positive, got {:?}",
                self.focal
            )));
        }
        if !(self.near < self.far) || self.near < 0.0 {
            return Err(Error::Camera(format!(
                "need 0 <= near < far, got {} / {}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Camera("resolution must be non-zero".into()));
        }
        let r = self.rotation();
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let rr: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((rr - target).abs());
            }
        }
        if worst >= 1e-6 {
            return Err(Error::Camera(format!(
                "world_to_cam rotation is not orthonormal (error {worst:.3e})"
            )));
        }
        Ok(())
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let m = &self.world_to_cam;
        [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]
    }

    pub fn translation(&self) -> [f64; 3] {
        [
            self.world_to_cam[0][3],
            self.world_to_cam[1][3],
            self.world_to_cam[2][3],
        ]
    }

    /// Focal length from a horizontal field of view, principal point at the centre.
    pub fn from_fov(
        world_to_cam: [[f64; 4]; 4],
        fov_x: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self::new(
            world_to_cam,
            [f, f],
            [width as f64 / 2.0, height as f64 / 2.0],
            width,
            height,
            0.01,
            100.0,
        )
    }

    /// Camera at `eye` looking at `target`, with world `up` roughly upward in the image.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fov_x: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let fwd = normalize(sub(target, eye));
        // Image y points down, so the camera "down" axis is -up projected.
        let right = normalize(cross(fwd, up));
        let down = cross(fwd, right);
        let rows = [right, down, fwd];
        let mut w2c = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                w2c[i][j] = rows[i][j];
            }
            w2c[i][3] = -(rows[i][0] * eye[0] + rows[i][1] * eye[1] + rows[i][2] * eye[2]);
        }
        w2c[3][3] = 1.0;
        Self::from_fov(w2c, fov_x, width, height)
    }

    pub fn camera_center(&self) -> [f64; 3] {
        let r = self.rotation();
        let t = self.translation();
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Knobs of the rasteriser. [`RenderSettings::exact`] disables every
/// truncation so the output is a smooth function of its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderSettings {
    pub background: [f64; 3],
    /// Footprint radius in standard deviations used for culling and tile binning.
    pub cutoff_sigma: f64,
    /// Contributions with α below this value are skipped.
    pub min_alpha: f64,
    pub tile_size: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            cutoff_sigma: 3.0,
            min_alpha: 1.0 / 255.0,
            tile_size: 16,
        }
    }
}

impl RenderSettings {
    pub fn with_background(background: [f64; 3]) -> Self {
        Self {
            background,
            ..Self::default()
        }
    }

    pub fn exact(background: [f64; 3]) -> Self {
        Self {
            background,
            cutoff_sigma: f64::INFINITY,
            min_alpha: 0.0,
            tile_size: 16,
        }
    }
}

/// Forward result plus everything the backward pass needs.
#[derive(Clone, Debug)]
pub struct Render<F = f32> {
    pub image: Image<F>,
    /// Per input Gaussian, its projection or `None` when culled.
    pub splats: Vec<Option<Splat2D<F>>>,
    pub raster: Rasterized<F>,
}

#[derive(Clone, Debug, Default)]
pub struct RenderGrads<F = f32> {
    pub splats: Vec<Splat3DGrad<F>>,
    /// `‖∂loss/∂μ′‖` for each Gaussian in this view (0 when culled).
    pub screen_grad_norm: Vec<F>,
    pub visible: Vec<bool>,
}

/// Project and α-blend `gaussians` as seen by `camera`.
pub fn render<F: Real>(
    gaussians: &[Splat3D<F>],
    camera: &Camera,
    settings: &RenderSettings,
) -> Render<F> {
    let splats: Vec<Option<Splat2D<F>>> = gaussians
        .iter()
        .map(|g| project(g, camera, settings.cutoff_sigma))
        .collect();
    let (image, raster) = rasterize(&splats, camera.width, camera.height, settings);
    Render {
        image,
        splats,
        raster,
    }
}

/// Adjoint of [`render`] for a loss with image gradient `d_image`.
pub fn render_backward<F: Real>(
    gaussians: &[Splat3D<F>],
    camera: &Camera,
    forward: &Render<F>,
    d_image: &Image<F>,
) -> Result<RenderGrads<F>> {
    if gaussians.len() != forward.splats.len() {
        return Err(Error::Internal(format!(
            "backward received {} Gaussians but the forward pass rendered {}",
            gaussians.len(),
            forward.splats.len()
        )));
    }
    if d_image.width != forward.image.width || d_image.height != forward.image.height {
        return Err(Error::Internal(
            "image gradient does not match the rendered resolution".into(),
        ));
    }
    let grads2d = rasterize_backward(&forward.splats, &forward.raster, d_image)?;
    let mut out = RenderGrads {
        splats: vec![Splat3DGrad::default(); gaussians.len()],
        screen_grad_norm: vec![F::zero(); gaussians.len()],
        visible: forward.splats.iter().map(Option::is_some).collect(),
    };
    for (i, (g, s)) in gaussians.iter().zip(&forward.splats).enumerate() {
        if let Some(s) = s {
            let g2 = &grads2d[i];
            out.screen_grad_norm[i] = (g2.mu2d[0] * g2.mu2d[0] + g2.mu2d[1] * g2.mu2d[1]).sqrt();
            out.splats[i] = project_backward(g, s, camera, g2);
        }
    }
    Ok(out)
}

/// Gradients of the learnable [`Gaussian`] parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianGrad<F = f32> {
    pub mu: Vec3<F>,
    pub rot: Quat<F>,
    pub log_scale: Vec3<F>,
    pub color: Vec3<F>,
    pub opacity_logit: F,
}

/// Chain a [`Splat3DGrad`] back to the parameters of `g` (rotation
/// normalisation and opacity sigmoid), with lifecycle `multiplier`.
pub fn splat_grad_to_gaussian<F: Real>(
    g: &Gaussian<F>,
    multiplier: F,
    d: &Splat3DGrad<F>,
) -> GaussianGrad<F> {
    let s = g.opacity();
    GaussianGrad {
        mu: d.mu,
        rot: quat_normalize_backward(&g.rot, &d.rot),
        log_scale: d.log_scale,
        color: d.color,
        opacity_logit: d.opacity * multiplier * s * (F::one() - s),
    }
}

/// Render plain Gaussians (no deformation, unit lifecycle).
pub fn render_gaussians<F: Real>(
    gaussians: &[Gaussian<F>],
    camera: &Camera,
    settings: &RenderSettings,
) -> Render<F> {
    let splats: Vec<Splat3D<F>> = gaussians.iter().map(|g| g.to_splat(F::one())).collect();
    render(&splats, camera, settings)
}

pub fn render_gaussians_backward<F: Real>(
    gaussians: &[Gaussian<F>],
    camera: &Camera,
    forward: &Render<F>,
    d_image: &Image<F>,
) -> Result<(Vec<GaussianGrad<F>>, Vec<F>)> {
    let splats: Vec<Splat3D<F>> = gaussians.iter().map(|g| g.to_splat(F::one())).collect();
    let grads = render_backward(&splats, camera, forward, d_image)?;
    let per = gaussians
        .iter()
        .zip(&grads.splats)
        .map(|(g, d)| splat_grad_to_gaussian(g, F::one(), d))
        .collect();
    Ok((per, grads.screen_grad_norm))
}
