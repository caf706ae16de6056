//! Transforms-JSON dataset manifests.
//!
//! Camera-to-world matrices follow the OpenGL convention (x right, y up,
//! z backward) used by Blender exports; they are converted to the
//! renderer's x-right, y-down, z-forward camera frame on load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::FrameSample;
use crate::io::png::read_png;
use crate::math::mat4_inverse;
use crate::splat::Camera;

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Horizontal field of view in radians; ignored when `fl_x` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_angle_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<[f64; 3]>,
    pub frames: Vec<ManifestFrame>,
}

impl DatasetManifest {
    pub fn background(&self) -> [f64; 3] {
        self.background.unwrap_or([0.0; 3])
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox.clone().unwrap_or(BoundingBox {
            min: [-1.5; 3],
            max: [1.5; 3],
        })
    }

    /// Checks everything that does not need the image files.
    pub fn validate(&self) -> Result<()> {
        if self.camera_angle_x.is_none() && self.fl_x.is_none() {
            return Err(Error::Manifest {
                frame: None,
                reason: "neither camera_angle_x nor fl_x is given".into(),
            });
        }
        if let Some(a) = self.camera_angle_x {
            if !(a > 0.0 && a < std::f64::consts::PI) {
                return Err(Error::Manifest {
                    frame: None,
                    reason: format!("camera_angle_x {a} is not in (0, π)"),
                });
            }
        }
        if let Some(b) = &self.bbox {
            if (0..3).any(|i| !(b.max[i] > b.min[i])) {
                return Err(Error::Manifest {
                    frame: None,
                    reason: "bounding box is empty".into(),
                });
            }
        }
        for (i, f) in self.frames.iter().enumerate() {
            if !(0.0..=1.0).contains(&f.time) {
                return Err(Error::Manifest {
                    frame: Some(i),
                    reason: format!("time {} is outside [0, 1]", f.time),
                });
            }
            world_to_cam(&f.transform_matrix).map_err(|reason| Error::Manifest {
                frame: Some(i),
                reason,
            })?;
        }
        Ok(())
    }

    /// Camera for frame `i` at the given image size.
    pub fn camera(&self, i: usize, width: usize, height: usize) -> Result<Camera> {
        let f = &self.frames[i];
        let w2c = world_to_cam(&f.transform_matrix).map_err(|reason| Error::Manifest {
            frame: Some(i),
            reason,
        })?;
        let fx = match (self.fl_x, self.camera_angle_x) {
            (Some(fx), _) => fx,
            (None, Some(a)) => 0.5 * width as f64 / (0.5 * a).tan(),
            (None, None) => unreachable!("validated"),
        };
        let fy = self.fl_y.unwrap_or(fx);
        let cx = self.cx.unwrap_or(width as f64 / 2.0);
        let cy = self.cy.unwrap_or(height as f64 / 2.0);
        Camera::new(
            w2c,
            [fx, fy],
            [cx, cy],
            width,
            height,
            self.near.unwrap_or(DEFAULT_NEAR),
            self.far.unwrap_or(DEFAULT_FAR),
        )
        .map_err(|e| Error::Manifest {
            frame: Some(i),
            reason: e.to_string(),
        })
    }
}

/// OpenGL camera-to-world → renderer world-to-camera.
pub fn world_to_cam(c2w_gl: &[[f64; 4]; 4]) -> std::result::Result<[[f64; 4]; 4], String> {
    if c2w_gl.iter().flatten().any(|v| !v.is_finite()) {
        return Err("transform_matrix holds non-finite values".into());
    }
    let mut c2w = *c2w_gl;
    for row in c2w.iter_mut() {
        row[1] = -row[1];
        row[2] = -row[2];
    }
    let inv = mat4_inverse(&c2w).ok_or_else(|| "transform_matrix is singular".to_string())?;
    Ok(inv)
}

/// Renderer world-to-camera → OpenGL camera-to-world.
pub fn cam_to_world_gl(w2c: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut c2w = crate::math::rigid_inverse(w2c);
    for row in c2w.iter_mut() {
        row[1] = -row[1];
        row[2] = -row[2];
    }
    c2w
}

/// Path of frame `i` relative to the manifest directory; a missing
/// extension means `.png`.
pub fn frame_path(base: &Path, file_path: &str) -> PathBuf {
    let p = base.join(file_path);
    if p.extension().is_none() {
        p.with_extension("png")
    } else {
        p
    }
}

/// Parses and validates a manifest, checking that every image exists.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Manifest {
        frame: None,
        reason: format!("cannot read {}: {e}", path.display()),
    })?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        frame: None,
        reason: format!("{}: {e}", path.display()),
    })?;
    m.validate()?;
    let base = path.parent().unwrap_or(Path::new("."));
    for (i, f) in m.frames.iter().enumerate() {
        let p = frame_path(base, &f.file_path);
        if !p.is_file() {
            return Err(Error::Manifest {
                frame: Some(i),
                reason: format!("image {} does not exist", p.display()),
            });
        }
    }
    Ok(m)
}

pub fn save_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(m)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Loads a manifest and all of its images as training frames.
pub fn load_frames(path: &Path) -> Result<(DatasetManifest, Vec<FrameSample<f32>>)> {
    let m = load_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(m.frames.len());
    let mut size = None;
    for (i, f) in m.frames.iter().enumerate() {
        let img = read_png(&frame_path(base, &f.file_path)).map_err(|e| Error::Manifest {
            frame: Some(i),
            reason: e.to_string(),
        })?;
        match size {
            None => size = Some((img.width, img.height)),
            Some(s) if s != (img.width, img.height) => {
                return Err(Error::Manifest {
                    frame: Some(i),
                    reason: format!(
                        "image is {}×{}, earlier frames are {}×{}",
                        img.width, img.height, s.0, s.1
                    ),
                })
            }
            _ => {}
        }
        let cam = m.camera(i, img.width, img.height)?;
        frames.push(FrameSample::new(img, cam, f.time)?);
    }
    Ok((m, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn opengl_round_trip() {
        let cam =
            Camera::look_at([3.0, -1.0, 2.0], [0.0; 3], [0.0, 0.0, 1.0], 0.7, 32, 32).unwrap();
        let gl = cam_to_world_gl(&cam.world_to_cam);
        let back = world_to_cam(&gl).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((back[i][j] - cam.world_to_cam[i][j]).abs() < 1e-12);
            }
        }
        // OpenGL cameras look down their −z axis.
        let fwd = [-gl[0][2], -gl[1][2], -gl[2][2]];
        let to_target = [-3.0, 1.0, -2.0];
        let n = (14.0f64).sqrt();
        assert!(
            (fwd[0] - to_target[0] / n).abs() < 1e-12 && (fwd[2] - to_target[2] / n).abs() < 1e-12
        );
    }

    #[test]
    fn rejects_bad_time_and_singular_matrix() {
        let id = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 3.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let mut m = DatasetManifest {
            camera_angle_x: Some(0.7),
            fl_x: None,
            fl_y: None,
            cx: None,
            cy: None,
            near: None,
            far: None,
            bbox: None,
            background: None,
            frames: vec![
                ManifestFrame {
                    file_path: "a".into(),
                    transform_matrix: id,
                    time: 0.0,
                },
                ManifestFrame {
                    file_path: "b".into(),
                    transform_matrix: id,
                    time: 1.2,
                },
            ],
        };
        match m.validate() {
            Err(Error::Manifest {
                frame: Some(1),
                reason,
            }) => assert!(reason.contains("1.2")),
            other => panic!("{other:?}"),
        }
        m.frames[1].time = 1.0;
        m.frames[0].transform_matrix[0] = [0.0; 4];
        assert!(matches!(
            m.validate(),
            Err(Error::Manifest { frame: Some(0), .. })
        ));
    }

    #[test]
    fn missing_extension_defaults_to_png() {
        assert_eq!(
            frame_path(Path::new("d"), "train/r_001"),
            Path::new("d/train/r_001.png")
        );
        assert_eq!(frame_path(Path::new("d"), "x.png"), Path::new("d/x.png"));
    }

    proptest! {
        #[test]
        fn malformed_json_is_rejected_without_panicking(text in "\\PC{0,200}") {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.json");
            std::fs::write(&p, &text).unwrap();
            prop_assert!(load_manifest(&p).is_err());
        }

        #[test]
        fn out_of_range_times_name_the_frame(t in prop_oneof![-10.0f64..-1e-9, 1.0f64 + 1e-9..10.0], idx in 0usize..4) {
            let id = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 3.0], [0.0, 0.0, 0.0, 1.0]];
            let mut frames: Vec<ManifestFrame> = (0..4)
                .map(|i| ManifestFrame { file_path: format!("f{i}"), transform_matrix: id, time: 0.25 * i as f64 })
                .collect();
            frames[idx].time = t;
            let m = DatasetManifest {
                camera_angle_x: Some(0.7), fl_x: None, fl_y: None, cx: None, cy: None,
                near: None, far: None, bbox: None, background: None, frames,
            };
            let is_named = matches!(m.validate(), Err(Error::Manifest { frame: Some(i), .. }) if i == idx);
            prop_assert!(is_named);
        }
    }
}
