//! Procedural dynamic scenes rendered from known Gaussians, written to disk
//! as a regular dataset plus a ground-truth bundle.
//!
//! Every generator is built from clusters of Gaussians that share one rigid
//! offset over time. The bundle stores the canonical Gaussians, each
//! cluster's motion law, vanish times, and the exact centres at every frame.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::FrameSample;
use crate::imgbuf::Image;
use crate::io::manifest::{
    cam_to_world_gl, save_manifest, BoundingBox, DatasetManifest, ManifestFrame,
};
use crate::io::png::write_png;
use crate::math::quat_normalize;
use crate::nn::rng::{normal, seeded, uniform, Rng};
use crate::splat::{render, Camera, RenderSettings, Splat3D};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const TRAIN_MANIFEST: &str = "transforms_train.json";
pub const TEST_MANIFEST: &str = "transforms_test.json";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// Four clusters oscillating sinusoidally along different axes.
    Oscillator,
    /// One rigid body translated around a circle of radius `amplitude`.
    RigidOrbit,
    /// Two interleaved groups sharing one region and moving in opposite directions.
    SplitCluster,
    /// Three oscillating clusters plus a static one that disappears at `vanish_time`.
    VanishCluster,
}

impl std::str::FromStr for Generator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oscillator" => Ok(Self::Oscillator),
            "rigid-orbit" => Ok(Self::RigidOrbit),
            "split-cluster" => Ok(Self::SplitCluster),
            "vanish-cluster" => Ok(Self::VanishCluster),
            other => Err(Error::Config(format!(
                "unknown generator `{other}` (expected oscillator, rigid-orbit, split-cluster or vanish-cluster)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub gaussians: usize,
    /// World units.
    pub amplitude: f64,
    /// In normalised time.
    pub period: f64,
    pub train_frames: usize,
    pub test_frames: usize,
    pub width: usize,
    pub height: usize,
    pub fov_x: f64,
    pub orbit_radius: f64,
    /// Maximum camera elevation in radians.
    pub orbit_elevation: f64,
    /// When set, every frame uses this timestamp (a static capture).
    pub fixed_time: Option<f64>,
    pub vanish_time: f64,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            generator: Generator::Oscillator,
            gaussians: 400,
            amplitude: 0.25,
            period: 0.45,
            train_frames: 50,
            test_frames: 20,
            width: 64,
            height: 64,
            fov_x: 0.7,
            orbit_radius: 4.0,
            orbit_elevation: 0.5,
            fixed_time: None,
            vanish_time: 0.6,
            background: [0.0; 3],
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.gaussians < 4 {
            return Err(Error::Config(
                "synthetic scenes need at least 4 Gaussians".into(),
            ));
        }
        if self.train_frames == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Config(
                "synthetic scenes need frames and a non-zero resolution".into(),
            ));
        }
        if !(self.period > 0.0) || !(self.amplitude >= 0.0) {
            return Err(Error::Config(
                "period must be positive and amplitude non-negative".into(),
            ));
        }
        if let Some(t) = self.fixed_time {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("fixed_time {t} is outside [0, 1]")));
            }
        }
        if !(self.orbit_elevation.abs() < 1.5) || !(self.orbit_radius > 0.0) {
            return Err(Error::Config(
                "camera orbit must have radius > 0 and |elevation| < 1.5".into(),
            ));
        }
        Ok(())
    }
}

/// Motion law shared by all Gaussians of one cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClusterMotion {
    Static,
    /// `amplitude · sin(2πt / period + phase) · direction`
    Sine {
        direction: [f64; 3],
        amplitude: f64,
        period: f64,
        phase: f64,
    },
    /// `amplitude · (cos θ, sin θ, 0)` with `θ = 2πt / period`
    Circle {
        amplitude: f64,
        period: f64,
    },
}

impl ClusterMotion {
    pub fn offset(&self, t: f64) -> [f64; 3] {
        match *self {
            ClusterMotion::Static => [0.0; 3],
            ClusterMotion::Sine {
                direction,
                amplitude,
                period,
                phase,
            } => {
                let s = amplitude * (2.0 * PI * t / period + phase).sin();
                [s * direction[0], s * direction[1], s * direction[2]]
            }
            ClusterMotion::Circle { amplitude, period } => {
                let th = 2.0 * PI * t / period;
                [amplitude * th.cos(), amplitude * th.sin(), 0.0]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtGaussian {
    pub mu: [f32; 3],
    pub rot: [f32; 4],
    pub log_scale: [f32; 3],
    pub color: [f32; 3],
    pub opacity: f32,
    pub cluster: usize,
    /// The Gaussian is absent for `t >= vanish_time`.
    pub vanish_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtFrame {
    pub time: f64,
    /// Centres of all Gaussians at `time`, n × 3.
    pub positions: Vec<f32>,
}

/// Everything needed to re-render a synthetic dataset exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub version: u32,
    pub spec: SyntheticSpec,
    pub bbox: BoundingBox,
    pub clusters: Vec<ClusterMotion>,
    pub gaussians: Vec<GtGaussian>,
    pub train: Vec<GtFrame>,
    pub test: Vec<GtFrame>,
}

impl GroundTruth {
    pub fn generate(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded(spec.seed);
        let a = spec.amplitude;
        let p = spec.period;
        let sine = |direction: [f64; 3], phase: f64| ClusterMotion::Sine {
            direction,
            amplitude: a,
            period: p,
            phase,
        };
        // (centre, radius, colour, motion) per cluster.
        let layout: Vec<([f64; 3], f64, [f64; 3], ClusterMotion)> = match spec.generator {
            Generator::Oscillator => vec![
                (
                    [0.5, 0.0, 0.0],
                    0.22,
                    [0.9, 0.25, 0.2],
                    sine([0.0, 0.0, 1.0], 0.0),
                ),
                (
                    [-0.5, 0.0, 0.0],
                    0.22,
                    [0.2, 0.8, 0.3],
                    sine([0.0, 0.0, 1.0], 0.5 * PI),
                ),
                (
                    [0.0, 0.5, 0.15],
                    0.22,
                    [0.25, 0.35, 0.9],
                    sine([1.0, 0.0, 0.0], PI),
                ),
                (
                    [0.0, -0.5, -0.15],
                    0.22,
                    [0.9, 0.8, 0.2],
                    sine([0.0, 1.0, 0.0], 1.5 * PI),
                ),
            ],
            Generator::RigidOrbit => {
                let m = ClusterMotion::Circle {
                    amplitude: a,
                    period: p,
                };
                vec![
                    ([0.0, 0.0, 0.0], 0.3, [0.85, 0.3, 0.25], m.clone()),
                    ([0.35, 0.2, 0.1], 0.18, [0.25, 0.75, 0.35], m.clone()),
                    ([-0.3, -0.25, -0.1], 0.18, [0.3, 0.4, 0.9], m),
                ]
            }
            Generator::SplitCluster => vec![
                (
                    [0.0, 0.0, 0.0],
                    0.3,
                    [0.9, 0.75, 0.2],
                    sine([1.0, 0.0, 0.0], 0.0),
                ),
                (
                    [0.0, 0.0, 0.0],
                    0.3,
                    [0.3, 0.6, 0.9],
                    sine([-1.0, 0.0, 0.0], 0.0),
                ),
            ],
            Generator::VanishCluster => vec![
                (
                    [0.5, 0.0, 0.0],
                    0.22,
                    [0.9, 0.25, 0.2],
                    sine([0.0, 0.0, 1.0], 0.0),
                ),
                (
                    [-0.5, 0.0, 0.0],
                    0.22,
                    [0.2, 0.8, 0.3],
                    sine([0.0, 0.0, 1.0], 0.5 * PI),
                ),
                (
                    [0.0, 0.5, 0.15],
                    0.22,
                    [0.25, 0.35, 0.9],
                    sine([1.0, 0.0, 0.0], PI),
                ),
                (
                    [0.0, -0.45, -0.1],
                    0.22,
                    [0.9, 0.8, 0.2],
                    ClusterMotion::Static,
                ),
            ],
        };
        let vanishing =
            matches!(spec.generator, Generator::VanishCluster).then_some(layout.len() - 1);
        let k = layout.len();
        let mut gaussians = Vec::with_capacity(spec.gaussians);
        for i in 0..spec.gaussians {
            let c = i % k;
            let (centre, radius, base, _) = &layout[c];
            gaussians.push(random_gaussian(
                &mut rng,
                *centre,
                *radius,
                *base,
                c,
                (vanishing == Some(c)).then_some(spec.vanish_time),
            ));
        }
        let clusters: Vec<ClusterMotion> = layout.into_iter().map(|l| l.3).collect();
        let mut gt = GroundTruth {
            version: BUNDLE_VERSION,
            spec: spec.clone(),
            bbox: BoundingBox {
                min: [0.0; 3],
                max: [0.0; 3],
            },
            clusters,
            gaussians,
            train: Vec::new(),
            test: Vec::new(),
        };
        gt.bbox = gt.motion_bounds();
        gt.train = frame_times(spec, false)
            .into_iter()
            .map(|t| gt.frame(t))
            .collect();
        gt.test = frame_times(spec, true)
            .into_iter()
            .map(|t| gt.frame(t))
            .collect();
        Ok(gt)
    }

    fn frame(&self, time: f64) -> GtFrame {
        GtFrame {
            time,
            positions: self.positions_at(time),
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn cluster_labels(&self) -> Vec<usize> {
        self.gaussians.iter().map(|g| g.cluster).collect()
    }

    /// Displacement of every Gaussian from its canonical centre at `t`, n × 3.
    pub fn offsets_at(&self, t: f64) -> Vec<f64> {
        self.gaussians
            .iter()
            .flat_map(|g| self.clusters[g.cluster].offset(t))
            .collect()
    }

    pub fn positions_at(&self, t: f64) -> Vec<f32> {
        self.gaussians
            .iter()
            .flat_map(|g| {
                let o = self.clusters[g.cluster].offset(t);
                [0, 1, 2].map(|k| (g.mu[k] as f64 + o[k]) as f32)
            })
            .collect()
    }

    pub fn visible_at(&self, i: usize, t: f64) -> bool {
        self.gaussians[i].vanish_time.is_none_or(|v| t < v)
    }

    /// Renderer inputs at `t` for the given centres.
    pub fn splats_with_positions(&self, t: f64, positions: &[f32]) -> Vec<Splat3D<f32>> {
        self.gaussians
            .iter()
            .enumerate()
            .map(|(i, g)| Splat3D {
                mu: [positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]],
                rot: g.rot,
                log_scale: g.log_scale,
                color: g.color,
                opacity: if self.visible_at(i, t) {
                    g.opacity
                } else {
                    0.0
                },
            })
            .collect()
    }

    pub fn splats_at(&self, t: f64) -> Vec<Splat3D<f32>> {
        self.splats_with_positions(t, &self.positions_at(t))
    }

    pub fn settings(&self) -> RenderSettings {
        RenderSettings::with_background(self.spec.background)
    }

    pub fn render(&self, t: f64, camera: &Camera) -> Image<f32> {
        render(&self.splats_at(t), camera, &self.settings()).image
    }

    /// Camera of training (`test == false`) or test frame `k`.
    pub fn camera(&self, k: usize, test: bool) -> Result<Camera> {
        let s = &self.spec;
        let golden = PI * (3.0 - 5f64.sqrt());
        let az = k as f64 * golden + if test { 0.5 * golden } else { 0.0 };
        let levels = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let el = s.orbit_elevation * levels[(k * 3 + usize::from(test)) % levels.len()];
        let r = s.orbit_radius;
        let eye = [
            r * el.cos() * az.cos(),
            r * el.cos() * az.sin(),
            r * el.sin(),
        ];
        Camera::look_at(eye, [0.0; 3], [0.0, 0.0, 1.0], s.fov_x, s.width, s.height)
    }

    /// Axis-aligned box containing every centre over time, padded by three
    /// standard deviations of the largest Gaussian.
    fn motion_bounds(&self) -> BoundingBox {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let max_sigma = self
            .gaussians
            .iter()
            .flat_map(|g| g.log_scale)
            .fold(0.0f64, |m, s| m.max((s as f64).exp()));
        for step in 0..=200 {
            let t = step as f64 / 200.0;
            for c in self.positions_at(t).chunks_exact(3) {
                for k in 0..3 {
                    lo[k] = lo[k].min(c[k] as f64);
                    hi[k] = hi[k].max(c[k] as f64);
                }
            }
        }
        let pad = 3.0 * max_sigma + 0.05;
        let round = |v: f64, up: bool| {
            if up {
                (v * 20.0).ceil() / 20.0
            } else {
                (v * 20.0).floor() / 20.0
            }
        };
        BoundingBox {
            min: lo.map(|v| round(v - pad, false)),
            max: hi.map(|v| round(v + pad, true)),
        }
    }

    /// Rendered frames for one split.
    pub fn frames(&self, test: bool) -> Result<Vec<FrameSample<f32>>> {
        let list = if test { &self.test } else { &self.train };
        list.iter()
            .enumerate()
            .map(|(k, f)| {
                let cam = self.camera(k, test)?;
                let img = render(
                    &self.splats_with_positions(f.time, &f.positions),
                    &cam,
                    &self.settings(),
                )
                .image;
                // Stored datasets are 8-bit; train on exactly what is on disk.
                let img = Image::from_rgb8(img.width, img.height, &img.to_rgb8());
                FrameSample::new(img, cam, f.time)
            })
            .collect()
    }

    fn manifest(&self, test: bool) -> Result<DatasetManifest> {
        let (list, dir) = if test {
            (&self.test, "test")
        } else {
            (&self.train, "train")
        };
        let frames = list
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let cam = self.camera(k, test)?;
                Ok(ManifestFrame {
                    file_path: format!("{dir}/r_{k:03}.png"),
                    transform_matrix: cam_to_world_gl(&cam.world_to_cam),
                    time: f.time,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DatasetManifest {
            camera_angle_x: Some(self.spec.fov_x),
            fl_x: None,
            fl_y: None,
            cx: None,
            cy: None,
            near: None,
            far: None,
            bbox: Some(self.bbox.clone()),
            background: Some(self.spec.background),
            frames,
        })
    }

    /// Writes images, both manifests and the bundle into `dir`.
    pub fn write_dataset(&self, dir: &Path) -> Result<DatasetPaths> {
        std::fs::create_dir_all(dir)?;
        for test in [false, true] {
            let m = self.manifest(test)?;
            for (frame, entry) in self.frames(test)?.iter().zip(&m.frames) {
                write_png(&frame.image, &dir.join(&entry.file_path))?;
            }
            save_manifest(
                &m,
                &dir.join(if test { TEST_MANIFEST } else { TRAIN_MANIFEST }),
            )?;
        }
        self.save(&dir.join(GROUND_TRUTH_FILE))?;
        Ok(DatasetPaths::in_dir(dir))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let gt: GroundTruth = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if gt.version != BUNDLE_VERSION {
            return Err(Error::Version {
                found: gt.version,
                supported: BUNDLE_VERSION,
            });
        }
        Ok(gt)
    }
}

/// Locations of a written dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub ground_truth: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            train: dir.join(TRAIN_MANIFEST),
            test: dir.join(TEST_MANIFEST),
            ground_truth: dir.join(GROUND_TRUTH_FILE),
        }
    }
}

/// Generates `spec` into `dir`.
pub fn generate_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<(GroundTruth, DatasetPaths)> {
    let gt = GroundTruth::generate(spec)?;
    let paths = gt.write_dataset(dir)?;
    Ok((gt, paths))
}

fn frame_times(spec: &SyntheticSpec, test: bool) -> Vec<f64> {
    let n = if test {
        spec.test_frames
    } else {
        spec.train_frames
    };
    (0..n)
        .map(|k| match spec.fixed_time {
            Some(t) => t,
            None if test => (k as f64 + 0.5) / n as f64,
            None if n == 1 => 0.0,
            None => k as f64 / (n - 1) as f64,
        })
        .collect()
}

fn random_gaussian(
    rng: &mut Rng,
    centre: [f64; 3],
    radius: f64,
    base: [f64; 3],
    cluster: usize,
    vanish_time: Option<f64>,
) -> GtGaussian {
    let mut p = [0.0; 3];
    loop {
        for v in p.iter_mut() {
            *v = 0.5 * radius * normal::<f64>(rng);
        }
        if p.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
            break;
        }
    }
    let q = quat_normalize(&[normal::<f64>(rng), normal(rng), normal(rng), normal(rng)]);
    GtGaussian {
        mu: [0, 1, 2].map(|k| (centre[k] + p[k]) as f32),
        rot: q.map(|v| v as f32),
        log_scale: [0; 3].map(|_| uniform::<f64>(rng, 0.035, 0.08).ln() as f32),
        color: base.map(|c| (c + uniform::<f64>(rng, -0.08, 0.08)).clamp(0.0, 1.0) as f32),
        opacity: uniform::<f64>(rng, 0.6, 0.95) as f32,
        cluster,
        vanish_time,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::manifest::{load_frames, load_manifest};
    use crate::io::png::read_png;

    fn small(generator: Generator) -> SyntheticSpec {
        SyntheticSpec {
            generator,
            gaussians: 40,
            train_frames: 4,
            test_frames: 2,
            width: 24,
            height: 20,
            ..Default::default()
        }
    }

    #[test]
    fn static_orbit_frames_are_identical_in_content() {
        let spec = SyntheticSpec {
            amplitude: 0.0,
            ..small(Generator::RigidOrbit)
        };
        let gt = GroundTruth::generate(&spec).unwrap();
        let cam = gt.camera(0, false).unwrap();
        let a = gt.render(0.0, &cam);
        for t in [0.1, 0.5, 0.93] {
            assert_eq!(gt.render(t, &cam), a);
        }
    }

    #[test]
    fn vanished_cluster_is_absent() {
        let gt = GroundTruth::generate(&small(Generator::VanishCluster)).unwrap();
        let cam = gt.camera(1, false).unwrap();
        let after: Vec<_> = gt.splats_at(0.7);
        let labels = gt.cluster_labels();
        for (s, c) in after.iter().zip(&labels) {
            assert_eq!(s.opacity == 0.0, *c == 3);
        }
        // Rendering only the visible Gaussians gives the same image.
        let visible: Vec<_> = after.iter().copied().filter(|s| s.opacity > 0.0).collect();
        assert_eq!(
            render(&visible, &cam, &gt.settings()).image,
            gt.render(0.7, &cam)
        );
    }

    #[test]
    fn split_groups_share_a_region_and_separate() {
        let gt = GroundTruth::generate(&small(Generator::SplitCluster)).unwrap();
        let o = gt.offsets_at(gt.spec.period / 4.0);
        for (i, g) in gt.gaussians.iter().enumerate() {
            let expect = if g.cluster == 0 {
                gt.spec.amplitude
            } else {
                -gt.spec.amplitude
            };
            assert!((o[3 * i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn written_dataset_round_trips_and_is_deterministic() {
        let spec = small(Generator::Oscillator);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let (gt, paths) = generate_synthetic(&spec, d1.path()).unwrap();
        generate_synthetic(&spec, d2.path()).unwrap();
        for rel in [
            TRAIN_MANIFEST,
            TEST_MANIFEST,
            GROUND_TRUTH_FILE,
            "train/r_000.png",
            "test/r_001.png",
        ] {
            assert_eq!(
                std::fs::read(d1.path().join(rel)).unwrap(),
                std::fs::read(d2.path().join(rel)).unwrap()
            );
        }
        let m = load_manifest(&paths.train).unwrap();
        assert_eq!(m, gt.manifest(false).unwrap());
        let back = GroundTruth::load(&paths.ground_truth).unwrap();
        assert_eq!(back, gt);
        // Rendering the stored ground truth reproduces every stored image.
        let (_, frames) = load_frames(&paths.train).unwrap();
        for (k, f) in frames.iter().enumerate() {
            let cam = back.camera(k, false).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    assert!((cam.world_to_cam[i][j] - f.camera.world_to_cam[i][j]).abs() < 1e-12);
                }
            }
            let img = render(
                &back.splats_with_positions(back.train[k].time, &back.train[k].positions),
                &cam,
                &back.settings(),
            )
            .image;
            let png: Image<f32> = read_png(&d1.path().join(format!("train/r_{k:03}.png"))).unwrap();
            assert_eq!(img.to_rgb8(), png.to_rgb8());
        }
    }
}
