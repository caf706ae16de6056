//! Evaluation: per-frame metrics, baselines, and the line-delimited records
//! the command-line tool emits.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deform::{HyperCanonicalScene, SettingsMeta};
use crate::distill::DistilledScene;
use crate::error::{Error, Result};
use crate::forecast::ForecastModel;
use crate::frame::FrameSample;
use crate::imgbuf::Image;
use crate::io::checkpoint::Checkpoint;
use crate::metrics::{psnr, ssim};
use crate::splat::{Camera, RenderSettings};

/// Boundary between observed and future frames in the forecasting protocol.
pub const FUTURE_SPLIT: f64 = 0.8;

/// Which timestamps a command uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    #[default]
    All,
    /// `t < cutoff`.
    Observed,
    /// `t ≥ cutoff`.
    Future,
}

impl Split {
    pub fn contains(self, t: f64, cutoff: f64) -> bool {
        match self {
            Split::All => true,
            Split::Observed => t < cutoff,
            Split::Future => t >= cutoff,
        }
    }
}

pub fn split_frames<F: Clone>(
    frames: &[FrameSample<F>],
    split: Split,
    cutoff: f64,
) -> Vec<FrameSample<F>> {
    frames
        .iter()
        .filter(|f| split.contains(f.t, cutoff))
        .cloned()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetric {
    pub frame: usize,
    pub t: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub frames: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// PSNR and SSIM of `render(frame)` against each frame's image, in frame order.
pub fn evaluate<R>(frames: &[FrameSample<f32>], render: R) -> Result<Vec<FrameMetric>>
where
    R: Fn(&FrameSample<f32>) -> Result<Image<f32>> + Sync,
{
    frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let img = render(f)?;
            Ok(FrameMetric {
                frame: i,
                t: f.t,
                psnr: psnr(&img, &f.image)?,
                ssim: ssim(&img, &f.image)?,
            })
        })
        .collect()
}

/// Per-frame rows of one or more methods over the same frame set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub methods: Vec<(String, Vec<FrameMetric>)>,
    pub wall_clock_s: f64,
    pub iterations: BTreeMap<String, u64>,
}

impl MetricReport {
    pub fn push(&mut self, method: &str, rows: Vec<FrameMetric>) {
        self.methods.push((method.to_string(), rows));
    }

    pub fn rows(&self, method: &str) -> Option<&[FrameMetric]> {
        self.methods
            .iter()
            .find(|(m, _)| m == method)
            .map(|(_, r)| r.as_slice())
    }

    /// Means of the per-frame values for each method.
    pub fn summaries(&self) -> Vec<MethodSummary> {
        self.methods
            .iter()
            .map(|(m, rows)| {
                let n = rows.len().max(1) as f64;
                MethodSummary {
                    method: m.clone(),
                    frames: rows.len(),
                    psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
                    ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
                }
            })
            .collect()
    }

    pub fn summary(&self, method: &str) -> Option<MethodSummary> {
        self.summaries().into_iter().find(|s| s.method == method)
    }

    /// Human-readable aggregate table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<20} {:>7} {:>9} {:>8}",
            "method", "frames", "PSNR dB", "SSIM"
        );
        for m in self.summaries() {
            let _ = writeln!(
                s,
                "{:<20} {:>7} {:>9.3} {:>8.4}",
                m.method, m.frames, m.psnr, m.ssim
            );
        }
        let _ = write!(s, "wall clock {:.1} s", self.wall_clock_s);
        s
    }

    /// Frame rows, then one summary per method, then the run record.
    pub fn records(&self, command: &str) -> Vec<Record> {
        let mut out = Vec::new();
        for (m, rows) in &self.methods {
            out.extend(rows.iter().map(|r| Record::Frame {
                method: m.clone(),
                frame: r.frame,
                t: r.t,
                psnr: r.psnr,
                ssim: r.ssim,
            }));
        }
        out.extend(self.summaries().into_iter().map(|s| Record::Summary {
            method: s.method,
            frames: s.frames,
            psnr: s.psnr,
            ssim: s.ssim,
        }));
        out.push(Record::Run {
            command: command.to_string(),
            wall_clock_s: self.wall_clock_s,
            iterations: self.iterations.clone(),
        });
        out
    }
}

/// One line of machine-readable output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Step {
        stage: u8,
        iteration: u64,
        loss: f64,
        psnr: f64,
        /// Gaussians in stage 1, key points in stages 2 and 3.
        count: usize,
    },
    Frame {
        method: String,
        frame: usize,
        t: f64,
        psnr: f64,
        ssim: f64,
    },
    Summary {
        method: String,
        frames: usize,
        psnr: f64,
        ssim: f64,
    },
    Output {
        path: String,
        t: f64,
    },
    Run {
        command: String,
        wall_clock_s: f64,
        iterations: BTreeMap<String, u64>,
    },
    Error {
        message: String,
    },
}

impl Record {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialise")
    }
}

/// A trained scene from any stage's checkpoint.
#[derive(Clone, Debug)]
pub enum SceneModel {
    Deformable(HyperCanonicalScene),
    Distilled(DistilledScene),
    Forecast(ForecastModel),
}

impl SceneModel {
    /// The scene and the render settings it was trained with.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, RenderSettings)> {
        let model = match ck.stage.as_str() {
            "stage1" => SceneModel::Deformable(HyperCanonicalScene::read_checkpoint(ck)?),
            "stage2" => SceneModel::Distilled(DistilledScene::read_checkpoint(ck)?),
            "stage3" => SceneModel::Forecast(ForecastModel::read_checkpoint(ck)?),
            s => return Err(Error::Checkpoint(format!("unknown stage tag {s:?}"))),
        };
        let settings: SettingsMeta = ck.json(&format!("{}.settings", ck.stage))?;
        Ok((model, settings.into()))
    }

    pub fn stage(&self) -> u8 {
        match self {
            SceneModel::Deformable(_) => 1,
            SceneModel::Distilled(_) => 2,
            SceneModel::Forecast(_) => 3,
        }
    }

    /// The deformation-field scene underneath, used for time extrapolation.
    pub fn deformable(&self) -> &HyperCanonicalScene {
        match self {
            SceneModel::Deformable(s) => s,
            SceneModel::Distilled(s) => &s.base,
            SceneModel::Forecast(m) => &m.scene.base,
        }
    }

    /// Last observed time of a forecasting model.
    pub fn last_observed(&self) -> Option<f64> {
        match self {
            SceneModel::Forecast(m) => Some(m.t_last()),
            _ => None,
        }
    }

    pub fn render(&self, t: f64, camera: &Camera, settings: &RenderSettings) -> Result<Image<f32>> {
        match self {
            SceneModel::Deformable(s) => s.render(t, camera, settings),
            SceneModel::Distilled(s) => s.render(t, camera, settings),
            SceneModel::Forecast(m) => m.render(t, camera, settings),
        }
    }

    /// Renders every `(t, camera)` pair; forecast models share one rollout.
    pub fn render_many(
        &self,
        views: &[(f64, Camera)],
        settings: &RenderSettings,
    ) -> Result<Vec<Image<f32>>> {
        if let SceneModel::Forecast(m) = self {
            let future: Vec<f64> = views
                .iter()
                .map(|v| v.0)
                .filter(|&t| t > m.t_last())
                .collect();
            let steps = future.iter().map(|&t| m.steps_to(t)).max().unwrap_or(0);
            let roll = m.rollout(steps)?;
            return views
                .par_iter()
                .map(|(t, cam)| {
                    if *t <= m.t_last() {
                        m.scene.render(*t, cam, settings)
                    } else {
                        let kp = m.motion_for_positions(&m.positions_from_rollout(&roll, *t));
                        m.render_future(&kp, *t, cam, settings)
                    }
                })
                .collect();
        }
        views
            .par_iter()
            .map(|(t, cam)| self.render(*t, cam, settings))
            .collect()
    }
}

/// Metrics of `model` over `frames`.
pub fn evaluate_model(
    model: &SceneModel,
    frames: &[FrameSample<f32>],
    settings: &RenderSettings,
) -> Result<Vec<FrameMetric>> {
    let views: Vec<(f64, Camera)> = frames.iter().map(|f| (f.t, f.camera.clone())).collect();
    let imgs = model.render_many(&views, settings)?;
    imgs.par_iter()
        .zip(frames)
        .enumerate()
        .map(|(i, (img, f))| {
            Ok(FrameMetric {
                frame: i,
                t: f.t,
                psnr: psnr(img, &f.image)?,
                ssim: ssim(img, &f.image)?,
            })
        })
        .collect()
}

/// Every frame rendered at `t_freeze`: the scene stops at the last observation.
pub fn evaluate_freeze(
    model: &SceneModel,
    t_freeze: f64,
    frames: &[FrameSample<f32>],
    settings: &RenderSettings,
) -> Result<Vec<FrameMetric>> {
    evaluate(frames, |f| match model {
        SceneModel::Forecast(m) => m.scene.render(t_freeze, &f.camera, settings),
        other => other.render(t_freeze, &f.camera, settings),
    })
}

/// The deformation field queried directly at each frame's time.
pub fn evaluate_time_extrapolation(
    scene: &HyperCanonicalScene,
    frames: &[FrameSample<f32>],
    settings: &RenderSettings,
) -> Result<Vec<FrameMetric>> {
    evaluate(frames, |f| scene.render(f.t, &f.camera, settings))
}
