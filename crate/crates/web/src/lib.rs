//! WebAssembly bindings for a static demo page.
//!
//! A synthetic scene is generated in the browser. The page can render it from
//! an orbiting camera at any time, colour its Gaussians by motion clusters,
//! and train a small forecasting network on the cluster trajectories before
//! the future boundary so that later times show the forecast instead of the
//! ground truth.

use splatcast::distill::cluster::kmeans;
use splatcast::eval::FUTURE_SPLIT;
use splatcast::forecast::{ForecastArch, ForecastNet, Trajectory};
use splatcast::io::synthetic::{Generator, GroundTruth, SyntheticSpec};
use splatcast::nn::rng::seeded;
use splatcast::nn::Adam;
use splatcast::splat::{render, Camera};
use wasm_bindgen::prelude::*;

/// Trajectory samples of the cluster centres over the observed range.
const TRACK_STEPS: usize = 40;
/// Times stacked into the motion descriptor used for clustering.
const DESCRIPTOR_TIMES: usize = 8;

const PALETTE: [[f32; 3]; 8] = [
    [0.90, 0.30, 0.25],
    [0.25, 0.60, 0.90],
    [0.30, 0.80, 0.35],
    [0.95, 0.75, 0.20],
    [0.70, 0.40, 0.85],
    [0.20, 0.80, 0.80],
    [0.95, 0.55, 0.70],
    [0.60, 0.60, 0.60],
];

#[wasm_bindgen]
pub struct Viewer {
    gt: GroundTruth,
    labels: Option<Vec<usize>>,
    show_clusters: bool,
    forecast: Option<Forecast>,
}

struct Forecast {
    net: ForecastNet<f64>,
    traj: Trajectory,
    labels: Vec<usize>,
}

impl Viewer {
    pub fn create(generator: &str, seed: u64, size: usize) -> Result<Viewer, String> {
        let generator: Generator = generator.parse().map_err(|e| format!("{e}"))?;
        let spec = SyntheticSpec {
            generator,
            seed,
            width: size,
            height: size,
            train_frames: 1,
            test_frames: 0,
            ..Default::default()
        };
        let gt = GroundTruth::generate(&spec).map_err(|e| e.to_string())?;
        Ok(Viewer {
            gt,
            labels: None,
            show_clusters: false,
            forecast: None,
        })
    }

    pub fn camera(&self, azimuth: f64, elevation: f64) -> Result<Camera, String> {
        let s = &self.gt.spec;
        let el = elevation.clamp(-1.4, 1.4);
        let eye = [
            s.orbit_radius * el.cos() * azimuth.cos(),
            s.orbit_radius * el.cos() * azimuth.sin(),
            s.orbit_radius * el.sin(),
        ];
        Camera::look_at(eye, [0.0; 3], [0.0, 0.0, 1.0], s.fov_x, s.width, s.height)
            .map_err(|e| e.to_string())
    }

    /// Centres at `t`: ground truth, or the forecast after the boundary when trained.
    pub fn positions(&self, t: f64) -> Vec<f32> {
        match &self.forecast {
            Some(f) if t > f.traj.t_last() => forecast_positions(&self.gt, f, t),
            _ => self.gt.positions_at(t),
        }
    }

    /// RGBA pixels of the scene at `t`.
    pub fn frame(&self, t: f64, azimuth: f64, elevation: f64) -> Result<Vec<u8>, String> {
        let cam = self.camera(azimuth, elevation)?;
        let mut splats = self.gt.splats_with_positions(t, &self.positions(t));
        if let (true, Some(labels)) = (self.show_clusters, &self.labels) {
            for (s, &l) in splats.iter_mut().zip(labels) {
                s.color = PALETTE[l % PALETTE.len()];
            }
        }
        let img = render(&splats, &cam, &self.gt.settings()).image;
        Ok(img
            .to_rgb8()
            .chunks(3)
            .flat_map(|p| [p[0], p[1], p[2], 255])
            .collect())
    }

    /// k-means over each Gaussian's positions at several observed times.
    pub fn cluster(&mut self, k: usize, seed: u64) -> Result<Vec<usize>, String> {
        let times: Vec<f64> = (0..DESCRIPTOR_TIMES)
            .map(|i| FUTURE_SPLIT * i as f64 / DESCRIPTOR_TIMES as f64)
            .collect();
        let snaps: Vec<Vec<f32>> = times.iter().map(|&t| self.gt.positions_at(t)).collect();
        let n = self.gt.len();
        let dim = 3 * DESCRIPTOR_TIMES;
        let mut points = Vec::with_capacity(n * dim);
        for i in 0..n {
            for s in &snaps {
                points.extend(s[3 * i..3 * i + 3].iter().map(|&v| f64::from(v)));
            }
        }
        let km =
            kmeans(&points, dim, k.clamp(2, n), &mut seeded(seed)).map_err(|e| e.to_string())?;
        self.labels = Some(km.labels.clone());
        self.forecast = None;
        Ok(km.labels)
    }

    /// Trains the forecaster on cluster-centre tracks over `[0, boundary)`; returns the final mean squared step error.
    pub fn train(&mut self, iterations: usize, seed: u64) -> Result<f64, String> {
        let labels = match &self.labels {
            Some(l) => l.clone(),
            None => self.cluster(6, seed)?,
        };
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let dt = FUTURE_SPLIT / TRACK_STEPS as f64;
        let mut positions = Vec::with_capacity(TRACK_STEPS * k * 3);
        for j in 0..TRACK_STEPS {
            positions.extend(cluster_centres(&self.gt, &labels, k, j as f64 * dt));
        }
        let traj = Trajectory::new(0.0, dt, k, positions).map_err(|e| e.to_string())?;
        let arch = ForecastArch {
            window: 4,
            layers: 2,
            width: 16,
            k_graph: 3,
        };
        let mut rng = seeded(seed);
        let mut net = ForecastNet::new(arch, traj.frame(0), &mut rng).map_err(|e| e.to_string())?;
        net.fit_scales(&traj.positions);
        let mut adam = Adam::new(net.params.len());
        let w = net.arch.window;
        let windows = TRACK_STEPS - w;
        let mut loss = 0.0;
        for it in 0..iterations {
            let j = it % windows;
            let (pred, tape) = net.forward(traj.window(j, w)).map_err(|e| e.to_string())?;
            let target = traj.frame(j + w);
            let scale = 1.0 / pred.len() as f64;
            loss = pred
                .iter()
                .zip(target)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                * scale;
            let d: Vec<f64> = pred
                .iter()
                .zip(target)
                .map(|(a, b)| 2.0 * (a - b) * scale)
                .collect();
            let mut g = vec![0.0; net.params.len()];
            net.backward(&tape, &d, &mut g).map_err(|e| e.to_string())?;
            adam.update(&mut net.params, &g, 3e-3);
        }
        self.forecast = Some(Forecast { net, traj, labels });
        Ok(loss)
    }

    /// Root-mean-square distance between forecast and true centres at `t`.
    pub fn error_at(&self, t: f64) -> f64 {
        let a = self.positions(t);
        let b = self.gt.positions_at(t);
        let s: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| f64::from(x - y).powi(2))
            .sum();
        (s / (a.len() / 3).max(1) as f64).sqrt()
    }
}

fn cluster_centres(gt: &GroundTruth, labels: &[usize], k: usize, t: f64) -> Vec<f64> {
    let p = gt.positions_at(t);
    let mut sum = vec![0.0; 3 * k];
    let mut count = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        count[l] += 1;
        for c in 0..3 {
            sum[3 * l + c] += f64::from(p[3 * i + c]);
        }
    }
    for l in 0..k {
        for c in 0..3 {
            sum[3 * l + c] /= count[l].max(1) as f64;
        }
    }
    sum
}

/// Each Gaussian keeps its offset from its cluster centre at the last observation.
fn forecast_positions(gt: &GroundTruth, f: &Forecast, t: f64) -> Vec<f32> {
    let w = f.net.arch.window;
    let last = f.traj.frame(f.traj.steps() - 1);
    let x = (t - f.traj.t_last()) / f.traj.dt;
    let steps = x.ceil().max(1.0) as usize;
    let roll = match f.net.rollout(f.traj.window(f.traj.steps() - w, w), steps) {
        Ok(r) => r,
        Err(_) => return gt.positions_at(t),
    };
    let per = 3 * f.net.nodes;
    let frac = x - (steps - 1) as f64;
    let prev: &[f64] = if steps == 1 {
        last
    } else {
        &roll[(steps - 2) * per..(steps - 1) * per]
    };
    let next = &roll[(steps - 1) * per..steps * per];
    let base = gt.positions_at(f.traj.t_last());
    base.chunks(3)
        .zip(&f.labels)
        .flat_map(|(p, &l)| {
            (0..3).map(move |c| {
                let centre = prev[3 * l + c] + frac * (next[3 * l + c] - prev[3 * l + c]);
                (f64::from(p[c]) + centre - last[3 * l + c]) as f32
            })
        })
        .collect()
}

#[wasm_bindgen]
impl Viewer {
    #[wasm_bindgen(constructor)]
    pub fn new(generator: &str, seed: u32, size: u32) -> Result<Viewer, JsError> {
        Viewer::create(generator, u64::from(seed), size as usize).map_err(|e| JsError::new(&e))
    }

    pub fn width(&self) -> u32 {
        self.gt.spec.width as u32
    }

    pub fn height(&self) -> u32 {
        self.gt.spec.height as u32
    }

    pub fn gaussians(&self) -> u32 {
        self.gt.len() as u32
    }

    /// RGBA bytes for a canvas `ImageData`.
    pub fn render(&self, t: f64, azimuth: f64, elevation: f64) -> Result<Vec<u8>, JsError> {
        self.frame(t, azimuth, elevation)
            .map_err(|e| JsError::new(&e))
    }

    pub fn set_cluster_colors(&mut self, on: bool) {
        self.show_clusters = on;
    }

    /// Returns the number of clusters found.
    pub fn cluster_motion(&mut self, k: u32, seed: u32) -> Result<u32, JsError> {
        let labels = self
            .cluster(k as usize, u64::from(seed))
            .map_err(|e| JsError::new(&e))?;
        Ok(labels.iter().max().map_or(0, |m| *m as u32 + 1))
    }

    pub fn train_forecast(&mut self, iterations: u32, seed: u32) -> Result<f64, JsError> {
        self.train(iterations as usize, u64::from(seed))
            .map_err(|e| JsError::new(&e))
    }

    pub fn clear_forecast(&mut self) {
        self.forecast = None;
    }

    pub fn has_forecast(&self) -> bool {
        self.forecast.is_some()
    }

    pub fn forecast_error(&self, t: f64) -> f64 {
        self.error_at(t)
    }

    pub fn boundary(&self) -> f64 {
        FUTURE_SPLIT
    }
}
