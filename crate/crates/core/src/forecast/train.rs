use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{ForecastArch, ForecastNet};
use crate::deform::{
    apply_motion, apply_motion_backward, read_adam_groups, write_adam_groups, SettingsMeta,
    StepReport,
};
use crate::distill::{
    blend_deform, blend_deform_backward, keypoint_motion, keypoint_motion_backward, DistilledScene,
    KeyPointMotion,
};
use crate::error::{Error, Result};
use crate::frame::{distinct_times, render_loss, FrameSample};
use crate::imgbuf::Image;
use crate::io::checkpoint::Checkpoint;
use crate::metrics::psnr_from_mse;
use crate::nn::rng::{restore_state, save_state, seeded, Rng};
use crate::nn::Adam;
use crate::splat::{Camera, RenderSettings};

/// Key-point centres sampled at uniform steps, `steps × k × 3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub nodes: usize,
    pub positions: Vec<f64>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, nodes: usize, positions: Vec<f64>) -> Result<Self> {
        if nodes == 0 || !positions.len().is_multiple_of(3 * nodes) || !(dt > 0.0) {
            return Err(Error::Shape(
                "trajectory is not a whole number of key-point frames".into(),
            ));
        }
        Ok(Self {
            t0,
            dt,
            nodes,
            positions,
        })
    }

    /// Samples the distilled key points at `steps` uniform times over `[t0, t1]`.
    pub fn sample(scene: &DistilledScene, t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if steps < 2 || !(t1 > t0) {
            return Err(Error::Config(format!(
                "cannot sample {steps} steps over [{t0}, {t1}]"
            )));
        }
        let dt = (t1 - t0) / (steps - 1) as f64;
        let mut positions = Vec::with_capacity(steps * scene.keypoints.len() * 3);
        for j in 0..steps {
            let t = if j + 1 == steps {
                t1
            } else {
                t0 + j as f64 * dt
            };
            positions.extend(scene.keypoint_positions_at(t)?.into_iter().map(f64::from));
        }
        Self::new(t0, dt, scene.keypoints.len(), positions)
    }

    pub fn steps(&self) -> usize {
        self.positions.len() / (3 * self.nodes)
    }

    pub fn t_last(&self) -> f64 {
        self.t0 + (self.steps() - 1) as f64 * self.dt
    }

    pub fn frame(&self, j: usize) -> &[f64] {
        let per = 3 * self.nodes;
        &self.positions[j * per..(j + 1) * per]
    }

    /// `window` consecutive frames starting at step `j`.
    pub fn window(&self, j: usize, window: usize) -> &[f64] {
        let per = 3 * self.nodes;
        &self.positions[j * per..(j + window) * per]
    }
}

/// Writes one `step id x y z` line per key point and step, after a header line.
pub fn write_point_tracks(
    path: &Path,
    nodes: usize,
    positions: &[f64],
    first_step: usize,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step id x y z")?;
    for (s, frame) in positions.chunks(3 * nodes).enumerate() {
        for (k, p) in frame.chunks(3).enumerate() {
            writeln!(f, "{} {k} {} {} {}", first_step + s, p[0], p[1], p[2])?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage3Config {
    pub arch: ForecastArch,
    /// Uniform samples of the observed trajectory.
    pub steps: usize,
    pub iterations: u64,
    pub lr: f64,
    /// Windows per update.
    pub batch: usize,
    /// Draw windows from a reshuffled permutation each epoch instead of in order.
    pub shuffle: bool,
    /// Extra iterations adding the image loss of forecast frames; 0 disables.
    pub joint_iterations: u64,
    /// Scale on the stage-2 learning rates while fine-tuning jointly.
    pub joint_rate_scale: f64,
    pub seed: u64,
}

impl Default for Stage3Config {
    fn default() -> Self {
        Self {
            arch: ForecastArch::default(),
            steps: 60,
            iterations: 3000,
            lr: 1e-3,
            batch: 8,
            shuffle: true,
            joint_iterations: 0,
            joint_rate_scale: 0.1,
            seed: 0,
        }
    }
}

impl Stage3Config {
    pub fn iterations_total(&self) -> u64 {
        self.iterations + self.joint_iterations
    }
}

/// Mean squared next-step error of `net` over every window of `traj`.
pub fn trajectory_loss(net: &ForecastNet<f64>, traj: &Trajectory) -> Result<f64> {
    let w = net.arch.window;
    let count = traj
        .steps()
        .checked_sub(w)
        .filter(|c| *c > 0)
        .ok_or_else(|| {
            Error::Config(format!(
                "trajectory has {} steps, windows need at least {}",
                traj.steps(),
                w + 1
            ))
        })?;
    let per = 3 * traj.nodes;
    let total: f64 = (0..count)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let p = net.predict(traj.window(j, w))?;
            Ok(p.iter()
                .zip(traj.frame(j + w))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    Ok(total / (count * per) as f64)
}

/// Loss and gradient of a batch of windows (starting steps `starts`).
fn batch_grad(
    net: &ForecastNet<f64>,
    traj: &Trajectory,
    starts: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let w = net.arch.window;
    let per = 3 * traj.nodes;
    let scale = 1.0 / (starts.len() * per) as f64;
    let parts: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|&j| -> Result<(f64, Vec<f64>)> {
            let (p, tape) = net.forward(traj.window(j, w))?;
            let target = traj.frame(j + w);
            let mut loss = 0.0;
            let d: Vec<f64> = p
                .iter()
                .zip(target)
                .map(|(a, b)| {
                    loss += (a - b).powi(2);
                    2.0 * (a - b) * scale
                })
                .collect();
            let mut g = vec![0.0; net.params.len()];
            net.backward(&tape, &d, &mut g)?;
            Ok((loss * scale, g))
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; net.params.len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// Trains a fresh network on `traj` alone with the trajectory loss, using the
/// batching, shuffling and learning rate of `config` (joint iterations are
/// ignored). `keypoints` are the k × 3 points the graph is built from.
pub fn fit_trajectory(
    config: &Stage3Config,
    keypoints: &[f64],
    traj: &Trajectory,
) -> Result<ForecastNet<f64>> {
    let w = config.arch.window;
    if traj.steps() <= w || config.batch == 0 {
        return Err(Error::Config(format!(
            "cannot fit {} trajectory steps with window {w} and batch {}",
            traj.steps(),
            config.batch
        )));
    }
    let mut rng = seeded(config.seed);
    let mut net = ForecastNet::new(config.arch.clone(), keypoints, &mut rng)?;
    net.fit_scales(&traj.positions);
    let mut adam = Adam::new(net.params.len());
    let n = traj.steps() - w;
    let (mut order, mut cursor) = (Vec::new(), 0);
    for i in 0..config.iterations {
        let mut batch = Vec::with_capacity(config.batch);
        while batch.len() < config.batch.min(n) {
            if cursor >= order.len() {
                order = (0..n).collect();
                if config.shuffle {
                    order.shuffle(&mut rng);
                }
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let (loss, grad) = batch_grad(&net, traj, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: i,
                reason: format!("trajectory loss is {loss}"),
            });
        }
        adam.update(&mut net.params, &grad, config.lr);
    }
    Ok(net)
}

/// Adam state for the scene parameters touched by joint fine-tuning.
#[derive(Clone, Debug, PartialEq)]
struct JointOptim {
    weight_grid: Adam<f32>,
    weight_mlp: Adam<f32>,
    deform: Adam<f32>,
    color: Adam<f32>,
    opacity: Adam<f32>,
}

const JOINT_GROUPS: [&str; 5] = ["weight_grid", "weight_mlp", "deform", "color", "opacity"];

impl JointOptim {
    fn new(s: &DistilledScene) -> Self {
        Self {
            weight_grid: Adam::new(s.weights.grid.num_params()),
            weight_mlp: Adam::new(s.weights.mlp.num_params()),
            deform: Adam::new(s.base.field.deform.num_params()),
            color: Adam::new(s.base.gaussians.color.len()),
            opacity: Adam::new(s.base.gaussians.opacity_logit.len()),
        }
    }

    fn groups(&self) -> [&Adam<f32>; 5] {
        [
            &self.weight_grid,
            &self.weight_mlp,
            &self.deform,
            &self.color,
            &self.opacity,
        ]
    }

    fn groups_mut(&mut self) -> [&mut Adam<f32>; 5] {
        [
            &mut self.weight_grid,
            &mut self.weight_mlp,
            &mut self.deform,
            &mut self.color,
            &mut self.opacity,
        ]
    }
}

/// Stage-2 learning rates used (scaled) during joint fine-tuning.
const JOINT_BASE_RATES: [f64; 5] = [1e-2, 1e-3, 1e-4, 2.5e-3, 5e-2];

/// Resumable stage-3 optimisation.
#[derive(Clone, Debug)]
pub struct Stage3Trainer {
    pub config: Stage3Config,
    pub scene: DistilledScene,
    pub settings: RenderSettings,
    pub trajectory: Trajectory,
    pub net: ForecastNet<f64>,
    pub iteration: u64,
    adam: Adam<f64>,
    joint: JointOptim,
    /// Window order of the current epoch and the position within it.
    order: Vec<usize>,
    cursor: usize,
    rng: Rng,
}

impl Stage3Trainer {
    /// Samples the key-point trajectory over the observed time range of `frames`.
    pub fn new(
        config: Stage3Config,
        settings: RenderSettings,
        scene: DistilledScene,
        frames: &[FrameSample<f32>],
    ) -> Result<Self> {
        let times = distinct_times(frames);
        let (t0, t1) = match (times.first(), times.last()) {
            (Some(&a), Some(&b)) if b > a => (a, b),
            _ => {
                return Err(Error::Config(
                    "forecasting needs frames at two or more timestamps".into(),
                ))
            }
        };
        let trajectory = Trajectory::sample(&scene, t0, t1, config.steps)?;
        Self::with_trajectory(config, settings, scene, trajectory)
    }

    pub fn with_trajectory(
        config: Stage3Config,
        settings: RenderSettings,
        scene: DistilledScene,
        trajectory: Trajectory,
    ) -> Result<Self> {
        if trajectory.steps() <= config.arch.window {
            return Err(Error::Config(format!(
                "trajectory has {} steps, windows need at least {}",
                trajectory.steps(),
                config.arch.window + 1
            )));
        }
        if config.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut rng = seeded(config.seed);
        let canon: Vec<f64> = scene.keypoints.mu.iter().map(|&v| f64::from(v)).collect();
        let mut net = ForecastNet::new(config.arch.clone(), &canon, &mut rng)?;
        net.fit_scales(&trajectory.positions);
        let adam = Adam::new(net.params.len());
        let joint = JointOptim::new(&scene);
        Ok(Self {
            config,
            scene,
            settings,
            trajectory,
            net,
            iteration: 0,
            adam,
            joint,
            order: Vec::new(),
            cursor: 0,
            rng,
        })
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations_total()
    }

    fn num_windows(&self) -> usize {
        self.trajectory.steps() - self.config.arch.window
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let n = self.num_windows();
        let mut out = Vec::with_capacity(self.config.batch);
        while out.len() < self.config.batch.min(n) {
            if self.cursor >= self.order.len() {
                self.order = (0..n).collect();
                if self.config.shuffle {
                    self.order.shuffle(&mut self.rng);
                }
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    pub fn step(&mut self, frames: &[FrameSample<f32>]) -> Result<StepReport> {
        let i = self.iteration;
        let batch = self.next_batch();
        let (loss, mut grad) = batch_grad(&self.net, &self.trajectory, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: i,
                reason: format!("trajectory loss is {loss}"),
            });
        }
        let mut report = StepReport {
            iteration: i,
            frame: 0,
            loss,
            psnr: 0.0,
            gaussians: self.net.nodes,
            warmup: true,
            pruned: 0,
        };
        if i >= self.config.iterations {
            let (img_loss, mse, fi) = self.joint_image_step(frames, &mut grad)?;
            report.loss += img_loss;
            report.psnr = psnr_from_mse(mse);
            report.frame = fi;
            report.warmup = false;
        }
        self.adam
            .update(&mut self.net.params, &grad, self.config.lr);
        self.iteration += 1;
        Ok(report)
    }

    /// Renders a frame whose key points come from one forecast step out of
    /// the preceding window, adds the network gradient to `net_grad` and
    /// updates the weight field, D and Gaussian appearance at reduced rates.
    fn joint_image_step(
        &mut self,
        frames: &[FrameSample<f32>],
        net_grad: &mut [f64],
    ) -> Result<(f64, f64, usize)> {
        use rand::Rng as _;
        let w = self.config.arch.window;
        let dt = self.trajectory.dt;
        let earliest = self.trajectory.t0 + w as f64 * dt;
        let eligible: Vec<usize> = (0..frames.len())
            .filter(|&i| frames[i].t >= earliest - 1e-9)
            .collect();
        if eligible.is_empty() {
            return Err(Error::Config(
                "no frame has a full forecast window before it".into(),
            ));
        }
        let fi = eligible[self.rng.random_range(0..eligible.len())];
        let frame = &frames[fi];
        let s = &self.scene;
        let mut window = Vec::with_capacity(self.net.window_len());
        for j in 0..w {
            let t = frame.t - (w - j) as f64 * dt;
            window.extend(s.keypoint_positions_at(t)?.into_iter().map(f64::from));
        }
        let (pred, tape) = self.net.forward(&window)?;
        let (kp_d, kp_tape) = keypoint_motion(&s.base.field, &s.keypoints, frame.t)?;
        let kp = KeyPointMotion {
            t: pred
                .iter()
                .zip(&s.keypoints.mu)
                .map(|(p, m)| (*p - f64::from(*m)) as f32)
                .collect(),
            q: kp_d.q.clone(),
        };
        let g = &s.base.gaussians;
        let (wts, w_tape) = s.weights.forward(&g.mu)?;
        let psi = s.base.field.lifecycle_only(&g.mu, &g.motion, frame.t)?;
        let (motion, b_tape) = blend_deform(&s.neighbors, &wts, &kp, &psi)?;
        let pass = render_loss(&apply_motion(g, &motion), frame, &self.settings)?;
        if !pass.loss.is_finite() {
            return Err(Error::Diverged {
                iteration: self.iteration,
                reason: format!("image loss is {}", pass.loss),
            });
        }
        let (g_set, g_motion) = apply_motion_backward(g, &motion, &pass.grads.splats);
        let (d_w, d_kp) = blend_deform_backward(&s.neighbors, &wts, &kp, &b_tape, &g_motion);
        let d_pred: Vec<f64> = d_kp.t.iter().map(|&v| f64::from(v)).collect();
        self.net.backward(&tape, &d_pred, net_grad)?;
        let mut g_grid = vec![0.0f32; s.weights.grid.num_params()];
        let mut g_wmlp = vec![0.0f32; s.weights.mlp.num_params()];
        s.weights
            .backward(&w_tape, &wts, &d_w, &mut g_grid, &mut g_wmlp)?;
        let mut g_deform = vec![0.0f32; s.base.field.deform.num_params()];
        let d_rot = KeyPointMotion {
            t: vec![0.0; d_kp.t.len()],
            q: d_kp.q,
        };
        keypoint_motion_backward(&s.base.field, &kp_tape, &d_rot, &mut g_deform)?;

        let r = JOINT_BASE_RATES.map(|v| v * self.config.joint_rate_scale);
        let o = &mut self.joint;
        let sc = &mut self.scene;
        o.weight_grid
            .update(&mut sc.weights.grid.params, &g_grid, r[0]);
        o.weight_mlp
            .update(&mut sc.weights.mlp.params, &g_wmlp, r[1]);
        o.deform
            .update(&mut sc.base.field.deform.params, &g_deform, r[2]);
        o.color
            .update(&mut sc.base.gaussians.color, &g_set.color, r[3]);
        o.opacity.update(
            &mut sc.base.gaussians.opacity_logit,
            &g_set.opacity_logit,
            r[4],
        );
        sc.base.gaussians.clamp_colors();
        Ok((pass.loss, pass.mse, fi))
    }

    pub fn run(
        &mut self,
        frames: &[FrameSample<f32>],
        mut log: impl FnMut(&StepReport),
    ) -> Result<()> {
        while !self.is_done() {
            let rep = self.step(frames)?;
            log(&rep);
        }
        Ok(())
    }

    /// The trained predictor. After joint fine-tuning the trajectory is
    /// re-sampled from the updated scene so the seed window matches it.
    pub fn into_model(self) -> Result<ForecastModel> {
        let trajectory = if self.config.joint_iterations > 0 {
            Trajectory::sample(
                &self.scene,
                self.trajectory.t0,
                self.trajectory.t_last(),
                self.trajectory.steps(),
            )?
        } else {
            self.trajectory
        };
        ForecastModel::new(self.scene, self.net, trajectory)
    }

    pub fn model(&self) -> Result<ForecastModel> {
        self.clone().into_model()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new("stage3");
        self.scene.write_checkpoint(&mut ck)?;
        write_forecast(&mut ck, &self.net, &self.trajectory)?;
        ck.put_f64s("stage3.adam.m", &self.adam.m);
        ck.put_f64s("stage3.adam.v", &self.adam.v);
        ck.put_json("stage3.adam", &(self.adam.step, self.adam.skipped))?;
        write_adam_groups(&mut ck, "stage3", &JOINT_GROUPS, &self.joint.groups())?;
        ck.put_json("stage3.config", &self.config)?;
        ck.put_json("stage3.settings", &SettingsMeta::from(&self.settings))?;
        ck.put_json("stage3.iteration", &self.iteration)?;
        ck.put_indices("stage3.order", &self.order);
        ck.put_json("stage3.cursor", &self.cursor)?;
        ck.put_rng("stage3.rng", &save_state(&self.rng));
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_stage(&["stage3"])?;
        let scene = DistilledScene::read_checkpoint(ck)?;
        let (net, trajectory) = read_forecast(ck)?;
        let mut adam = Adam::new(net.params.len());
        adam.m = ck.f64s("stage3.adam.m")?;
        adam.v = ck.f64s("stage3.adam.v")?;
        if adam.m.len() != net.params.len() || adam.v.len() != net.params.len() {
            return Err(Error::Checkpoint(
                "forecast optimizer state does not match the network".into(),
            ));
        }
        (adam.step, adam.skipped) = ck.json("stage3.adam")?;
        let mut joint = JointOptim::new(&scene);
        read_adam_groups(ck, "stage3", &JOINT_GROUPS, &mut joint.groups_mut())?;
        let settings: SettingsMeta = ck.json("stage3.settings")?;
        Ok(Self {
            config: ck.json("stage3.config")?,
            scene,
            settings: settings.into(),
            trajectory,
            net,
            iteration: ck.json("stage3.iteration")?,
            adam,
            joint,
            order: ck.indices("stage3.order")?,
            cursor: ck.json("stage3.cursor")?,
            rng: restore_state(&ck.rng("stage3.rng")?),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ForecastMeta {
    arch: ForecastArch,
    nodes: usize,
    t0: f64,
    dt: f64,
    pos_scale: f64,
    step_scale: f64,
}

fn write_forecast(ck: &mut Checkpoint, net: &ForecastNet<f64>, traj: &Trajectory) -> Result<()> {
    ck.put_f64s("forecast.params", &net.params);
    ck.put_f64s("forecast.adjacency", &net.adjacency);
    ck.put_f64s("forecast.trajectory", &traj.positions);
    ck.put_json(
        "forecast",
        &ForecastMeta {
            arch: net.arch.clone(),
            nodes: net.nodes,
            t0: traj.t0,
            dt: traj.dt,
            pos_scale: net.pos_scale,
            step_scale: net.step_scale,
        },
    )
}

fn read_forecast(ck: &Checkpoint) -> Result<(ForecastNet<f64>, Trajectory)> {
    let meta: ForecastMeta = ck.json("forecast")?;
    let mut net = ForecastNet::from_params(
        meta.arch,
        ck.f64s("forecast.adjacency")?,
        meta.nodes,
        ck.f64s("forecast.params")?,
    )
    .map_err(|e| Error::Checkpoint(format!("forecast network: {e}")))?;
    net.pos_scale = meta.pos_scale;
    net.step_scale = meta.step_scale;
    let traj = Trajectory::new(
        meta.t0,
        meta.dt,
        meta.nodes,
        ck.f64s("forecast.trajectory")?,
    )
    .map_err(|e| Error::Checkpoint(format!("trajectory: {e}")))?;
    Ok((net, traj))
}

/// A distilled scene plus the trained forecaster: renders observed times
/// from the scene and later times from the key-point rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastModel {
    pub scene: DistilledScene,
    pub net: ForecastNet<f64>,
    pub trajectory: Trajectory,
    /// Key-point rotations at the last observed time, held for the future.
    pub last_q: Vec<f32>,
}

impl ForecastModel {
    pub fn new(
        scene: DistilledScene,
        net: ForecastNet<f64>,
        trajectory: Trajectory,
    ) -> Result<Self> {
        if net.nodes != scene.keypoints.len() || trajectory.nodes != net.nodes {
            return Err(Error::Shape(
                "forecaster, trajectory and scene disagree on the key-point count".into(),
            ));
        }
        let last_q = scene.keypoint_motion_at(trajectory.t_last())?.q;
        Ok(Self {
            scene,
            net,
            trajectory,
            last_q,
        })
    }

    pub fn t_last(&self) -> f64 {
        self.trajectory.t_last()
    }

    /// Rollout steps needed to reach `t`.
    pub fn steps_to(&self, t: f64) -> usize {
        ((t - self.t_last()) / self.trajectory.dt - 1e-9)
            .ceil()
            .max(0.0) as usize
    }

    /// Autoregressive rollout from the last observed window, `steps × k × 3`.
    pub fn rollout(&self, steps: usize) -> Result<Vec<f64>> {
        let w = self.net.arch.window;
        let seed = self.trajectory.window(self.trajectory.steps() - w, w);
        self.net.rollout(seed, steps)
    }

    /// Key-point centres at `t`, interpolating linearly between rollout steps.
    pub fn positions_from_rollout(&self, rollout: &[f64], t: f64) -> Vec<f64> {
        let per = 3 * self.net.nodes;
        let x = ((t - self.t_last()) / self.trajectory.dt).max(0.0);
        let (mut j, mut frac) = (x.floor() as usize, x - x.floor());
        if frac < 1e-9 {
            frac = 0.0;
        } else if frac > 1.0 - 1e-9 {
            j += 1;
            frac = 0.0;
        }
        let at = |s: usize| -> &[f64] {
            if s == 0 {
                self.trajectory.frame(self.trajectory.steps() - 1)
            } else {
                &rollout[(s - 1) * per..s * per]
            }
        };
        let a = at(j);
        if frac == 0.0 {
            return a.to_vec();
        }
        let b = at(j + 1);
        a.iter().zip(b).map(|(p, q)| p + frac * (q - p)).collect()
    }

    /// Key-point motion for forecast positions: `T = p − μᵏ`, Q held at its last observed value.
    pub fn motion_for_positions(&self, positions: &[f64]) -> KeyPointMotion<f32> {
        KeyPointMotion {
            t: positions
                .iter()
                .zip(&self.scene.keypoints.mu)
                .map(|(p, m)| (*p - f64::from(*m)) as f32)
                .collect(),
            q: self.last_q.clone(),
        }
    }

    /// Forecast key-point motion at each of `times` (all after the last observation).
    pub fn predict_motion(&self, times: &[f64]) -> Result<Vec<KeyPointMotion<f32>>> {
        let max_steps = times.iter().map(|&t| self.steps_to(t)).max().unwrap_or(0);
        let roll = self.rollout(max_steps)?;
        Ok(times
            .iter()
            .map(|&t| self.motion_for_positions(&self.positions_from_rollout(&roll, t)))
            .collect())
    }

    pub fn render_future(
        &self,
        kp: &KeyPointMotion<f32>,
        t: f64,
        camera: &Camera,
        settings: &RenderSettings,
    ) -> Result<Image<f32>> {
        self.scene.render_with(kp, t, camera, settings)
    }

    /// Renders `t`: through the distilled scene up to the last observation, from the forecast after it.
    pub fn render(&self, t: f64, camera: &Camera, settings: &RenderSettings) -> Result<Image<f32>> {
        if t <= self.t_last() {
            return self.scene.render(t, camera, settings);
        }
        let kp = self.predict_motion(&[t])?.remove(0);
        self.render_future(&kp, t, camera, settings)
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) -> Result<()> {
        self.scene.write_checkpoint(ck)?;
        write_forecast(ck, &self.net, &self.trajectory)
    }

    /// Reads the model from a stage-3 checkpoint (trainer state is ignored).
    pub fn read_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_stage(&["stage3"])?;
        let scene = DistilledScene::read_checkpoint(ck)?;
        let (net, traj) = read_forecast(ck)?;
        Self::new(scene, net, traj)
    }
}
