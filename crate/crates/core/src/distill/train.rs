use std::path::Path;

use serde::{Deserialize, Serialize};

use super::blend::{blend_deform, blend_deform_backward};
use super::keypoints::{
    adaptive_increase, assign_neighbors, init_keypoints, keypoint_motion, keypoint_motion_backward,
    HyperMetric, KeyPointMotion, KeyPointSet,
};
use super::weights::{WeightField, WeightFieldConfig};
use crate::deform::{
    apply_motion, apply_motion_backward, read_adam_groups, write_adam_groups, HyperCanonicalScene,
    Motion, SettingsMeta, StepReport,
};
use crate::error::{Error, Result};
use crate::frame::{render_loss, FrameSample};
use crate::imgbuf::Image;
use crate::io::checkpoint::Checkpoint;
use crate::metrics::psnr_from_mse;
use crate::nn::rng::{restore_state, save_state, seeded, Rng};
use crate::nn::Adam;
use crate::splat::{render, Camera, RenderSettings, Splat3D};

/// Space in which each Gaussian looks up its nearest key points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSpace {
    /// Position and motion feature.
    Hyper,
    /// Position only.
    Spatial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Rates {
    pub weight_grid: f64,
    pub weight_mlp: f64,
    pub network: f64,
    pub keypoint_position: f64,
    pub keypoint_motion: f64,
    /// Canonical Gaussian rates, used only in the joint phase.
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub color: f64,
    pub opacity: f64,
}

impl Default for Stage2Rates {
    fn default() -> Self {
        Self {
            weight_grid: 1e-2,
            weight_mlp: 1e-3,
            network: 1e-4,
            keypoint_position: 1.6e-4,
            keypoint_motion: 2.5e-3,
            position: 1.6e-6,
            rotation: 1e-3,
            scale: 5e-3,
            color: 2.5e-3,
            opacity: 5e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    /// Iterations with the canonical Gaussians frozen.
    pub phase1: u64,
    /// Iterations training everything jointly.
    pub phase2: u64,
    pub k_init: usize,
    pub n_max: usize,
    pub weights: WeightFieldConfig,
    pub neighbor_space: NeighborSpace,
    /// λ_m in the hyper metric, applied after scaling features to unit RMS norm.
    pub lambda_m: f64,
    pub increase_every: u64,
    /// Mean screen-space gradient norm (normalised device units) above which
    /// a Gaussian asks for a key point.
    pub grad_threshold: f64,
    pub fine_tune_deform: bool,
    pub rates: Stage2Rates,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            phase1: 2000,
            phase2: 2000,
            k_init: 50,
            n_max: 100,
            weights: WeightFieldConfig::default(),
            neighbor_space: NeighborSpace::Hyper,
            lambda_m: 1.0,
            increase_every: 500,
            grad_threshold: 2e-4,
            fine_tune_deform: true,
            rates: Stage2Rates::default(),
            seed: 0,
        }
    }
}

impl Stage2Config {
    pub fn iterations(&self) -> u64 {
        self.phase1 + self.phase2
    }

    pub fn validate(&self, gaussians: usize) -> Result<()> {
        if self.k_init == 0 || self.k_init > gaussians {
            return Err(Error::Config(format!(
                "k_init = {} but the scene has {gaussians} Gaussians",
                self.k_init
            )));
        }
        if self.n_max < self.k_init {
            return Err(Error::Config(format!(
                "N_max = {} is below k_init = {}",
                self.n_max, self.k_init
            )));
        }
        if self.weights.n_near == 0 || self.weights.n_near > self.k_init {
            return Err(Error::Config(format!(
                "N_near = {} must lie in 1..={}",
                self.weights.n_near, self.k_init
            )));
        }
        Ok(())
    }

    fn metric(&self, scene: &HyperCanonicalScene) -> HyperMetric {
        match self.neighbor_space {
            NeighborSpace::Hyper => HyperMetric::for_scene(&scene.gaussians, self.lambda_m),
            NeighborSpace::Spatial => HyperMetric::spatial(),
        }
    }
}

/// Stage-1 scene whose motion is driven by key points through the weight field.
#[derive(Clone, Debug, PartialEq)]
pub struct DistilledScene {
    pub base: HyperCanonicalScene,
    pub keypoints: KeyPointSet<f32>,
    pub weights: WeightField<f32>,
    /// n × n_near key-point indices per Gaussian.
    pub neighbors: Vec<usize>,
    /// Metric used for neighbour lookup.
    pub metric: HyperMetric,
}

impl DistilledScene {
    /// Key points by k-means in hyper space, neighbour lists under the
    /// configured metric, and a freshly initialised weight field.
    pub fn initialize(
        base: HyperCanonicalScene,
        config: &Stage2Config,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate(base.gaussians.len())?;
        let cluster_metric = HyperMetric::for_scene(&base.gaussians, config.lambda_m);
        let keypoints = init_keypoints(&base.gaussians, &cluster_metric, config.k_init, rng)?;
        let metric = config.metric(&base);
        let neighbors =
            assign_neighbors(&base.gaussians, &keypoints, &metric, config.weights.n_near)?;
        let weights = WeightField::new(config.weights.clone(), base.bbox_min, base.bbox_max, rng)?;
        Ok(Self {
            base,
            keypoints,
            weights,
            neighbors,
            metric,
        })
    }

    pub fn reassign(&mut self) -> Result<()> {
        self.neighbors = assign_neighbors(
            &self.base.gaussians,
            &self.keypoints,
            &self.metric,
            self.weights.n_near(),
        )?;
        Ok(())
    }

    pub fn keypoint_motion_at(&self, t: f64) -> Result<KeyPointMotion<f32>> {
        Ok(keypoint_motion(&self.base.field, &self.keypoints, t)?.0)
    }

    /// Key-point centres `μᵏ + T(t)`, k × 3.
    pub fn keypoint_positions_at(&self, t: f64) -> Result<Vec<f32>> {
        let m = self.keypoint_motion_at(t)?;
        Ok(self
            .keypoints
            .mu
            .iter()
            .zip(&m.t)
            .map(|(a, b)| a + b)
            .collect())
    }

    /// Gaussian motion blended from the given key-point motion, with the lifecycle at `t`.
    pub fn motion_from(&self, kp: &KeyPointMotion<f32>, t: f64) -> Result<Motion<f32>> {
        let g = &self.base.gaussians;
        let psi = self.base.field.lifecycle_only(&g.mu, &g.motion, t)?;
        let w = self.weights.infer(&g.mu)?;
        Ok(blend_deform(&self.neighbors, &w, kp, &psi)?.0)
    }

    pub fn motion_at(&self, t: f64) -> Result<Motion<f32>> {
        self.motion_from(&self.keypoint_motion_at(t)?, t)
    }

    pub fn splats_at(&self, t: f64) -> Result<Vec<Splat3D<f32>>> {
        Ok(apply_motion(&self.base.gaussians, &self.motion_at(t)?))
    }

    pub fn render(&self, t: f64, camera: &Camera, settings: &RenderSettings) -> Result<Image<f32>> {
        Ok(render(&self.splats_at(t)?, camera, settings).image)
    }

    /// Renders with key-point motion supplied from outside (e.g. a forecast).
    pub fn render_with(
        &self,
        kp: &KeyPointMotion<f32>,
        t: f64,
        camera: &Camera,
        settings: &RenderSettings,
    ) -> Result<Image<f32>> {
        let m = self.motion_from(kp, t)?;
        Ok(render(&apply_motion(&self.base.gaussians, &m), camera, settings).image)
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) -> Result<()> {
        self.base.write_checkpoint(ck)?;
        ck.put_tensor("keypoints.mu", &self.keypoints.mu);
        ck.put_tensor("keypoints.motion", &self.keypoints.motion);
        ck.put_tensor("weights.grid", &self.weights.grid.params);
        ck.put_tensor("weights.mlp", &self.weights.mlp.params);
        ck.put_indices("neighbors", &self.neighbors);
        ck.put_json(
            "distill",
            &DistillMeta {
                weights: self.weights.config.clone(),
                metric: self.metric,
                keypoints: self.keypoints.len(),
            },
        )
    }

    pub fn read_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let base = HyperCanonicalScene::read_checkpoint(ck)?;
        let meta: DistillMeta = ck.json("distill")?;
        let d = base.gaussians.feat_dim;
        let k = meta.keypoints;
        let keypoints = KeyPointSet::new(
            ck.tensor_len("keypoints.mu", 3 * k)?,
            ck.tensor_len("keypoints.motion", k * d)?,
            d,
        )?;
        let weights = WeightField::from_params(
            meta.weights,
            base.bbox_min,
            base.bbox_max,
            ck.tensor("weights.grid")?.to_vec(),
            ck.tensor("weights.mlp")?.to_vec(),
        )
        .map_err(|e| Error::Checkpoint(format!("weight field: {e}")))?;
        let neighbors = ck.indices("neighbors")?;
        if neighbors.len() != base.gaussians.len() * weights.n_near()
            || neighbors.iter().any(|&i| i >= k)
        {
            return Err(Error::Checkpoint(
                "neighbour lists do not match the scene".into(),
            ));
        }
        Ok(Self {
            base,
            keypoints,
            weights,
            neighbors,
            metric: meta.metric,
        })
    }

    /// Writes, for each key point, the canonical centres of the Gaussians
    /// listing it as a neighbour, as an ASCII PLY point cloud with
    /// `keypoint` and `rank` (position in the neighbour list) properties.
    pub fn export_influence_ply(&self, path: &Path) -> Result<()> {
        use std::fmt::Write as _;
        let nn = self.weights.n_near();
        let g = &self.base.gaussians;
        let mut body = String::new();
        let mut count = 0;
        for k in 0..self.keypoints.len() {
            for i in 0..g.len() {
                if let Some(rank) = self.neighbors[i * nn..(i + 1) * nn]
                    .iter()
                    .position(|&j| j == k)
                {
                    let p = g.mu3(i);
                    writeln!(body, "{} {} {} {k} {rank}", p[0], p[1], p[2]).unwrap();
                    count += 1;
                }
            }
        }
        let header = format!(
            "ply\nformat ascii 1.0\nelement vertex {count}\nproperty float x\nproperty float y\nproperty float z\nproperty int keypoint\nproperty int rank\nend_header\n"
        );
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, header + &body)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct DistillMeta {
    weights: WeightFieldConfig,
    metric: HyperMetric,
    keypoints: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Stage2Optim {
    weight_grid: Adam<f32>,
    weight_mlp: Adam<f32>,
    deform: Adam<f32>,
    kp_mu: Adam<f32>,
    kp_motion: Adam<f32>,
    mu: Adam<f32>,
    rot: Adam<f32>,
    log_scale: Adam<f32>,
    color: Adam<f32>,
    opacity: Adam<f32>,
}

const GROUPS: [&str; 10] = [
    "weight_grid",
    "weight_mlp",
    "deform",
    "kp_mu",
    "kp_motion",
    "mu",
    "rot",
    "log_scale",
    "color",
    "opacity",
];

impl Stage2Optim {
    fn new(s: &DistilledScene) -> Self {
        let g = &s.base.gaussians;
        Self {
            weight_grid: Adam::new(s.weights.grid.num_params()),
            weight_mlp: Adam::new(s.weights.mlp.num_params()),
            deform: Adam::new(s.base.field.deform.num_params()),
            kp_mu: Adam::new(s.keypoints.mu.len()),
            kp_motion: Adam::new(s.keypoints.motion.len()),
            mu: Adam::new(g.mu.len()),
            rot: Adam::new(g.rot.len()),
            log_scale: Adam::new(g.log_scale.len()),
            color: Adam::new(g.color.len()),
            opacity: Adam::new(g.opacity_logit.len()),
        }
    }

    fn groups(&self) -> [&Adam<f32>; 10] {
        [
            &self.weight_grid,
            &self.weight_mlp,
            &self.deform,
            &self.kp_mu,
            &self.kp_motion,
            &self.mu,
            &self.rot,
            &self.log_scale,
            &self.color,
            &self.opacity,
        ]
    }

    fn groups_mut(&mut self) -> [&mut Adam<f32>; 10] {
        [
            &mut self.weight_grid,
            &mut self.weight_mlp,
            &mut self.deform,
            &mut self.kp_mu,
            &mut self.kp_motion,
            &mut self.mu,
            &mut self.rot,
            &mut self.log_scale,
            &mut self.color,
            &mut self.opacity,
        ]
    }
}

/// Resumable stage-2 optimisation.
#[derive(Clone, Debug)]
pub struct Stage2Trainer {
    pub config: Stage2Config,
    pub scene: DistilledScene,
    pub settings: RenderSettings,
    pub iteration: u64,
    /// Summed screen-space gradient norm per Gaussian since the last key-point increase.
    grad_sum: Vec<f64>,
    grad_count: Vec<f64>,
    optim: Stage2Optim,
    rng: Rng,
}

impl Stage2Trainer {
    pub fn new(
        config: Stage2Config,
        settings: RenderSettings,
        base: HyperCanonicalScene,
    ) -> Result<Self> {
        let mut rng = seeded(config.seed);
        let scene = DistilledScene::initialize(base, &config, &mut rng)?;
        let n = scene.base.gaussians.len();
        let optim = Stage2Optim::new(&scene);
        Ok(Self {
            config,
            scene,
            settings,
            iteration: 0,
            grad_sum: vec![0.0; n],
            grad_count: vec![0.0; n],
            optim,
            rng,
        })
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations()
    }

    pub fn skipped_updates(&self) -> u64 {
        self.optim.groups().iter().map(|a| a.skipped).sum()
    }

    /// Mean screen-space gradient norm per Gaussian over the current window.
    pub fn mean_grad_norm(&self) -> Vec<f64> {
        self.grad_sum
            .iter()
            .zip(&self.grad_count)
            .map(|(s, c)| if *c > 0.0 { s / c } else { 0.0 })
            .collect()
    }

    pub fn step(&mut self, frames: &[FrameSample<f32>]) -> Result<StepReport> {
        if frames.is_empty() {
            return Err(Error::Config("stage 2 needs at least one frame".into()));
        }
        use rand::Rng as _;
        let i = self.iteration;
        let fi = self.rng.random_range(0..frames.len());
        let frame = &frames[fi];
        let joint = i >= self.config.phase1;
        let s = &self.scene;
        let g = &s.base.gaussians;

        let (kp, kp_tape) = keypoint_motion(&s.base.field, &s.keypoints, frame.t)?;
        let (w, w_tape) = s.weights.forward(&g.mu)?;
        let psi = s.base.field.lifecycle_only(&g.mu, &g.motion, frame.t)?;
        let (motion, b_tape) = blend_deform(&s.neighbors, &w, &kp, &psi)?;
        let splats = apply_motion(g, &motion);
        let pass = render_loss(&splats, frame, &self.settings)?;
        if !pass.loss.is_finite() {
            return Err(Error::Diverged {
                iteration: i,
                reason: format!("loss is {} on frame {fi}", pass.loss),
            });
        }
        if !joint {
            let ndc = 0.5 * frame.camera.width.max(frame.camera.height) as f64;
            for (j, &vis) in pass.grads.visible.iter().enumerate() {
                if vis {
                    self.grad_sum[j] += pass.grads.screen_grad_norm[j] as f64 * ndc;
                    self.grad_count[j] += 1.0;
                }
            }
        }
        let (g_set, g_motion) = apply_motion_backward(g, &motion, &pass.grads.splats);
        let (d_w, d_kp) = blend_deform_backward(&s.neighbors, &w, &kp, &b_tape, &g_motion);
        let mut g_grid = vec![0.0f32; s.weights.grid.num_params()];
        let mut g_wmlp = vec![0.0f32; s.weights.mlp.num_params()];
        s.weights
            .backward(&w_tape, &w, &d_w, &mut g_grid, &mut g_wmlp)?;
        let mut g_deform = vec![0.0f32; s.base.field.deform.num_params()];
        let (g_kp_mu, g_kp_m) =
            keypoint_motion_backward(&s.base.field, &kp_tape, &d_kp, &mut g_deform)?;

        let r = &self.config.rates;
        let o = &mut self.optim;
        let scene = &mut self.scene;
        o.weight_grid
            .update(&mut scene.weights.grid.params, &g_grid, r.weight_grid);
        o.weight_mlp
            .update(&mut scene.weights.mlp.params, &g_wmlp, r.weight_mlp);
        if self.config.fine_tune_deform {
            o.deform
                .update(&mut scene.base.field.deform.params, &g_deform, r.network);
        }
        o.kp_mu
            .update(&mut scene.keypoints.mu, &g_kp_mu, r.keypoint_position);
        o.kp_motion
            .update(&mut scene.keypoints.motion, &g_kp_m, r.keypoint_motion);
        if joint {
            let gs = &mut scene.base.gaussians;
            o.mu.update(&mut gs.mu, &g_set.mu, r.position);
            o.rot.update(&mut gs.rot, &g_set.rot, r.rotation);
            o.log_scale
                .update(&mut gs.log_scale, &g_set.log_scale, r.scale);
            o.color.update(&mut gs.color, &g_set.color, r.color);
            o.opacity
                .update(&mut gs.opacity_logit, &g_set.opacity_logit, r.opacity);
            gs.normalize_rotations();
            gs.clamp_colors();
        }
        self.iteration += 1;

        let it = self.iteration;
        if !joint
            && self.config.increase_every > 0
            && it.is_multiple_of(self.config.increase_every)
            && it < self.config.phase1
        {
            self.increase_keypoints()?;
        }
        Ok(StepReport {
            iteration: i,
            frame: fi,
            loss: pass.loss,
            psnr: psnr_from_mse(pass.mse),
            gaussians: self.scene.keypoints.len(),
            warmup: !joint,
            pruned: 0,
        })
    }

    /// Adds key points where the mean gradient norm exceeds the threshold,
    /// re-assigns neighbours and restarts the gradient window. Returns how many were added.
    pub fn increase_keypoints(&mut self) -> Result<usize> {
        let norms = self.mean_grad_norm();
        let added = adaptive_increase(
            &self.scene.base.gaussians,
            &mut self.scene.keypoints,
            &norms,
            self.config.grad_threshold,
            self.config.n_max,
        )?;
        if added > 0 {
            let d = self.scene.keypoints.feat_dim;
            self.optim.kp_mu.grow(3 * added);
            self.optim.kp_motion.grow(d * added);
            self.scene.reassign()?;
        }
        self.grad_sum.iter_mut().for_each(|v| *v = 0.0);
        self.grad_count.iter_mut().for_each(|v| *v = 0.0);
        Ok(added)
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

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new("stage2");
        self.scene.write_checkpoint(&mut ck)?;
        write_adam_groups(&mut ck, "stage2", &GROUPS, &self.optim.groups())?;
        ck.put_json("stage2.config", &self.config)?;
        ck.put_json("stage2.settings", &SettingsMeta::from(&self.settings))?;
        ck.put_json("stage2.iteration", &self.iteration)?;
        ck.put_f64s("stage2.grad_sum", &self.grad_sum);
        ck.put_f64s("stage2.grad_count", &self.grad_count);
        ck.put_rng("stage2.rng", &save_state(&self.rng));
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_stage(&["stage2"])?;
        let scene = DistilledScene::read_checkpoint(ck)?;
        let settings: SettingsMeta = ck.json("stage2.settings")?;
        let mut optim = Stage2Optim::new(&scene);
        read_adam_groups(ck, "stage2", &GROUPS, &mut optim.groups_mut())?;
        let n = scene.base.gaussians.len();
        let grad_sum = ck.f64s("stage2.grad_sum")?;
        let grad_count = ck.f64s("stage2.grad_count")?;
        if grad_sum.len() != n || grad_count.len() != n {
            return Err(Error::Checkpoint(
                "gradient accumulators do not match the scene".into(),
            ));
        }
        Ok(Self {
            config: ck.json("stage2.config")?,
            scene,
            settings: settings.into(),
            iteration: ck.json("stage2.iteration")?,
            grad_sum,
            grad_count,
            optim,
            rng: restore_state(&ck.rng("stage2.rng")?),
        })
    }
}
