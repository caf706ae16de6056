use serde::{Deserialize, Serialize};

use super::init::silhouette_points;
use super::{
    annealing_noise, apply_motion, apply_motion_backward, DeformConfig, DeformField, Motion,
};
use crate::error::{Error, Result};
use crate::frame::{distinct_times, render_loss, FrameSample};
use crate::imgbuf::Image;
use crate::io::checkpoint::Checkpoint;
use crate::metrics::psnr_from_mse;
use crate::nn::rng::{normal, restore_state, save_state, seeded, uniform, Rng};
use crate::nn::{Adam, LrSchedule};
use crate::splat::{render, Camera, GaussianSet, RenderSettings, Splat3D};

/// Where the annealing noise enters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    /// One perturbed μ is used both as network input and for rasterisation.
    Shared,
    /// Only the deformation network sees the perturbed μ.
    DeformInput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Rates {
    pub position: f64,
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub color: f64,
    pub opacity: f64,
    pub network: f64,
    pub network_final: f64,
    pub motion: f64,
}

impl Default for Stage1Rates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            scale: 5e-3,
            color: 2.5e-3,
            opacity: 5e-2,
            network: 1e-3,
            network_final: 1e-3,
            motion: 2.5e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub iterations: u64,
    /// Canonical-only iterations before the networks join.
    pub warmup: u64,
    pub num_gaussians: usize,
    /// N_s as a fraction of the bounding-box diagonal.
    pub noise_fraction: f64,
    pub noise_target: NoiseTarget,
    pub deform: DeformConfig,
    pub rates: Stage1Rates,
    pub prune_every: u64,
    pub prune_threshold: f64,
    /// Timestamps sampled for the max-over-time opacity used by pruning.
    pub prune_times: usize,
    pub init_opacity: f64,
    pub init_feature_std: f64,
    /// Random initial centres are kept only if they land on foreground in
    /// at least this fraction of the training views that see them (0 keeps all).
    pub init_silhouette_fraction: f64,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            iterations: 4000,
            warmup: 1000,
            num_gaussians: 2000,
            noise_fraction: 0.1,
            noise_target: NoiseTarget::DeformInput,
            deform: DeformConfig::default(),
            rates: Stage1Rates::default(),
            prune_every: 500,
            prune_threshold: 0.005,
            prune_times: 16,
            init_opacity: 0.1,
            init_feature_std: 0.1,
            init_silhouette_fraction: 0.5,
            seed: 0,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        self.deform.validate()?;
        if self.num_gaussians == 0 {
            return Err(Error::Config("stage 1 needs at least one Gaussian".into()));
        }
        if !(0.0..1.0).contains(&self.init_opacity) || self.init_opacity == 0.0 {
            return Err(Error::Config("initial opacity must lie in (0, 1)".into()));
        }
        if self.noise_fraction < 0.0 {
            return Err(Error::Config("noise fraction must be non-negative".into()));
        }
        Ok(())
    }
}

/// Canonical Gaussians plus the deformation field that animates them.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperCanonicalScene {
    pub gaussians: GaussianSet<f32>,
    pub field: DeformField<f32>,
    /// N_s in world units.
    pub noise_scale: f64,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
}

impl HyperCanonicalScene {
    /// Random Gaussians inside the box (or at the given points), sized by
    /// the mean distance to their three nearest neighbours.
    pub fn initialize(
        config: &Stage1Config,
        bbox_min: [f64; 3],
        bbox_max: [f64; 3],
        frames: &[FrameSample<f32>],
        background: [f64; 3],
        points: Option<&[[f64; 3]]>,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let positions: Vec<[f64; 3]> = match points {
            Some(p) if !p.is_empty() => p.to_vec(),
            Some(_) => return Err(Error::Config("initial point cloud is empty".into())),
            None => silhouette_points(
                if config.init_silhouette_fraction > 0.0 {
                    frames
                } else {
                    &[]
                },
                bbox_min,
                bbox_max,
                background,
                config.num_gaussians,
                config.init_silhouette_fraction,
                rng,
            ),
        };
        let n = positions.len();
        let d = config.deform.feat_dim;
        let spacing = knn_spacing(&positions, 3);
        let logit = (config.init_opacity / (1.0 - config.init_opacity)).ln() as f32;
        let mut set = GaussianSet::empty(d);
        set.mu = positions.iter().flat_map(|p| p.map(|v| v as f32)).collect();
        set.rot = (0..n).flat_map(|_| [1.0f32, 0.0, 0.0, 0.0]).collect();
        set.log_scale = spacing
            .iter()
            .flat_map(|s| [s.max(1e-4).ln() as f32; 3])
            .collect();
        set.color = (0..3 * n).map(|_| uniform::<f32>(rng, 0.3, 0.7)).collect();
        set.opacity_logit = vec![logit; n];
        set.motion = (0..n * d)
            .map(|_| (config.init_feature_std * normal::<f64>(rng)) as f32)
            .collect();
        let field = DeformField::new(config.deform.clone(), rng)?;
        let diag = (0..3)
            .map(|i| (bbox_max[i] - bbox_min[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(Self {
            gaussians: set,
            field,
            noise_scale: config.noise_fraction * diag,
            bbox_min,
            bbox_max,
        })
    }

    /// Motion of every Gaussian at `t` (no noise).
    pub fn motion_at(&self, t: f64) -> Result<Motion<f32>> {
        Ok(self
            .field
            .forward(&self.gaussians.mu, &self.gaussians.motion, t)?
            .motion)
    }

    pub fn splats_at(&self, t: f64) -> Result<Vec<Splat3D<f32>>> {
        Ok(apply_motion(&self.gaussians, &self.motion_at(t)?))
    }

    pub fn render(&self, t: f64, camera: &Camera, settings: &RenderSettings) -> Result<Image<f32>> {
        Ok(render(&self.splats_at(t)?, camera, settings).image)
    }

    /// Rendered opacity `σ · ψ(t)` of every Gaussian.
    pub fn opacity_at(&self, t: f64) -> Result<Vec<f32>> {
        let psi = self
            .field
            .lifecycle_only(&self.gaussians.mu, &self.gaussians.motion, t)?;
        Ok((0..self.gaussians.len())
            .map(|i| self.gaussians.opacity(i) * psi[i])
            .collect())
    }

    /// Deformed centres at `t`, n × 3.
    pub fn positions_at(&self, t: f64) -> Result<Vec<f32>> {
        let m = self.motion_at(t)?;
        Ok(self
            .gaussians
            .mu
            .iter()
            .zip(&m.dmu)
            .map(|(a, b)| a + b)
            .collect())
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) -> Result<()> {
        let g = &self.gaussians;
        ck.put_tensor("gaussians.mu", &g.mu);
        ck.put_tensor("gaussians.rot", &g.rot);
        ck.put_tensor("gaussians.log_scale", &g.log_scale);
        ck.put_tensor("gaussians.color", &g.color);
        ck.put_tensor("gaussians.opacity_logit", &g.opacity_logit);
        ck.put_tensor("gaussians.motion", &g.motion);
        ck.put_tensor("deform.params", &self.field.deform.params);
        ck.put_tensor("opacity_net.params", &self.field.opacity.params);
        ck.put_json(
            "scene",
            &SceneMeta {
                deform: self.field.config.clone(),
                noise_scale: self.noise_scale,
                bbox_min: self.bbox_min,
                bbox_max: self.bbox_max,
                count: g.len(),
            },
        )
    }

    pub fn read_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: SceneMeta = ck.json("scene")?;
        let n = meta.count;
        let d = meta.deform.feat_dim;
        let gaussians = GaussianSet {
            mu: ck.tensor_len("gaussians.mu", 3 * n)?,
            rot: ck.tensor_len("gaussians.rot", 4 * n)?,
            log_scale: ck.tensor_len("gaussians.log_scale", 3 * n)?,
            color: ck.tensor_len("gaussians.color", 3 * n)?,
            opacity_logit: ck.tensor_len("gaussians.opacity_logit", n)?,
            motion: ck.tensor_len("gaussians.motion", d * n)?,
            feat_dim: d,
        };
        let field = DeformField::from_params(
            meta.deform,
            ck.tensor("deform.params")?.to_vec(),
            ck.tensor("opacity_net.params")?.to_vec(),
        )
        .map_err(|e| Error::Checkpoint(format!("network parameters: {e}")))?;
        Ok(Self {
            gaussians,
            field,
            noise_scale: meta.noise_scale,
            bbox_min: meta.bbox_min,
            bbox_max: meta.bbox_max,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SceneMeta {
    deform: DeformConfig,
    noise_scale: f64,
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    count: usize,
}

/// Mean distance from each point to its `k` nearest other points.
fn knn_spacing(points: &[[f64; 3]], k: usize) -> Vec<f64> {
    let n = points.len();
    if n < 2 {
        return vec![0.1; n];
    }
    let k = k.min(n - 1);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = vec![f64::INFINITY; k];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d2 < best[k - 1] {
                    let mut pos = k - 1;
                    while pos > 0 && best[pos - 1] > d2 {
                        best[pos] = best[pos - 1];
                        pos -= 1;
                    }
                    best[pos] = d2;
                }
            }
            best.iter().map(|d| d.sqrt()).sum::<f64>() / k as f64
        })
        .collect()
}

/// Adam state for every stage-1 parameter group.
#[derive(Clone, Debug, PartialEq)]
struct Stage1Optim {
    mu: Adam<f32>,
    rot: Adam<f32>,
    log_scale: Adam<f32>,
    color: Adam<f32>,
    opacity: Adam<f32>,
    motion: Adam<f32>,
    deform: Adam<f32>,
    opacity_net: Adam<f32>,
}

const GROUPS: [&str; 8] = [
    "mu",
    "rot",
    "log_scale",
    "color",
    "opacity",
    "motion",
    "deform",
    "opacity_net",
];

impl Stage1Optim {
    fn new(scene: &HyperCanonicalScene) -> Self {
        let g = &scene.gaussians;
        Self {
            mu: Adam::new(g.mu.len()),
            rot: Adam::new(g.rot.len()),
            log_scale: Adam::new(g.log_scale.len()),
            color: Adam::new(g.color.len()),
            opacity: Adam::new(g.opacity_logit.len()),
            motion: Adam::new(g.motion.len()),
            deform: Adam::new(scene.field.deform.num_params()),
            opacity_net: Adam::new(scene.field.opacity.num_params()),
        }
    }

    fn groups(&self) -> [&Adam<f32>; 8] {
        [
            &self.mu,
            &self.rot,
            &self.log_scale,
            &self.color,
            &self.opacity,
            &self.motion,
            &self.deform,
            &self.opacity_net,
        ]
    }

    fn groups_mut(&mut self) -> [&mut Adam<f32>; 8] {
        [
            &mut self.mu,
            &mut self.rot,
            &mut self.log_scale,
            &mut self.color,
            &mut self.opacity,
            &mut self.motion,
            &mut self.deform,
            &mut self.opacity_net,
        ]
    }

    fn retain(&mut self, keep: &[bool], feat_dim: usize) {
        self.mu.retain_rows(3, keep);
        self.rot.retain_rows(4, keep);
        self.log_scale.retain_rows(3, keep);
        self.color.retain_rows(3, keep);
        self.opacity.retain_rows(1, keep);
        self.motion.retain_rows(feat_dim, keep);
    }

    fn skipped(&self) -> u64 {
        self.groups().iter().map(|a| a.skipped).sum()
    }
}

/// Progress of one optimisation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iteration: u64,
    pub frame: usize,
    pub loss: f64,
    pub psnr: f64,
    pub gaussians: usize,
    pub warmup: bool,
    pub pruned: usize,
}

/// Resumable stage-1 optimisation: scene, optimizer moments, generator
/// state and iteration counter are everything a step depends on.
#[derive(Clone, Debug)]
pub struct Stage1Trainer {
    pub config: Stage1Config,
    pub scene: HyperCanonicalScene,
    pub settings: RenderSettings,
    pub iteration: u64,
    optim: Stage1Optim,
    rng: Rng,
}

impl Stage1Trainer {
    pub fn new(
        config: Stage1Config,
        settings: RenderSettings,
        bbox_min: [f64; 3],
        bbox_max: [f64; 3],
        frames: &[FrameSample<f32>],
        points: Option<&[[f64; 3]]>,
    ) -> Result<Self> {
        let mut rng = seeded(config.seed);
        let scene = HyperCanonicalScene::initialize(
            &config,
            bbox_min,
            bbox_max,
            frames,
            settings.background,
            points,
            &mut rng,
        )?;
        Ok(Self::from_scene(config, settings, scene, rng))
    }

    pub fn from_scene(
        config: Stage1Config,
        settings: RenderSettings,
        scene: HyperCanonicalScene,
        rng: Rng,
    ) -> Self {
        let optim = Stage1Optim::new(&scene);
        Self {
            config,
            scene,
            settings,
            iteration: 0,
            optim,
            rng,
        }
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    pub fn skipped_updates(&self) -> u64 {
        self.optim.skipped()
    }

    /// One optimisation step on a randomly drawn frame.
    pub fn step(&mut self, frames: &[FrameSample<f32>]) -> Result<StepReport> {
        if frames.is_empty() {
            return Err(Error::Config("stage 1 needs at least one frame".into()));
        }
        use rand::Rng as _;
        let i = self.iteration;
        let fi = self.rng.random_range(0..frames.len());
        let frame = &frames[fi];
        let warmup = i < self.config.warmup;
        let set = &self.scene.gaussians;
        let n = set.len();

        let (motion, deform_out) = if warmup {
            (Motion::identity(n), None)
        } else {
            let noise: Vec<f32> = annealing_noise(i, self.scene.noise_scale, n, &mut self.rng);
            let mu_in: Vec<f32> = set.mu.iter().zip(&noise).map(|(a, b)| a + b).collect();
            let out = self.scene.field.forward(&mu_in, &set.motion, frame.t)?;
            let mut motion = out.motion.clone();
            if self.config.noise_target == NoiseTarget::Shared {
                for (d, e) in motion.dmu.iter_mut().zip(&noise) {
                    *d += *e;
                }
            }
            (motion, Some(out))
        };
        let splats = apply_motion(set, &motion);
        let pass = render_loss(&splats, frame, &self.settings)?;
        if !pass.loss.is_finite() {
            return Err(Error::Diverged {
                iteration: i,
                reason: format!("loss is {} on frame {fi}", pass.loss),
            });
        }
        let (mut g_set, g_motion) = apply_motion_backward(set, &motion, &pass.grads.splats);

        let mut g_deform = Vec::new();
        let mut g_opacity_net = Vec::new();
        if let Some(out) = &deform_out {
            g_deform = vec![0.0f32; self.scene.field.deform.num_params()];
            g_opacity_net = vec![0.0f32; self.scene.field.opacity.num_params()];
            let (_, d_feat) =
                self.scene
                    .field
                    .backward(out, &g_motion, &mut g_deform, &mut g_opacity_net)?;
            g_set.motion = d_feat;
        }

        let total = self.config.iterations.max(1);
        let r = &self.config.rates;
        let pos_lr = LrSchedule::ExpDecay {
            start: r.position,
            end: r.position_final,
            steps: total,
        }
        .at(i);
        let net_lr = LrSchedule::ExpDecay {
            start: r.network,
            end: r.network_final,
            steps: total,
        }
        .at(i);
        let scene = &mut self.scene;
        let o = &mut self.optim;
        o.mu.update(&mut scene.gaussians.mu, &g_set.mu, pos_lr);
        o.rot
            .update(&mut scene.gaussians.rot, &g_set.rot, r.rotation);
        o.log_scale
            .update(&mut scene.gaussians.log_scale, &g_set.log_scale, r.scale);
        o.color
            .update(&mut scene.gaussians.color, &g_set.color, r.color);
        o.opacity.update(
            &mut scene.gaussians.opacity_logit,
            &g_set.opacity_logit,
            r.opacity,
        );
        if deform_out.is_some() {
            o.motion
                .update(&mut scene.gaussians.motion, &g_set.motion, r.motion);
            o.deform
                .update(&mut scene.field.deform.params, &g_deform, net_lr);
            if scene.field.config.lifecycle {
                o.opacity_net
                    .update(&mut scene.field.opacity.params, &g_opacity_net, net_lr);
            }
        }
        scene.gaussians.normalize_rotations();
        scene.gaussians.clamp_colors();
        self.iteration += 1;

        let mut pruned = 0;
        if self.config.prune_every > 0
            && self.iteration.is_multiple_of(self.config.prune_every)
            && !self.is_done()
        {
            pruned = self.prune(frames)?;
        }
        Ok(StepReport {
            iteration: i,
            frame: fi,
            loss: pass.loss,
            psnr: psnr_from_mse(pass.mse),
            gaussians: self.scene.gaussians.len(),
            warmup,
            pruned,
        })
    }

    /// Removes Gaussians whose rendered opacity stays below the threshold at
    /// every sampled timestamp. Returns how many were removed.
    pub fn prune(&mut self, frames: &[FrameSample<f32>]) -> Result<usize> {
        let times = sample_times(&distinct_times(frames), self.config.prune_times);
        let n = self.scene.gaussians.len();
        let mut max_op = vec![0.0f32; n];
        let in_warmup = self.iteration <= self.config.warmup;
        for &t in &times {
            let op = if in_warmup {
                (0..n).map(|i| self.scene.gaussians.opacity(i)).collect()
            } else {
                self.scene.opacity_at(t)?
            };
            for (m, o) in max_op.iter_mut().zip(op) {
                *m = m.max(o);
            }
        }
        let keep: Vec<bool> = max_op
            .iter()
            .map(|&o| o as f64 >= self.config.prune_threshold)
            .collect();
        let kept = keep.iter().filter(|k| **k).count();
        if kept == n || kept == 0 {
            return Ok(0);
        }
        self.scene.gaussians.retain(&keep);
        self.optim.retain(&keep, self.scene.gaussians.feat_dim);
        Ok(n - kept)
    }

    /// Runs until the configured iteration count, calling `log` after each step.
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
        let mut ck = Checkpoint::new("stage1");
        self.scene.write_checkpoint(&mut ck)?;
        write_adam_groups(&mut ck, "stage1", &GROUPS, &self.optim.groups())?;
        ck.put_json("stage1.config", &self.config)?;
        ck.put_json("stage1.settings", &SettingsMeta::from(&self.settings))?;
        ck.put_json("stage1.iteration", &self.iteration)?;
        ck.put_rng("stage1.rng", &save_state(&self.rng));
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_stage(&["stage1"])?;
        let scene = HyperCanonicalScene::read_checkpoint(ck)?;
        let config: Stage1Config = ck.json("stage1.config")?;
        let settings: SettingsMeta = ck.json("stage1.settings")?;
        let mut optim = Stage1Optim::new(&scene);
        read_adam_groups(ck, "stage1", &GROUPS, &mut optim.groups_mut())?;
        Ok(Self {
            config,
            scene,
            settings: settings.into(),
            iteration: ck.json("stage1.iteration")?,
            optim,
            rng: restore_state(&ck.rng("stage1.rng")?),
        })
    }
}

/// Up to `count` evenly spaced entries of `times`.
pub(crate) fn sample_times(times: &[f64], count: usize) -> Vec<f64> {
    if times.len() <= count || count == 0 {
        return times.to_vec();
    }
    (0..count)
        .map(|k| times[k * (times.len() - 1) / (count - 1).max(1)])
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct SettingsMeta {
    background: [f64; 3],
    cutoff_sigma: Option<f64>,
    min_alpha: f64,
    tile_size: usize,
}

impl From<&RenderSettings> for SettingsMeta {
    fn from(s: &RenderSettings) -> Self {
        Self {
            background: s.background,
            cutoff_sigma: s.cutoff_sigma.is_finite().then_some(s.cutoff_sigma),
            min_alpha: s.min_alpha,
            tile_size: s.tile_size,
        }
    }
}

impl From<SettingsMeta> for RenderSettings {
    fn from(s: SettingsMeta) -> Self {
        Self {
            background: s.background,
            cutoff_sigma: s.cutoff_sigma.unwrap_or(f64::INFINITY),
            min_alpha: s.min_alpha,
            tile_size: s.tile_size,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    step: u64,
    skipped: u64,
}

pub(crate) fn write_adam_groups(
    ck: &mut Checkpoint,
    prefix: &str,
    names: &[&str],
    groups: &[&Adam<f32>],
) -> Result<()> {
    for (name, a) in names.iter().zip(groups) {
        ck.put_tensor(&format!("{prefix}.adam.{name}.m"), &a.m);
        ck.put_tensor(&format!("{prefix}.adam.{name}.v"), &a.v);
        ck.put_json(
            &format!("{prefix}.adam.{name}"),
            &AdamMeta {
                step: a.step,
                skipped: a.skipped,
            },
        )?;
    }
    Ok(())
}

pub(crate) fn read_adam_groups(
    ck: &Checkpoint,
    prefix: &str,
    names: &[&str],
    groups: &mut [&mut Adam<f32>],
) -> Result<()> {
    for (name, a) in names.iter().zip(groups.iter_mut()) {
        let len = a.len();
        a.m = ck.tensor_len(&format!("{prefix}.adam.{name}.m"), len)?;
        a.v = ck.tensor_len(&format!("{prefix}.adam.{name}.v"), len)?;
        let meta: AdamMeta = ck.json(&format!("{prefix}.adam.{name}"))?;
        a.step = meta.step;
        a.skipped = meta.skipped;
    }
    Ok(())
}
