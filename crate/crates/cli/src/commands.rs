use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use splatcast::deform::{Stage1Trainer, StepReport};
use splatcast::distill::Stage2Trainer;
use splatcast::eval::{
    evaluate_freeze, evaluate_model, evaluate_time_extrapolation, split_frames, MetricReport,
    Record, SceneModel, Split,
};
use splatcast::forecast::{write_point_tracks, Stage3Trainer};
use splatcast::frame::FrameSample;
use splatcast::io::checkpoint::Checkpoint;
use splatcast::io::manifest::{load_frames, DatasetManifest};
use splatcast::io::png::write_png;
use splatcast::io::synthetic::{generate_synthetic, TEST_MANIFEST, TRAIN_MANIFEST};
use splatcast::splat::Camera;

use crate::config::RunConfig;
use crate::{Baseline, Cli, Command, SplitArg, TrainArgs, Views};

struct Ctx {
    cfg: RunConfig,
    data: Option<PathBuf>,
    run: PathBuf,
    out: Box<dyn Write>,
    start: Instant,
}

impl Ctx {
    fn emit(&mut self, rec: &Record) -> Result<()> {
        writeln!(self.out, "{}", rec.to_line())?;
        Ok(())
    }

    fn data_dir(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| anyhow!("no dataset directory: pass --data or set paths.data"))
    }

    fn manifest(&self, test: bool) -> Result<(DatasetManifest, Vec<FrameSample<f32>>)> {
        let path = self
            .data_dir()?
            .join(if test { TEST_MANIFEST } else { TRAIN_MANIFEST });
        load_frames(&path).with_context(|| format!("loading {}", path.display()))
    }

    fn views(&self, views: Views) -> Result<(DatasetManifest, Vec<FrameSample<f32>>)> {
        match views {
            Views::Train => self.manifest(false),
            Views::Test => self.manifest(true),
            Views::Both => {
                let (m, mut a) = self.manifest(false)?;
                a.extend(self.manifest(true)?.1);
                Ok((m, a))
            }
        }
    }

    fn checkpoint_path(&self, explicit: Option<&Path>, stage: u8) -> PathBuf {
        explicit
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.run.join(format!("stage{stage}.ckp")))
    }

    fn finish(&mut self, command: &str, iterations: Vec<(String, u64)>) -> Result<()> {
        let rec = Record::Run {
            command: command.to_string(),
            wall_clock_s: self.start.elapsed().as_secs_f64(),
            iterations: iterations.into_iter().collect(),
        };
        self.emit(&rec)?;
        self.out.flush()?;
        Ok(())
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        bail!("checkpoint {} does not exist", path.display());
    }
    Ok(Checkpoint::load(path)?)
}

fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    ck.save(path)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    cfg.deterministic |= g.deterministic;
    let threads = if cfg.deterministic { 1 } else { cfg.threads };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("starting the thread pool")?;
    let out: Box<dyn Write> = match &g.records {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout()),
    };
    let data = g.data.or_else(|| cfg.paths.data.clone());
    let run = g
        .run
        .or_else(|| cfg.paths.run.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut ctx = Ctx {
        cfg,
        data,
        run,
        out,
        start: Instant::now(),
    };
    match cli.command {
        Command::Generate { generator } => generate(&mut ctx, generator),
        Command::Train1(a) => train(&mut ctx, 1, a),
        Command::Train2(a) => train(&mut ctx, 2, a),
        Command::Train3(a) => train(&mut ctx, 3, a),
        Command::Render {
            checkpoint,
            views,
            time,
            out,
        } => render(&mut ctx, checkpoint, views, time, out),
        Command::Predict {
            checkpoint,
            horizon,
            frames,
            views,
            camera,
            out,
        } => predict(&mut ctx, checkpoint, horizon, frames, views, camera, out),
        Command::Eval {
            checkpoint,
            views,
            split,
            future_split,
            compare,
            stage1,
        } => eval(
            &mut ctx,
            checkpoint,
            views,
            split,
            future_split,
            compare,
            stage1,
        ),
    }
}

fn generate(ctx: &mut Ctx, generator: Option<String>) -> Result<()> {
    let mut spec = ctx.cfg.generate.clone();
    if let Some(g) = generator {
        spec.generator = g.parse()?;
    }
    let dir = ctx.data_dir()?.to_path_buf();
    let (gt, paths) = generate_synthetic(&spec, &dir)?;
    eprintln!(
        "wrote {} Gaussians' ground truth and both manifests to {}",
        gt.len(),
        dir.display()
    );
    for p in [&paths.train, &paths.test, &paths.ground_truth] {
        ctx.emit(&Record::Output {
            path: p.display().to_string(),
            t: 0.0,
        })?;
    }
    ctx.finish("generate", Vec::new())
}

/// The three trainers driven by one loop.
trait Trainer {
    fn done(&self) -> bool;
    fn step(&mut self, frames: &[FrameSample<f32>]) -> splatcast::Result<StepReport>;
    fn checkpoint(&self) -> splatcast::Result<Checkpoint>;
}

macro_rules! impl_trainer {
    ($t:ty) => {
        impl Trainer for $t {
            fn done(&self) -> bool {
                self.is_done()
            }
            fn step(&mut self, frames: &[FrameSample<f32>]) -> splatcast::Result<StepReport> {
                <$t>::step(self, frames)
            }
            fn checkpoint(&self) -> splatcast::Result<Checkpoint> {
                self.to_checkpoint()
            }
        }
    };
}

impl_trainer!(Stage1Trainer);
impl_trainer!(Stage2Trainer);
impl_trainer!(Stage3Trainer);

fn train_loop(
    ctx: &mut Ctx,
    stage: u8,
    tr: &mut dyn Trainer,
    frames: &[FrameSample<f32>],
    out: &Path,
) -> Result<()> {
    let (log_every, save_every) = (ctx.cfg.log_every.max(1), ctx.cfg.save_every);
    while !tr.done() {
        let r = tr.step(frames)?;
        let it = r.iteration + 1;
        if it % log_every == 0 {
            eprintln!(
                "stage {stage} iteration {it}: loss {:.5} psnr {:.2} count {}",
                r.loss, r.psnr, r.gaussians
            );
            ctx.emit(&Record::Step {
                stage,
                iteration: it,
                loss: r.loss,
                psnr: r.psnr,
                count: r.gaussians,
            })?;
        }
        if save_every > 0 && it % save_every == 0 {
            save_checkpoint(&tr.checkpoint()?, out)?;
        }
    }
    save_checkpoint(&tr.checkpoint()?, out)?;
    eprintln!("saved {}", out.display());
    ctx.emit(&Record::Output {
        path: out.display().to_string(),
        t: 0.0,
    })?;
    Ok(())
}

fn train(ctx: &mut Ctx, stage: u8, a: TrainArgs) -> Result<()> {
    let (m, mut frames) = ctx.manifest(false)?;
    if a.future_split {
        let cutoff = ctx.cfg.future_cutoff;
        frames = split_frames(&frames, Split::Observed, cutoff);
    }
    if frames.is_empty() {
        bail!("no training frames left after the split");
    }
    let settings = ctx.cfg.render.settings(m.background());
    let out = ctx.checkpoint_path(a.out.as_deref(), stage);
    let resume = a.resume.as_deref().map(load_checkpoint).transpose()?;
    let from = || -> Result<Checkpoint> {
        let p = ctx.checkpoint_path(a.from.as_deref(), stage - 1);
        load_checkpoint(&p)
    };
    let iterations;
    match stage {
        1 => {
            let mut tr = match resume {
                Some(ck) => Stage1Trainer::from_checkpoint(&ck)?,
                None => {
                    let mut c = ctx.cfg.stage1.clone();
                    if let Some(n) = a.iterations {
                        c.iterations = n;
                    }
                    let bb = m.bbox();
                    Stage1Trainer::new(c, settings, bb.min, bb.max, &frames, None)?
                }
            };
            train_loop(ctx, 1, &mut tr, &frames, &out)?;
            iterations = tr.iteration;
        }
        2 => {
            let mut tr = match resume {
                Some(ck) => Stage2Trainer::from_checkpoint(&ck)?,
                None => {
                    let s1 = Stage1Trainer::from_checkpoint(&from()?)?;
                    let mut c = ctx.cfg.stage2.clone();
                    if let Some(n) = a.iterations {
                        c.phase1 = n / 2;
                        c.phase2 = n - n / 2;
                    }
                    Stage2Trainer::new(c, s1.settings, s1.scene)?
                }
            };
            train_loop(ctx, 2, &mut tr, &frames, &out)?;
            iterations = tr.iteration;
        }
        _ => {
            let mut tr = match resume {
                Some(ck) => Stage3Trainer::from_checkpoint(&ck)?,
                None => {
                    let s2 = Stage2Trainer::from_checkpoint(&from()?)?;
                    let mut c = ctx.cfg.stage3.clone();
                    if let Some(n) = a.iterations {
                        c.iterations = n;
                    }
                    Stage3Trainer::new(c, s2.settings, s2.scene, &frames)?
                }
            };
            train_loop(ctx, 3, &mut tr, &frames, &out)?;
            iterations = tr.iteration;
            let tracks = out.with_extension("tracks.txt");
            write_point_tracks(&tracks, tr.trajectory.nodes, &tr.trajectory.positions, 0)?;
            ctx.emit(&Record::Output {
                path: tracks.display().to_string(),
                t: tr.trajectory.t0,
            })?;
        }
    }
    ctx.finish(
        &format!("train{stage}"),
        vec![(format!("stage{stage}"), iterations)],
    )
}

fn load_model(
    ctx: &Ctx,
    checkpoint: Option<PathBuf>,
) -> Result<(SceneModel, splatcast::splat::RenderSettings, Checkpoint)> {
    let path = match checkpoint {
        Some(p) => p,
        None => [3u8, 2, 1]
            .iter()
            .map(|&s| ctx.checkpoint_path(None, s))
            .find(|p| p.exists())
            .ok_or_else(|| {
                anyhow!(
                    "no checkpoint given and none found in {}",
                    ctx.run.display()
                )
            })?,
    };
    let ck = load_checkpoint(&path)?;
    let (model, settings) =
        SceneModel::from_checkpoint(&ck).with_context(|| format!("reading {}", path.display()))?;
    Ok((model, settings, ck))
}

fn stage_iterations(ck: &Checkpoint) -> Vec<(String, u64)> {
    ck.json::<u64>(&format!("{}.iteration", ck.stage))
        .map(|n| vec![(ck.stage.clone(), n)])
        .unwrap_or_default()
}

fn render(
    ctx: &mut Ctx,
    checkpoint: Option<PathBuf>,
    views: Views,
    time: Option<f64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let (model, settings, ck) = load_model(ctx, checkpoint)?;
    let (_, frames) = ctx.views(views)?;
    let dir = out.unwrap_or_else(|| ctx.run.join("render"));
    std::fs::create_dir_all(&dir)?;
    let pairs: Vec<(f64, Camera)> = frames
        .iter()
        .map(|f| (time.unwrap_or(f.t), f.camera.clone()))
        .collect();
    let imgs = model.render_many(&pairs, &settings)?;
    for (i, (img, (t, _))) in imgs.iter().zip(&pairs).enumerate() {
        let p = dir.join(format!("frame_{i:03}.png"));
        write_png(img, &p)?;
        ctx.emit(&Record::Output {
            path: p.display().to_string(),
            t: *t,
        })?;
    }
    eprintln!("rendered {} frames to {}", imgs.len(), dir.display());
    ctx.finish("render", stage_iterations(&ck))
}

fn predict(
    ctx: &mut Ctx,
    checkpoint: Option<PathBuf>,
    horizon: f64,
    frames: usize,
    views: Views,
    camera: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    if !(horizon >= 0.0) {
        bail!("horizon must be non-negative");
    }
    let (model, settings, ck) = load_model(ctx, checkpoint)?;
    let SceneModel::Forecast(fm) = &model else {
        bail!(
            "predict needs a stage-3 checkpoint, this one is {}",
            ck.stage
        );
    };
    let (_, cams) = ctx.views(views)?;
    if cams.is_empty() {
        bail!("no cameras in the selected views");
    }
    if let Some(c) = camera {
        if c >= cams.len() {
            bail!("camera {c} does not exist ({} views)", cams.len());
        }
    }
    let t_last = fm.t_last();
    let n = if horizon == 0.0 { 0 } else { frames };
    let times: Vec<f64> = (0..=n)
        .map(|j| {
            if n == 0 {
                t_last
            } else {
                t_last + horizon * j as f64 / n as f64
            }
        })
        .collect();
    let pairs: Vec<(f64, Camera)> = times
        .iter()
        .enumerate()
        .map(|(j, &t)| (t, cams[camera.unwrap_or(j % cams.len())].camera.clone()))
        .collect();
    let imgs = model.render_many(&pairs, &settings)?;
    let dir = out.unwrap_or_else(|| ctx.run.join("predict"));
    std::fs::create_dir_all(&dir)?;
    for (j, (img, t)) in imgs.iter().zip(&times).enumerate() {
        let p = dir.join(format!("predict_{j:03}.png"));
        write_png(img, &p)?;
        ctx.emit(&Record::Output {
            path: p.display().to_string(),
            t: *t,
        })?;
    }
    let steps = times.iter().map(|&t| fm.steps_to(t)).max().unwrap_or(0);
    let mut positions = fm.trajectory.frame(fm.trajectory.steps() - 1).to_vec();
    positions.extend(fm.rollout(steps)?);
    let tracks = dir.join("tracks.txt");
    write_point_tracks(&tracks, fm.net.nodes, &positions, 0)?;
    ctx.emit(&Record::Output {
        path: tracks.display().to_string(),
        t: t_last,
    })?;
    eprintln!(
        "predicted {} frames over [{t_last:.4}, {:.4}] into {}",
        imgs.len(),
        t_last + horizon,
        dir.display()
    );
    ctx.finish("predict", stage_iterations(&ck))
}

fn eval(
    ctx: &mut Ctx,
    checkpoint: Option<PathBuf>,
    views: Views,
    split: SplitArg,
    future_split: bool,
    compare: Vec<Baseline>,
    stage1: Option<PathBuf>,
) -> Result<()> {
    let (model, settings, ck) = load_model(ctx, checkpoint)?;
    let cutoff = ctx.cfg.future_cutoff;
    let (views, split) = if future_split {
        (Views::Both, Split::Future)
    } else {
        (views, split_of(split))
    };
    let (_, all) = ctx.views(views)?;
    let frames = split_frames(&all, split, cutoff);
    if frames.is_empty() {
        bail!("no frames to evaluate after the split");
    }
    let mut report = MetricReport::default();
    report.push(
        &format!("stage{}", model.stage()),
        evaluate_model(&model, &frames, &settings)?,
    );
    for b in compare {
        match b {
            Baseline::Freeze => {
                let t_freeze = match model.last_observed() {
                    Some(t) => t,
                    None => {
                        let (_, train) = ctx.manifest(false)?;
                        train
                            .iter()
                            .map(|f| f.t)
                            .filter(|&t| !future_split || t < cutoff)
                            .fold(f64::NEG_INFINITY, f64::max)
                    }
                };
                report.push(
                    "freeze",
                    evaluate_freeze(&model, t_freeze, &frames, &settings)?,
                );
            }
            Baseline::Stage1 => {
                let rows = match &stage1 {
                    Some(p) => {
                        let s1 = Stage1Trainer::from_checkpoint(&load_checkpoint(p)?)?;
                        evaluate_time_extrapolation(&s1.scene, &frames, &s1.settings)?
                    }
                    None => evaluate_time_extrapolation(model.deformable(), &frames, &settings)?,
                };
                report.push("stage1-extrapolate", rows);
            }
        }
    }
    report.wall_clock_s = ctx.start.elapsed().as_secs_f64();
    report.iterations = stage_iterations(&ck).into_iter().collect();
    eprintln!("{}", report.table());
    for rec in report.records("eval") {
        ctx.emit(&rec)?;
    }
    ctx.out.flush()?;
    Ok(())
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::All => Split::All,
        SplitArg::Observed => Split::Observed,
        SplitArg::Future => Split::Future,
    }
}
