//! The subcommands, callable without going through argument parsing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use volrig_core::exec::Executor;
use volrig_core::fit::{
    evaluate, evaluate_volumes, fit, AdamConfig, CharacterRig, FitConfig, FitError, FitParams, LossWeights, Metrics,
};
use volrig_core::kinematics::motion_bases;
use volrig_core::deform::PosedVolumeView;
use volrig_core::render::{render_image, Camera, Intrinsics, MarchSettings};
use volrig_core::{GridBox, Pose, Vec3};

use crate::annotations::filter_dataset;
use crate::checkpoint::{Checkpoint, Model};
use crate::config::{RenderMode, RunConfig};
use crate::dataset::{generate_dataset, Dataset, DatasetSummary};
use crate::error::{Error, Result};
use crate::image_io::write_rgba;
use crate::manifest::{read_manifest, FrameRecord};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const FIT_LOG: &str = "fit.log";

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::config(format!("no {what} given")))
}

pub fn cmd_synth<E: Executor>(cfg: &RunConfig, out: &Path, exec: &E) -> Result<DatasetSummary> {
    cfg.echo(out)?;
    let skel = cfg.skeleton_file()?;
    generate_dataset(out, &skel, &cfg.synth, cfg.seed, exec)
}

pub fn cmd_filter(cfg: &RunConfig, out: &Path) -> Result<volrig_core::filter::FilterReport> {
    cfg.echo(out)?;
    let input = require(&cfg.dataset, "dataset")?;
    filter_dataset(input, out, &cfg.filter.settings(), cfg.filter.crop)
}

/// Fitting configuration and volume boxes for a dataset.
pub fn fit_setup(cfg: &RunConfig, ds: &Dataset) -> Result<(CharacterRig, GridBox, FitConfig)> {
    let f = &cfg.fit;
    let cbox = ds.skeleton.model_box(f.margin, [f.grid; 3])?;
    let wbox = ds.skeleton.model_box(f.margin, [f.wgrid; 3])?;
    let skel = ds.skeleton.skeleton()?;
    let rig = CharacterRig::new(skel.clone(), Pose::rest(&skel), wbox)?;
    let mut march = MarchSettings::for_grid(&cbox);
    if let Some(step) = f.step {
        march = MarchSettings::new(step, march.step_ref)?;
    }
    let fc = FitConfig {
        iterations: f.iterations,
        batch_size: f.batch_size,
        adam: AdamConfig {
            lr: f.lr,
            beta1: f.beta1,
            beta2: f.beta2,
            eps: f.eps,
        },
        loss: LossWeights { l2: f.l2, l1: f.l1 },
        seed: cfg.seed,
        march,
        tiles: f.tiles,
    };
    fc.validate()?;
    Ok((rig, cbox, fc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub final_loss: Option<f64>,
    pub eval: Option<Metrics>,
}

fn fmt_psnr(p: f64) -> String {
    if p.is_infinite() {
        "inf".into()
    } else {
        format!("{p:.4}")
    }
}

/// Fit a dataset; writes `fit.log` and `checkpoint/` under `out`. On
/// divergence the last finite parameters are saved before failing.
pub fn cmd_fit<E: Executor>(cfg: &RunConfig, out: &Path, exec: &E) -> Result<FitSummary> {
    cfg.echo(out)?;
    let ds = Dataset::load(require(&cfg.dataset, "dataset")?)?;
    let train = ds.frames("train")?;
    if train.is_empty() {
        return Err(Error::config("empty dataset"));
    }
    let test = ds.frames("test")?;
    let (rig, cbox, fc) = fit_setup(cfg, &ds)?;
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    let save = |params: FitParams| -> Result<()> {
        Checkpoint {
            skeleton: ds.skeleton.clone(),
            model: Model::Fitted(params),
        }
        .save(&ckpt_dir)?;
        cfg.echo(&ckpt_dir)
    };

    let log_path = out.join(FIT_LOG);
    let file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    let mut io_err = None;
    let mut last_eval = None;
    let mut write = |line: String, log: &mut std::io::BufWriter<fs::File>| {
        if let Err(e) = writeln!(log, "{line}") {
            io_err.get_or_insert(e);
        }
    };
    write("iter,loss,psnr_eval".into(), &mut log);
    let every = cfg.fit.eval_every;
    let last = fc.iterations.saturating_sub(1);
    let mut eval_err = None;
    let result = fit(&rig, rig.initial_params(cbox), &train, &fc, exec, |r| {
        let due = r.iteration == last || (every > 0 && (r.iteration + 1) % every == 0);
        let psnr = if due && !test.is_empty() {
            match evaluate(&rig, r.params, &test, &fc.march, exec) {
                Ok(m) => {
                    last_eval = Some(m);
                    fmt_psnr(m.psnr)
                }
                Err(e) => {
                    eval_err.get_or_insert(e);
                    String::new()
                }
            }
        } else {
            String::new()
        };
        write(format!("{},{:.6},{}", r.iteration, r.loss, psnr), &mut log);
    });
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    if let Some(e) = io_err {
        return Err(Error::io(&log_path, e));
    }
    match result {
        Ok(outcome) => {
            if let Some(e) = eval_err {
                return Err(e.into());
            }
            let final_loss = outcome.log.last().map(|l| l.loss);
            if fc.iterations == 0 && !test.is_empty() {
                last_eval = Some(evaluate(&rig, &outcome.params, &test, &fc.march, exec)?);
            }
            save(outcome.params)?;
            Ok(FitSummary {
                final_loss,
                eval: last_eval,
            })
        }
        Err(FitError::Diverged { iteration, last_good }) => {
            save(*last_good)?;
            Err(Error::Numerical(format!(
                "loss became non-finite at iteration {iteration}; last good checkpoint kept"
            )))
        }
        Err(e) => Err(e.into()),
    }
}

/// Held-out metrics of a checkpoint on a dataset's test split.
pub fn cmd_eval<E: Executor>(cfg: &RunConfig, out: &Path, exec: &E) -> Result<Metrics> {
    cfg.echo(out)?;
    let ck = Checkpoint::load(require(&cfg.checkpoint, "checkpoint")?)?;
    let ds = Dataset::load(require(&cfg.dataset, "dataset")?)?;
    if ds.skeleton.bone_count() != ck.skeleton.bone_count() {
        return Err(Error::config("checkpoint and dataset skeletons differ"));
    }
    let test = ds.frames("test")?;
    if test.is_empty() {
        return Err(Error::config("empty test set"));
    }
    let rig = ck.rig()?;
    let (canonical, weights) = ck.volumes(&rig);
    let march = render_march(canonical.grid_box(), cfg.fit.step)?;
    let m = evaluate_volumes(&rig, &canonical, &weights, &test, &march, exec)?;
    let path = out.join("eval.json");
    let text = format!(
        "{{\"frames\": {}, \"mse\": {}, \"psnr\": {}}}\n",
        test.len(),
        m.mse,
        if m.psnr.is_infinite() { "\"inf\"".to_string() } else { m.psnr.to_string() }
    );
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(m)
}

fn render_march(cbox: &GridBox, step: Option<f64>) -> Result<MarchSettings> {
    let m = MarchSettings::for_grid(cbox);
    Ok(match step {
        Some(s) => MarchSettings::new(s, m.step_ref)?,
        None => m,
    })
}

/// Camera on a horizontal circle about the origin, raised by `elevation`.
pub fn orbit_camera(i: usize, n: usize, radius: f64, elevation: f64, k: Intrinsics) -> Result<Camera> {
    let theta = std::f64::consts::TAU * i as f64 / n as f64;
    let eye = Vec3::new(
        radius * elevation.cos() * theta.cos(),
        radius * elevation.cos() * theta.sin(),
        radius * elevation.sin(),
    );
    Ok(Camera::look_at(eye, Vec3::ZERO, Vec3::Z, k)?)
}

/// Render a checkpoint. Returns the written image paths.
pub fn cmd_render<E: Executor>(cfg: &RunConfig, out: &Path, exec: &E) -> Result<Vec<PathBuf>> {
    cfg.echo(out)?;
    let r = &cfg.render;
    let ck = Checkpoint::load(require(&cfg.checkpoint, "checkpoint")?)?;
    let rig = ck.rig()?;
    let k = rig.skeleton.bone_count();
    let records: Vec<FrameRecord> = match &r.poses {
        Some(p) => {
            if !p.exists() {
                return Err(Error::config(format!("{}: no such pose file", p.display())));
            }
            read_manifest(p)?
        }
        None => Vec::new(),
    };
    let poses = records.iter().map(|rec| rec.pose(k)).collect::<Result<Vec<_>>>()?;
    let (canonical, weights) = ck.volumes(&rig);
    let march = render_march(canonical.grid_box(), r.step)?;
    let intr = {
        let mut k = Intrinsics::centered(r.width, r.height);
        k.fx = r.width as f64;
        k.fy = r.width as f64;
        k
    };
    let first_pose = poses.first().cloned().unwrap_or_else(|| rig.canonical_pose.clone());
    let first_cam = match records.first() {
        Some(rec) => rec.camera.camera()?,
        None => orbit_camera(0, 1, r.radius, r.elevation, intr)?,
    };
    let jobs: Vec<(Pose, Camera)> = match r.mode {
        RenderMode::Single => vec![(first_pose, first_cam)],
        RenderMode::Retarget => {
            if poses.is_empty() {
                return Err(Error::config("retarget needs a pose file"));
            }
            poses.into_iter().map(|p| (p, first_cam)).collect()
        }
        RenderMode::Turntable => {
            if r.frames == 0 {
                return Err(Error::config("turntable needs at least one camera"));
            }
            (0..r.frames)
                .map(|i| Ok((first_pose.clone(), orbit_camera(i, r.frames, r.radius, r.elevation, intr)?)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut paths = Vec::new();
    for (i, (pose, cam)) in jobs.iter().enumerate() {
        let bases = motion_bases(&rig.skeleton, &rig.canonical_pose, pose)?;
        let view = PosedVolumeView::new(&canonical, &weights, &bases)
            .map_err(|e| Error::config(e.to_string()))?;
        let img = render_image(&view, cam, &march, exec);
        let path = out.join(format!("{i:05}.png"));
        write_rgba(&path, img.width, img.height, &img.rgb, &img.alpha)?;
        paths.push(path);
    }
    Ok(paths)
}
