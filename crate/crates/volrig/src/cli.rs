use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_eval, cmd_filter, cmd_fit, cmd_render, cmd_synth};
use crate::config::{RenderMode, RunConfig};
use crate::error::{Error, Result};
use crate::exec::Parallel;

#[derive(Debug, Parser)]
#[command(name = "volrig", version, about = "Posable voxel characters from posed images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset of the capsule figure.
    Synth(Common),
    /// Drop frames whose annotations fail the quality checks.
    Filter(Common),
    /// Fit canonical and weight volumes to a dataset.
    Fit(Common),
    /// Held-out PSNR of a checkpoint.
    Eval(Common),
    /// Render a checkpoint: one view, a pose sequence, or a turntable.
    Render(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub skeleton: Option<PathBuf>,
    /// Pose sequence in manifest format (render).
    #[arg(long)]
    pub poses: Option<PathBuf>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Canonical grid nodes per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Weight grid nodes per axis.
    #[arg(long)]
    pub wgrid: Option<usize>,
    /// Ray-march step in world units.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<RenderMode>,
    /// Poses to synthesize, or turntable cameras.
    #[arg(long)]
    pub n_frames: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Common {
    /// Config file with command-line overrides applied.
    pub fn resolve(&self, command: &Command) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::config(format!("{}: no such config file", p.display())));
                }
                RunConfig::load(p)?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        for (dst, src) in [
            (&mut cfg.dataset, &self.dataset),
            (&mut cfg.checkpoint, &self.checkpoint),
            (&mut cfg.skeleton, &self.skeleton),
            (&mut cfg.render.poses, &self.poses),
        ] {
            if src.is_some() {
                *dst = src.clone();
            }
        }
        if let Some(n) = self.iters {
            cfg.fit.iterations = n;
        }
        if let Some(g) = self.grid {
            cfg.fit.grid = g;
            cfg.synth.grid = g;
        }
        if let Some(g) = self.wgrid {
            cfg.fit.wgrid = g;
            cfg.synth.wgrid = g;
        }
        if let Some(s) = self.step {
            cfg.fit.step = Some(s);
            cfg.render.step = Some(s);
        }
        if let Some(m) = self.mode {
            cfg.render.mode = m;
        }
        if let Some(n) = self.n_frames {
            match command {
                Command::Render(_) => cfg.render.frames = n,
                _ => cfg.synth.poses = n,
            }
        }
        Ok(cfg)
    }
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.kind() as i32
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Synth(c) | Command::Filter(c) | Command::Fit(c) | Command::Eval(c) | Command::Render(c) => c,
    };
    let cfg = common.resolve(&cli.command)?;
    let exec = match common.threads {
        Some(n) => Parallel::with_threads(n),
        None => Parallel::global(),
    };
    let out = &common.out;
    match &cli.command {
        Command::Synth(_) => {
            let s = cmd_synth(&cfg, out, &exec)?;
            println!("frames={}", s.frames);
            println!("train={} test={}", s.train, s.test);
        }
        Command::Filter(_) => {
            let r = cmd_filter(&cfg, out)?;
            println!("frames={} kept={}", r.verdicts.len(), r.kept().count());
            for rule in [
                volrig_core::filter::Rule::FullBody,
                volrig_core::filter::Rule::PoseConsistency,
                volrig_core::filter::Rule::Silhouette,
                volrig_core::filter::Rule::Missing,
            ] {
                println!("{}={}", rule.as_str(), r.dropped_by(rule));
            }
        }
        Command::Fit(_) => {
            let s = cmd_fit(&cfg, out, &exec)?;
            if let Some(l) = s.final_loss {
                println!("final_loss={l:.6}");
            }
            if let Some(m) = s.eval {
                println!("psnr={:.4} mse={:.4}", m.psnr, m.mse);
            }
        }
        Command::Eval(_) => {
            let m = cmd_eval(&cfg, out, &exec)?;
            println!("psnr={:.4} mse={:.4}", m.psnr, m.mse);
        }
        Command::Render(_) => {
            let paths = cmd_render(&cfg, out, &exec)?;
            println!("images={}", paths.len());
        }
    }
    Ok(())
}
