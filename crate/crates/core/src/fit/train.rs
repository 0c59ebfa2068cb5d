use alloc::boxed::Box;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{backward, psnr, AdamState, CharacterRig, FitConfig, FitError, FitParams, TrainingFrame};
use crate::deform::PosedVolumeView;
use crate::exec::Executor;
use crate::kinematics::motion_bases;
use crate::math::round;
use crate::render::{render_image, MarchSettings};
use crate::rng::stream;
use crate::volume::VoxelGrid;

/// Uniform background colour for `frame` at `iteration`, reproducible from the seed.
pub fn frame_background(seed: u64, frame: usize, iteration: usize) -> [f64; 3] {
    let mut rng = stream(&[seed, frame as u64, iteration as u64]);
    [rng.gen(), rng.gen(), rng.gen()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub loss: f64,
}

/// Passed to the observer after every step.
#[derive(Debug, Clone, Copy)]
pub struct IterationReport<'a> {
    pub iteration: usize,
    pub loss: f64,
    pub params: &'a FitParams,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: FitParams,
    pub log: Vec<LogEntry>,
}

/// Frame indices for every iteration: epochs of shuffled frames, cut into
/// consecutive batches.
struct BatchPlan {
    seed: u64,
    n: usize,
    epoch: Option<(usize, Vec<usize>)>,
}

impl BatchPlan {
    fn index(&mut self, position: usize) -> usize {
        let epoch = position / self.n;
        if self.epoch.as_ref().map(|e| e.0) != Some(epoch) {
            let mut order: Vec<usize> = (0..self.n).collect();
            order.shuffle(&mut stream(&[self.seed, 0xE90C, epoch as u64]));
            self.epoch = Some((epoch, order));
        }
        self.epoch.as_ref().unwrap().1[position % self.n]
    }
}

/// Adam on the photometric loss. `observer` sees the parameters after each
/// step. On a non-finite loss the last finite parameters are returned
/// inside [`FitError::Diverged`].
pub fn fit<E: Executor>(
    rig: &CharacterRig,
    initial: FitParams,
    frames: &[TrainingFrame],
    cfg: &FitConfig,
    exec: &E,
    mut observer: impl FnMut(&IterationReport<'_>),
) -> Result<FitOutcome, FitError> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(FitError::EmptyDataset);
    }
    let mut params = initial;
    let mut adam = AdamState::new(cfg.adam, &params);
    let mut plan = BatchPlan {
        seed: cfg.seed,
        n: frames.len(),
        epoch: None,
    };
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch: Vec<(&TrainingFrame, [f64; 3])> = (0..cfg.batch_size)
            .map(|j| {
                let fi = plan.index(it * cfg.batch_size + j);
                (&frames[fi], frame_background(cfg.seed, fi, it))
            })
            .collect();
        let diverged = |params: FitParams| FitError::Diverged {
            iteration: it,
            last_good: Box::new(params),
        };
        let (loss, grads) = match backward(rig, &params, &batch, &cfg.march, &cfg.loss, cfg.tiles, exec) {
            Ok(r) => r,
            Err(FitError::NonFiniteLoss) => return Err(diverged(params)),
            Err(e) => return Err(e),
        };
        let mut next = params.clone();
        adam.apply(&mut next, &grads)?;
        if !next.is_storable() {
            return Err(diverged(params));
        }
        params = next;
        log.push(LogEntry { iteration: it, loss });
        observer(&IterationReport {
            iteration: it,
            loss,
            params: &params,
        });
    }
    Ok(FitOutcome { params, log })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Mean squared error on the 8-bit scale.
    pub mse: f64,
    pub psnr: f64,
}

#[inline]
fn quantize(v: f64) -> f64 {
    round(v.clamp(0.0, 1.0) * 255.0)
}

/// Render every frame over black, quantize to 8 bits and compare with the
/// (premultiplied) ground truth.
pub fn evaluate_volumes<E: Executor>(
    rig: &CharacterRig,
    canonical: &VoxelGrid,
    weights: &VoxelGrid,
    frames: &[TrainingFrame],
    march: &MarchSettings,
    exec: &E,
) -> Result<Metrics, FitError> {
    if frames.is_empty() {
        return Err(FitError::EmptyDataset);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for f in frames {
        let bases = motion_bases(&rig.skeleton, &rig.canonical_pose, &f.pose)?;
        let view = PosedVolumeView::new(canonical, weights, &bases).map_err(|_| FitError::ShapeMismatch)?;
        let img = render_image(&view, &f.camera, march, exec);
        if img.rgb.len() != f.rgb.len() {
            return Err(FitError::DimensionMismatch(img.rgb.len(), f.rgb.len()));
        }
        for (a, b) in img.rgb.iter().zip(&f.rgb) {
            let d = quantize(*a) - quantize(*b);
            sum += d * d;
        }
        count += img.rgb.len();
    }
    let mse = sum / count as f64;
    Ok(Metrics { mse, psnr: psnr(mse)? })
}

pub fn evaluate<E: Executor>(
    rig: &CharacterRig,
    params: &FitParams,
    frames: &[TrainingFrame],
    march: &MarchSettings,
    exec: &E,
) -> Result<Metrics, FitError> {
    let canonical = params.canonical();
    let weights = params.weights(&rig.prior);
    evaluate_volumes(rig, &canonical, &weights, frames, march, exec)
}
