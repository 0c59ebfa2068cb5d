//! Fitting the canonical and weight volumes to posed images.
//!
//! The free variables are the voxel values themselves: pre-softplus RGBα
//! for the canonical volume and the logit offsets `ΔW` over the Gaussian
//! prior for the weights. Gradients are exact adjoints of the differentiable
//! renderer (no early ray termination).

mod adam;
mod adjoint;
mod train;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use adjoint::{backward, chain_canonical, chain_weights, render_gradients, VolumeGradients};
pub use train::{
    evaluate, evaluate_volumes, fit, frame_background, FitOutcome, IterationReport, LogEntry,
    Metrics,
};

use alloc::vec::Vec;

use crate::kinematics::{KinematicsError, Pose, Skeleton};
use crate::math::{log10, softplus_inverse};
use crate::render::{Camera, MarchSettings};
use crate::volume::{activate_canonical, gaussian_prior, weights_from_logits, GridBox, VoxelGrid};

pub const DESK_LEARNING_RATE: f64 = 1e-2;

/// Activated canonical value every voxel starts from.
pub const INITIAL_DENSITY: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("image sizes differ: {0} vs {1} values")]
    DimensionMismatch(usize, usize),
    #[error("dataset has no frames")]
    EmptyDataset,
    #[error("non-finite loss at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last_good: alloc::boxed::Box<FitParams>,
    },
    #[error("non-finite loss on a single frame")]
    NonFiniteLoss,
    #[error("mean squared error must be non-negative, got {0}")]
    NegativeMse(f64),
    #[error("parameter shapes do not match")]
    ShapeMismatch,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

/// The fitted quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    /// Pre-softplus RGBα.
    pub raw_canonical: VoxelGrid,
    /// Logit offsets over `ln W_G`, `K + 1` channels.
    pub delta_w: VoxelGrid,
}

impl FitParams {
    /// Canonical values at softplus⁻¹(0.01), `ΔW = 0` (weights equal the prior).
    pub fn initial(canonical_box: GridBox, weight_box: GridBox, channels: usize) -> Self {
        Self {
            raw_canonical: VoxelGrid::filled(canonical_box, 4, softplus_inverse(INITIAL_DENSITY)),
            delta_w: VoxelGrid::zeros(weight_box, channels),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            raw_canonical: VoxelGrid::zeros(*self.raw_canonical.grid_box(), 4),
            delta_w: VoxelGrid::zeros(*self.delta_w.grid_box(), self.delta_w.channels()),
        }
    }

    pub fn same_shape(&self, o: &FitParams) -> bool {
        self.raw_canonical.same_shape(&o.raw_canonical) && self.delta_w.same_shape(&o.delta_w)
    }

    pub fn is_finite(&self) -> bool {
        self.raw_canonical
            .values()
            .iter()
            .chain(self.delta_w.values())
            .all(|v| v.is_finite())
    }

    /// Finite and within `f32` range, so a saved checkpoint stays finite.
    pub fn is_storable(&self) -> bool {
        self.raw_canonical
            .values()
            .iter()
            .chain(self.delta_w.values())
            .all(|v| v.abs() <= f32::MAX as f64)
    }

    pub fn canonical(&self) -> VoxelGrid {
        activate_canonical(&self.raw_canonical)
    }

    pub fn weights(&self, prior: &VoxelGrid) -> VoxelGrid {
        weights_from_logits(&self.delta_w, prior)
    }
}

/// Everything about the character that is fixed during fitting.
#[derive(Debug, Clone)]
pub struct CharacterRig {
    pub skeleton: Skeleton,
    pub canonical_pose: Pose,
    /// `W_G` on the weight grid.
    pub prior: VoxelGrid,
}

impl CharacterRig {
    pub fn new(
        skeleton: Skeleton,
        canonical_pose: Pose,
        weight_box: GridBox,
    ) -> Result<Self, KinematicsError> {
        let prior = gaussian_prior(&skeleton, &canonical_pose, weight_box)?;
        Ok(Self {
            skeleton,
            canonical_pose,
            prior,
        })
    }

    pub fn initial_params(&self, canonical_box: GridBox) -> FitParams {
        FitParams::initial(canonical_box, *self.prior.grid_box(), self.prior.channels())
    }
}

/// One posed observation. Colours are premultiplied over black.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFrame {
    pub pose: Pose,
    pub camera: Camera,
    /// Interleaved RGB in `[0, 1]`.
    pub rgb: Vec<f64>,
    /// Per-pixel coverage used to re-composite over a new background.
    pub alpha: Vec<f64>,
    /// Foreground mask for the L1 term.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the squared error summed over pixels and channels.
    pub l2: f64,
    /// Weight of the absolute error summed over foreground pixels.
    pub l1: f64,
}

impl LossWeights {
    pub const L2_ONLY: LossWeights = LossWeights { l2: 1.0, l1: 0.0 };
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { l2: 1.0, l1: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub seed: u64,
    /// Marching used for both fitting (with early stop disabled) and evaluation.
    pub march: MarchSettings,
    /// Row bands per frame; each band accumulates its own gradient buffer.
    pub tiles: usize,
}

impl FitConfig {
    pub fn for_grid(canonical_box: &GridBox) -> Self {
        Self {
            iterations: 5000,
            batch_size: 2,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            seed: 0,
            march: MarchSettings::for_grid(canonical_box),
            tiles: 8,
        }
    }

    /// Learning rate scaled for direct voxel parameters, where 1e-4 moves
    /// values too little to leave the initialization within a desk budget.
    pub fn desk(canonical_box: &GridBox) -> Self {
        let mut cfg = Self::for_grid(canonical_box);
        cfg.adam.lr = DESK_LEARNING_RATE;
        cfg
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.batch_size == 0 {
            return Err(FitError::Config("batch size must be positive"));
        }
        if self.tiles == 0 {
            return Err(FitError::Config("tile count must be positive"));
        }
        if !(self.loss.l1 >= 0.0 && self.loss.l2 >= 0.0) {
            return Err(FitError::Config("loss weights must be non-negative"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(FitError::Config("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Σ over pixels and channels of the squared difference.
pub fn loss_l2(rendered: &[f64], target: &[f64]) -> Result<f64, FitError> {
    if rendered.len() != target.len() {
        return Err(FitError::DimensionMismatch(rendered.len(), target.len()));
    }
    Ok(rendered
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Σ over masked pixels and their channels of the absolute difference.
pub fn loss_l1(rendered: &[f64], target: &[f64], mask: &[bool]) -> Result<f64, FitError> {
    if rendered.len() != target.len() {
        return Err(FitError::DimensionMismatch(rendered.len(), target.len()));
    }
    if rendered.len() != 3 * mask.len() {
        return Err(FitError::DimensionMismatch(rendered.len(), 3 * mask.len()));
    }
    Ok(rendered
        .chunks_exact(3)
        .zip(target.chunks_exact(3))
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|((a, b), _)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .sum())
}

/// `10·log10(255² / mse)` for an MSE on the 8-bit scale; `+∞` when `mse = 0`.
pub fn psnr(mse: f64) -> Result<f64, FitError> {
    if mse < 0.0 || mse.is_nan() {
        return Err(FitError::NegativeMse(mse));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * log10(255.0 * 255.0 / mse))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn l2_cases() {
        let a = vec![0.2; 12];
        assert_eq!(loss_l2(&a, &a).unwrap(), 0.0);
        assert_eq!(loss_l2(&[0.0; 12], &[1.0; 12]).unwrap(), 12.0);
        assert!(matches!(loss_l2(&a, &a[..3]), Err(FitError::DimensionMismatch(12, 3))));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..48).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..48).map(|_| rng.gen()).collect();
        let mut want = 0.0;
        for p in 0..16 {
            for c in 0..3 {
                let d = x[3 * p + c] - y[3 * p + c];
                want += d * d;
            }
        }
        assert!((loss_l2(&x, &y).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn l1_cases() {
        let a = vec![0.3; 6];
        assert_eq!(loss_l1(&a, &a, &[true, true]).unwrap(), 0.0);
        assert_eq!(loss_l1(&a, &[0.9; 6], &[false, false]).unwrap(), 0.0);
        let b = vec![0.3, 0.3, 0.3, 0.8, 0.3, 0.55];
        assert!((loss_l1(&a, &b, &[false, true]).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn psnr_cases() {
        assert!(psnr(65025.0).unwrap().abs() < 1e-12);
        assert!((psnr(650.25).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(0.0).unwrap(), f64::INFINITY);
        assert!(matches!(psnr(-1.0), Err(FitError::NegativeMse(_))));
    }

    #[test]
    fn initial_params_activate_to_small_density() {
        let gb = GridBox::new(crate::Vec3::splat(-1.0), crate::Vec3::splat(1.0), [3; 3]).unwrap();
        let p = FitParams::initial(gb, gb, 3);
        assert!(p.canonical().values().iter().all(|v| (v - INITIAL_DENSITY).abs() < 1e-15));
        assert!(p.delta_w.values().iter().all(|v| *v == 0.0));
    }
}
