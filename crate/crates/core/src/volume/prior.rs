//! Weight-volume parameterization: the ellipsoidal bone prior, the softmax
//! over `ΔW + ln W_G`, and the canonical-color activation.

use alloc::vec;
use alloc::vec::Vec;

use super::{GridBox, VolumeError, VoxelGrid};
use crate::kinematics::{world_transforms, KinematicsError, Pose, Skeleton};
use crate::math::{exp, ln, softplus, Vec3};

/// Floor applied to the prior's background channel so `ln W_G` stays finite.
pub const PRIOR_FLOOR: f64 = 1e-6;

/// Bone `k` runs from its parent joint to joint `k`; the root bone is the
/// degenerate segment at the root joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoneSegment {
    pub start: Vec3,
    pub end: Vec3,
}

impl BoneSegment {
    pub fn midpoint(&self) -> Vec3 {
        (self.start + self.end) * 0.5
    }

    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    /// Euclidean distance from `x` to the closed segment, and the clamped
    /// parameter of the closest point.
    pub fn distance(&self, x: Vec3) -> (f64, f64) {
        let d = self.end - self.start;
        let l2 = d.norm_squared();
        let t = if l2 > 0.0 {
            ((x - self.start).dot(d) / l2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        ((x - (self.start + d * t)).norm(), t)
    }
}

/// Bone segments of `skel` posed at `pose`, in world space.
pub fn bone_segments(skel: &Skeleton, pose: &Pose) -> Result<Vec<BoneSegment>, KinematicsError> {
    let g = world_transforms(skel, pose)?;
    Ok((0..skel.bone_count())
        .map(|k| {
            let end = g[k].translation;
            let start = skel.parent(k).map_or(end, |p| g[p].translation);
            BoneSegment { start, end }
        })
        .collect())
}

/// Unnormalized ellipsoidal Gaussian of one bone: centred on the midpoint,
/// axial sigma half the bone length, radial sigma `sigma_r`. Zero-length
/// bones are isotropic with sigma `sigma_r`.
pub fn bone_gaussian(seg: &BoneSegment, sigma_r: f64, x: Vec3) -> f64 {
    let d = x - seg.midpoint();
    let len = seg.length();
    if len < 1e-12 {
        return exp(-d.norm_squared() / (2.0 * sigma_r * sigma_r));
    }
    let axis = (seg.end - seg.start) * (1.0 / len);
    let sigma_a = 0.5 * len;
    let axial = d.dot(axis);
    let radial2 = (d.norm_squared() - axial * axial).max(0.0);
    exp(-(axial * axial / (2.0 * sigma_a * sigma_a) + radial2 / (2.0 * sigma_r * sigma_r)))
}

/// Normalized prior `W_G` with `K + 1` channels, background last.
pub fn gaussian_prior(
    skel: &Skeleton,
    canonical: &Pose,
    grid_box: GridBox,
) -> Result<VoxelGrid, KinematicsError> {
    let segs = bone_segments(skel, canonical)?;
    let k = skel.bone_count();
    let mut grid = VoxelGrid::zeros(grid_box, k + 1);
    for node in 0..grid_box.voxel_count() {
        let x = grid_box.node_position_of(node);
        let v = grid.voxel_mut(node);
        let mut sum = 0.0;
        for (b, seg) in segs.iter().enumerate() {
            v[b] = bone_gaussian(seg, skel.radial_sigma(b), x);
            sum += v[b];
        }
        v[k] = (1.0 - sum).max(PRIOR_FLOOR);
        let total = sum + v[k];
        v.iter_mut().for_each(|c| *c /= total);
    }
    Ok(grid.with_exterior_one_hot(k))
}

/// Box around every canonical joint, dilated by `margin`, sampled with `dims`.
pub fn skeleton_box(
    skel: &Skeleton,
    canonical: &Pose,
    margin: f64,
    dims: [usize; 3],
) -> Result<GridBox, VolumeError> {
    let g = world_transforms(skel, canonical).map_err(|_| VolumeError::ShapeMismatch)?;
    let (lo, hi) = g.iter().fold(
        (Vec3::splat(f64::MAX), Vec3::splat(f64::MIN)),
        |(lo, hi), t| (lo.min(t.translation), hi.max(t.translation)),
    );
    GridBox::new(lo - Vec3::splat(margin), hi + Vec3::splat(margin), dims)
}

/// Free weight logits `ΔW` paired with the fixed prior `W_G`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightLogits {
    pub delta: VoxelGrid,
    pub prior: VoxelGrid,
}

impl WeightLogits {
    pub fn new(delta: VoxelGrid, prior: VoxelGrid) -> Result<Self, VolumeError> {
        if !delta.same_shape(&prior) {
            return Err(VolumeError::ShapeMismatch);
        }
        if prior.values().iter().any(|v| !(*v > 0.0)) {
            return Err(VolumeError::NonPositivePrior);
        }
        Ok(Self { delta, prior })
    }

    /// Logits all zero: the weights start at the prior.
    pub fn at_prior(prior: VoxelGrid) -> Result<Self, VolumeError> {
        let delta = VoxelGrid::zeros(*prior.grid_box(), prior.channels());
        Self::new(delta, prior)
    }

    pub fn weights(&self) -> VoxelGrid {
        weights_from_logits(&self.delta, &self.prior)
    }
}

/// `W = softmax(ΔW + ln W_G)` per voxel; the last channel is background and
/// points outside the box read as pure background.
pub fn weights_from_logits(delta: &VoxelGrid, prior: &VoxelGrid) -> VoxelGrid {
    assert!(delta.same_shape(prior), "logits and prior must share a shape");
    let c = delta.channels();
    let mut values = vec![0.0; delta.values().len()];
    let mut z = vec![0.0; c];
    for node in 0..delta.grid_box().voxel_count() {
        let d = delta.voxel(node);
        let p = prior.voxel(node);
        let mut zmax = f64::NEG_INFINITY;
        for ch in 0..c {
            z[ch] = d[ch] + ln(p[ch]);
            zmax = zmax.max(z[ch]);
        }
        let mut sum = 0.0;
        for v in z.iter_mut() {
            *v = exp(*v - zmax);
            sum += *v;
        }
        for ch in 0..c {
            values[node * c + ch] = z[ch] / sum;
        }
    }
    VoxelGrid::from_values(*delta.grid_box(), c, values)
        .expect("softmax of finite logits is finite")
        .with_exterior_one_hot(c - 1)
}

/// Softplus on all four RGBα channels, α clamped to at most one.
pub fn activate_canonical(raw: &VoxelGrid) -> VoxelGrid {
    assert_eq!(raw.channels(), 4, "canonical volume is RGBα");
    let values: Vec<f64> = raw
        .values()
        .chunks_exact(4)
        .flat_map(|v| {
            [
                softplus(v[0]),
                softplus(v[1]),
                softplus(v[2]),
                softplus(v[3]).min(1.0),
            ]
        })
        .collect();
    VoxelGrid::from_values(*raw.grid_box(), 4, values).expect("softplus of finite values is finite")
}
