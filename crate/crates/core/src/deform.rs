//! The posed target volume: per-bone warps, normalized skinning weights,
//! the occupancy mask and the masked canonical lookup.
//!
//! Every quantity is evaluated lazily at query points; nothing is baked per
//! pose. [`SampleTrace`] keeps the intermediate values of one evaluation so
//! the fitting adjoint can reuse them.

use alloc::vec;
use alloc::vec::Vec;

use crate::kinematics::MotionBasisSet;
use crate::math::{Aabb, Vec3};
use crate::volume::{Stencil, VoxelGrid};

/// Below this total bone support a point maps to empty space.
pub const SUPPORT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeformError {
    #[error("canonical volume must have 4 channels, has {0}")]
    CanonicalChannels(usize),
    #[error("weight volume has {weights} channels; {bones} bones need {}", bones + 1)]
    WeightChannels { weights: usize, bones: usize },
}

/// Result of the skinning warp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Warp {
    Mapped(Vec3),
    /// No bone claims the point; treated as empty space.
    Unmapped,
}

/// Canonical RGBα volume, weight volume and motion bases for one pose.
#[derive(Debug, Clone, Copy)]
pub struct PosedVolumeView<'a> {
    canonical: &'a VoxelGrid,
    weights: &'a VoxelGrid,
    bases: &'a MotionBasisSet,
}

/// Intermediate values of one target-volume evaluation.
#[derive(Debug, Clone, Default)]
pub struct SampleTrace {
    /// `B_i(x)` per bone.
    pub warped: Vec<Vec3>,
    /// Weight-grid stencil at `B_i(x)`, `None` outside the grid.
    pub stencils: Vec<Option<Stencil>>,
    /// `s_i = w_i(B_i(x))`.
    pub bone_weights: Vec<f64>,
    /// `Σ s_i`.
    pub support: f64,
    /// `clamp(Σ s_i, 0, 1)`.
    pub mask: f64,
    /// `ŵ_i`, all zero when unmapped.
    pub normalized: Vec<f64>,
    pub warp: Option<Vec3>,
    /// Canonical-grid stencil at the warped point.
    pub canonical_stencil: Option<Stencil>,
    /// `V^c(T(x))`.
    pub canonical_value: [f64; 4],
    /// `M(x) · V^c(T(x))`.
    pub value: [f64; 4],
}

impl SampleTrace {
    pub fn with_bones(k: usize) -> Self {
        Self {
            warped: vec![Vec3::ZERO; k],
            stencils: vec![None; k],
            bone_weights: vec![0.0; k],
            normalized: vec![0.0; k],
            ..Default::default()
        }
    }
}

impl<'a> PosedVolumeView<'a> {
    pub fn new(
        canonical: &'a VoxelGrid,
        weights: &'a VoxelGrid,
        bases: &'a MotionBasisSet,
    ) -> Result<Self, DeformError> {
        if canonical.channels() != 4 {
            return Err(DeformError::CanonicalChannels(canonical.channels()));
        }
        if weights.channels() != bases.len() + 1 {
            return Err(DeformError::WeightChannels {
                weights: weights.channels(),
                bones: bases.len(),
            });
        }
        Ok(Self {
            canonical,
            weights,
            bases,
        })
    }

    pub fn canonical(&self) -> &'a VoxelGrid {
        self.canonical
    }

    pub fn weights(&self) -> &'a VoxelGrid {
        self.weights
    }

    pub fn bases(&self) -> &'a MotionBasisSet {
        self.bases
    }

    pub fn bone_count(&self) -> usize {
        self.bases.len()
    }

    pub fn new_trace(&self) -> SampleTrace {
        SampleTrace::with_bones(self.bone_count())
    }

    /// Evaluate the target volume at `x`, recording every intermediate.
    pub fn trace(&self, x: Vec3, t: &mut SampleTrace) -> [f64; 4] {
        let k = self.bone_count();
        let wgrid = self.weights.grid_box();
        let mut support = 0.0;
        for i in 0..k {
            let y = self.bases.get(i).apply(x);
            t.warped[i] = y;
            let st = wgrid.stencil(y);
            let s = match &st {
                Some(st) => self.weights.blend_channel(st, i),
                None => self.weights.exterior()[i],
            };
            t.stencils[i] = st;
            t.bone_weights[i] = s;
            support += s;
        }
        t.support = support;
        t.mask = support.clamp(0.0, 1.0);
        if support < SUPPORT_EPSILON {
            t.normalized.iter_mut().for_each(|w| *w = 0.0);
            t.warp = None;
            t.canonical_stencil = None;
            t.canonical_value = [0.0; 4];
            t.value = [0.0; 4];
            return t.value;
        }
        let mut warp = Vec3::ZERO;
        for i in 0..k {
            let w = t.bone_weights[i] / support;
            t.normalized[i] = w;
            warp += t.warped[i] * w;
        }
        t.warp = Some(warp);
        let st = self.canonical.grid_box().stencil(warp);
        match &st {
            Some(st) => self.canonical.blend_into(st, &mut t.canonical_value),
            None => t.canonical_value.copy_from_slice(self.canonical.exterior()),
        }
        t.canonical_stencil = st;
        for c in 0..4 {
            t.value[c] = t.mask * t.canonical_value[c];
        }
        t.value
    }

    /// `ŵ(x)`: per-bone weights sampled at each bone's own warped point,
    /// normalized to sum to one (all zero where no bone has support).
    pub fn normalized_weights(&self, x: Vec3) -> Vec<f64> {
        let mut t = self.new_trace();
        self.trace(x, &mut t);
        t.normalized
    }

    /// `T(x) = Σ ŵ_i(x) B_i(x)`.
    pub fn warp_point(&self, x: Vec3) -> Warp {
        let mut t = self.new_trace();
        self.trace(x, &mut t);
        t.warp.map_or(Warp::Unmapped, Warp::Mapped)
    }

    /// `M(x) = clamp(Σ_{i<K} w_i(B_i(x)), 0, 1)`; the background channel is excluded.
    pub fn mask_at(&self, x: Vec3) -> f64 {
        let mut t = self.new_trace();
        self.trace(x, &mut t);
        t.mask
    }

    /// `M(x) · V^c(T(x))`.
    pub fn sample_target(&self, x: Vec3) -> [f64; 4] {
        let mut t = self.new_trace();
        self.trace(x, &mut t)
    }

    /// Target-space box outside of which every bone warp leaves the weight
    /// grid, so the posed volume is empty there.
    pub fn target_bounds(&self) -> Aabb {
        let gb = self.weights.grid_box();
        let wbox = Aabb::new(gb.min(), gb.max());
        let mut out = Aabb::EMPTY;
        for b in self.bases.as_slice() {
            let inv = b.inverse();
            for c in wbox.corners() {
                out.include(inv.apply(c));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::RigidTransform;
    use crate::volume::GridBox;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box(dims: usize) -> GridBox {
        GridBox::new(Vec3::splat(-1.0), Vec3::splat(1.0), [dims; 3]).unwrap()
    }

    fn random_canonical(rng: &mut ChaCha8Rng, gb: GridBox) -> VoxelGrid {
        let vals = (0..gb.voxel_count() * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
        VoxelGrid::from_values(gb, 4, vals).unwrap()
    }

    fn random_weights(rng: &mut ChaCha8Rng, gb: GridBox, k: usize) -> VoxelGrid {
        let mut vals = Vec::new();
        for _ in 0..gb.voxel_count() {
            let raw: Vec<f64> = (0..=k).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            vals.extend(raw.iter().map(|v| v / s));
        }
        VoxelGrid::from_values(gb, k + 1, vals).unwrap().with_exterior_one_hot(k)
    }

    fn uniform_weights(gb: GridBox, per_bone: &[f64]) -> VoxelGrid {
        let k = per_bone.len();
        let bg = 1.0 - per_bone.iter().sum::<f64>();
        let mut vals = Vec::new();
        for _ in 0..gb.voxel_count() {
            vals.extend_from_slice(per_bone);
            vals.push(bg);
        }
        VoxelGrid::from_values(gb, k + 1, vals).unwrap().with_exterior_one_hot(k)
    }

    fn random_rigid(rng: &mut ChaCha8Rng) -> RigidTransform {
        let w = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
        let t = Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
        RigidTransform::new(crate::kinematics::rodrigues(w), t)
    }

    #[test]
    fn one_hot_when_single_bone_has_support() {
        let gb = unit_box(5);
        let weights = uniform_weights(gb, &[0.0, 0.6, 0.0]);
        let canonical = VoxelGrid::filled(gb, 4, 0.5);
        let bases = MotionBasisSet::identity(3);
        let view = PosedVolumeView::new(&canonical, &weights, &bases).unwrap();
        assert_eq!(view.normalized_weights(Vec3::new(0.1, 0.2, -0.3)), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn equal_support_gives_uniform_weights() {
        let gb = unit_box(5);
        let weights = uniform_weights(gb, &[0.2, 0.2, 0.2]);
        let canonical = VoxelGrid::filled(gb, 4, 0.5);
        let bases = MotionBasisSet::identity(3);
        let view = PosedVolumeView::new(&canonical, &weights, &bases).unwrap();
        for w in view.normalized_weights(Vec3::new(0.3, -0.4, 0.0)) {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn normalized_weights_match_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gb = unit_box(6);
        let weights = random_weights(&mut rng, gb, 3);
        let canonical = random_canonical(&mut rng, gb);
        let bases = MotionBasisSet::from_transforms((0..3).map(|_| random_rigid(&mut rng)).collect());
        let view = PosedVolumeView::new(&canonical, &weights, &bases).unwrap();
        for _ in 0..200 {
            let x = Vec3::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8));
            let s: Vec<f64> = (0..3)
                .map(|i| weights.trilinear_sample(bases.get(i).apply(x))[i])
                .collect();
            let total: f64 = s.iter().sum();
            let got = view.normalized_weights(x);
            for i in 0..3 {
                assert!((got[i] - s[i] / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_bases_leave_points_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let gb = unit_box(6);
        let weights = random_weights(&mut rng, gb, 4);
        let canonical = random_canonical(&mut rng, gb);
        let bases = MotionBasisSet::identity(4);
        let view = PosedVolumeView::new(&canonical, &weights, &bases).unwrap();
        for _ in 0..50 {
            let x = Vec3::new(rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9));
            match view.warp_point(x) {
                Warp::Mapped(y) => assert!((y - x).norm() < 1e-9),
                Warp::Unmapped => panic!("interior point should be mapped"),
            }
        }
    }

    #[test]
    fn one_hot_weights_give_rigid_warp() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let gb = GridBox::new(Vec3::splat(-3.0), Vec3::splat(3.0), [7; 3]).unwrap();
        let weights = uniform_weights(gb, &[0.0, 1.0]);
        let canonical = random_canonical(&mut rng, gb);
        let bases = MotionBasisSet::from_transforms(vec![random_rigid(&mut rng), random_rigid(&mut rng)]);
        let view = PosedVolumeView::new(&canonical, &weights, &bases).unwrap();
        let x = Vec3::new(0.2, -0.1, 0.4);
        assert_eq!(view.warp_point(x), Warp::Mapped(bases.get(1).apply(x)));
    }

    #[test]
    fn translation_blend() {
        let gb = GridBox::new(Vec3::splat(-3.0), Vec3::splat(3.0), [7; 3]).unwrap();
        let weights = uniform_weights(gb, &[0.3, 0.3]);
        let canonical = VoxelGrid::zeros(gb, 4);
        let bases = MotionBasisSet::from_transforms(vec![
            RigidTransform::translation(Vec3::X),
            RigidTransform::translation(Vec3::Y),
        ]);
        let view = PosedVolumeView::new(&canonical, &weights, &bases).unwrap();
        match view.warp_point(Vec3::ZERO) {
            Warp::Mapped(y) => assert!((y - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15),
            Warp::Unmapped => panic!(),
        }
    }

    #[test]
    fn mask_cases() {
        let gb = unit_box(5);
        let canonical = VoxelGrid::filled(gb, 4, 0.5);
        let far = MotionBasisSet::from_transforms(vec![RigidTransform::translation(Vec3::splat(10.0)); 2]);
        let weights = uniform_weights(gb, &[0.4, 0.3]);
        let view = PosedVolumeView::new(&canonical, &weights, &far).unwrap();
        assert_eq!(view.mask_at(Vec3::ZERO), 0.0);
        assert_eq!(view.warp_point(Vec3::ZERO), Warp::Unmapped);
        assert_eq!(view.sample_target(Vec3::ZERO), [0.0; 4]);

        let id = MotionBasisSet::identity(2);
        let view = PosedVolumeView::new(&canonical, &weights, &id).unwrap();
        assert!((view.mask_at(Vec3::ZERO) - 0.7).abs() < 1e-15);

        let single = uniform_weights(gb, &[1.0, 0.0]);
        let view = PosedVolumeView::new(&canonical, &single, &id).unwrap();
        assert_eq!(view.mask_at(Vec3::new(0.1, 0.1, 0.1)), 1.0);
    }

    #[test]
    fn mask_is_clamped_when_supports_overlap() {
        let gb = unit_box(5);
        let canonical = VoxelGrid::filled(gb, 4, 0.5);
        let bases = MotionBasisSet::identity(2);
        let mut weights = VoxelGrid::zeros(gb, 3);
        for n in 0..gb.voxel_count() {
            weights.voxel_mut(n).copy_from_slice(&[0.9, 0.8, 0.0]);
        }
        let view = PosedVolumeView::new(&canonical, &weights, &bases).unwrap();
        assert_eq!(view.mask_at(Vec3::ZERO), 1.0);
    }

    #[test]
    fn identity_pose_sample_is_masked_canonical() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let gb = unit_box(6);
        let weights = random_weights(&mut rng, gb, 2);
        let canonical = random_canonical(&mut rng, gb);
        let bases = MotionBasisSet::identity(2);
        let view = PosedVolumeView::new(&canonical, &weights, &bases).unwrap();
        let x = Vec3::new(0.11, -0.37, 0.52);
        let m = view.mask_at(x);
        let c = canonical.trilinear_sample(x);
        let got = view.sample_target(x);
        for ch in 0..4 {
            assert!((got[ch] - m * c[ch]).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_target_is_mask_times_warped_canonical() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let gb = unit_box(7);
        let weights = random_weights(&mut rng, gb, 3);
        let canonical = random_canonical(&mut rng, gb);
        let bases = MotionBasisSet::from_transforms((0..3).map(|_| random_rigid(&mut rng)).collect());
        let view = PosedVolumeView::new(&canonical, &weights, &bases).unwrap();
        for _ in 0..200 {
            let x = Vec3::new(rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2));
            let want = match view.warp_point(x) {
                Warp::Mapped(y) => {
                    let c = canonical.trilinear_sample(y);
                    let m = view.mask_at(x);
                    [m * c[0], m * c[1], m * c[2], m * c[3]]
                }
                Warp::Unmapped => [0.0; 4],
            };
            let got = view.sample_target(x);
            for ch in 0..4 {
                assert!((got[ch] - want[ch]).abs() < 1e-12);
            }
            assert!((0.0..=1.0).contains(&got[3]));
        }
    }

    #[test]
    fn rejects_mismatched_channels() {
        let gb = unit_box(3);
        let canonical = VoxelGrid::zeros(gb, 4);
        let weights = VoxelGrid::zeros(gb, 3);
        let bases = MotionBasisSet::identity(3);
        assert!(matches!(
            PosedVolumeView::new(&canonical, &weights, &bases),
            Err(DeformError::WeightChannels { weights: 3, bones: 3 })
        ));
        let bad = VoxelGrid::zeros(gb, 3);
        let bases = MotionBasisSet::identity(2);
        assert!(PosedVolumeView::new(&bad, &weights, &bases).is_err());
    }
}
