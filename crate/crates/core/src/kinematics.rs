//! Skeletons, axis-angle poses and the per-bone motion bases that carry
//! target-pose points back into the canonical pose.
//!
//! Bone `k` is the segment from joint `k` to its parent; the root bone is
//! anchored at the root joint. Weight channels are indexed by the same `k`.

use alloc::vec::Vec;

use crate::math::{cos, sin, sqrt, Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("skeleton must contain at least one bone")]
    EmptySkeleton,
    #[error("bone {bone}: parent {parent} must precede it")]
    ParentOrder { bone: usize, parent: usize },
    #[error("bone 0 must be the root and it is the only bone without a parent (bone {0} has none)")]
    RootCount(usize),
    #[error("skeleton arrays disagree in length: {parents} parents, {offsets} offsets, {sigmas} sigmas")]
    LengthMismatch {
        parents: usize,
        offsets: usize,
        sigmas: usize,
    },
    #[error("radial sigma of bone {0} must be positive and finite")]
    BadSigma(usize),
    #[error("pose has {got} entries, skeleton has {expected} bones")]
    PoseLength { expected: usize, got: usize },
    #[error("pose contains a non-finite value")]
    NonFinite,
    #[error("bone index {index} out of range for {count} bones")]
    IndexOutOfRange { index: usize, count: usize },
}

/// Kinematic tree in topological order (every parent index precedes its child).
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    parents: Vec<Option<usize>>,
    offsets: Vec<Vec3>,
    radial_sigma: Vec<f64>,
}

impl Skeleton {
    /// `offsets[k]` is joint `k`'s rest position in its parent's frame (world
    /// position for the root); `radial_sigma[k]` sizes bone `k`'s prior Gaussian.
    pub fn new(
        parents: Vec<Option<usize>>,
        offsets: Vec<Vec3>,
        radial_sigma: Vec<f64>,
    ) -> Result<Self, KinematicsError> {
        if parents.is_empty() {
            return Err(KinematicsError::EmptySkeleton);
        }
        if parents.len() != offsets.len() || parents.len() != radial_sigma.len() {
            return Err(KinematicsError::LengthMismatch {
                parents: parents.len(),
                offsets: offsets.len(),
                sigmas: radial_sigma.len(),
            });
        }
        for (k, p) in parents.iter().enumerate() {
            match (k, p) {
                (0, None) => {}
                (0, Some(p)) => return Err(KinematicsError::ParentOrder { bone: 0, parent: *p }),
                (k, None) => return Err(KinematicsError::RootCount(k)),
                (k, Some(p)) if *p >= k => {
                    return Err(KinematicsError::ParentOrder { bone: k, parent: *p })
                }
                _ => {}
            }
        }
        if offsets.iter().any(|o| !o.is_finite()) {
            return Err(KinematicsError::NonFinite);
        }
        if let Some(k) = radial_sigma.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(KinematicsError::BadSigma(k));
        }
        Ok(Self {
            parents,
            offsets,
            radial_sigma,
        })
    }

    pub fn bone_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, k: usize) -> Option<usize> {
        self.parents[k]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn offset(&self, k: usize) -> Vec3 {
        self.offsets[k]
    }

    pub fn offsets(&self) -> &[Vec3] {
        &self.offsets
    }

    pub fn radial_sigma(&self, k: usize) -> f64 {
        self.radial_sigma[k]
    }

    pub fn radial_sigmas(&self) -> &[f64] {
        &self.radial_sigma
    }

    /// World-space rest joint locations (offsets accumulated down the tree).
    pub fn rest_joints(&self) -> Vec<Vec3> {
        let mut joints: Vec<Vec3> = Vec::with_capacity(self.bone_count());
        for k in 0..self.bone_count() {
            let base = self.parents[k].map_or(Vec3::ZERO, |p| joints[p]);
            joints.push(base + self.offsets[k]);
        }
        joints
    }

    /// Ancestors of `k` from the root down to and including `k`.
    pub fn chain(&self, k: usize) -> Vec<usize> {
        let mut chain = Vec::new();
        let mut cur = Some(k);
        while let Some(i) = cur {
            chain.push(i);
            cur = self.parents[i];
        }
        chain.reverse();
        chain
    }

    fn check_index(&self, k: usize) -> Result<(), KinematicsError> {
        if k < self.bone_count() {
            Ok(())
        } else {
            Err(KinematicsError::IndexOutOfRange {
                index: k,
                count: self.bone_count(),
            })
        }
    }
}

/// Body pose `(J, Ω)`: world-space rest joints plus one axis-angle rotation
/// per joint, relative to the parent.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    joints: Vec<Vec3>,
    angles: Vec<Vec3>,
}

impl Pose {
    pub fn new(joints: Vec<Vec3>, angles: Vec<Vec3>) -> Result<Self, KinematicsError> {
        if joints.len() != angles.len() {
            return Err(KinematicsError::PoseLength {
                expected: joints.len(),
                got: angles.len(),
            });
        }
        if joints.iter().chain(angles.iter()).any(|v| !v.is_finite()) {
            return Err(KinematicsError::NonFinite);
        }
        Ok(Self { joints, angles })
    }

    /// Skeleton rest joints with the given angles.
    pub fn from_angles(skel: &Skeleton, angles: Vec<Vec3>) -> Result<Self, KinematicsError> {
        if angles.len() != skel.bone_count() {
            return Err(KinematicsError::PoseLength {
                expected: skel.bone_count(),
                got: angles.len(),
            });
        }
        Self::new(skel.rest_joints(), angles)
    }

    /// All-zero angles: the T-pose used as the default canonical pose.
    pub fn rest(skel: &Skeleton) -> Self {
        Self {
            joints: skel.rest_joints(),
            angles: alloc::vec![Vec3::ZERO; skel.bone_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn joints(&self) -> &[Vec3] {
        &self.joints
    }

    pub fn angles(&self) -> &[Vec3] {
        &self.angles
    }

    /// Same pose with every joint shifted by `d` (global root translation).
    pub fn translated(&self, d: Vec3) -> Self {
        Self {
            joints: self.joints.iter().map(|j| *j + d).collect(),
            angles: self.angles.clone(),
        }
    }

    fn check(&self, skel: &Skeleton) -> Result<(), KinematicsError> {
        if self.len() != skel.bone_count() {
            return Err(KinematicsError::PoseLength {
                expected: skel.bone_count(),
                got: self.len(),
            });
        }
        Ok(())
    }

    /// `j_i`: joint `i` expressed relative to its parent joint.
    fn local_offset(&self, skel: &Skeleton, i: usize) -> Vec3 {
        match skel.parent(i) {
            Some(p) => self.joints[i] - self.joints[p],
            None => self.joints[i],
        }
    }
}

/// Rigid motion `x ↦ A x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn translation(t: Vec3) -> Self {
        Self::new(Mat3::IDENTITY, t)
    }

    #[inline]
    pub fn apply(&self, x: Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Worst deviation from `AᵀA = I` and `det A = 1`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.rotation.transpose() * self.rotation;
        gram.max_abs_diff(&Mat3::IDENTITY)
            .max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn max_abs_diff(&self, o: &RigidTransform) -> f64 {
        let dt = self.translation - o.translation;
        self.rotation
            .max_abs_diff(&o.rotation)
            .max(dt.x.abs())
            .max(dt.y.abs())
            .max(dt.z.abs())
    }
}

/// Rotation matrix `exp([ω]×)` for an axis-angle vector.
pub fn rodrigues(w: Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let theta = sqrt(theta2);
    let k = Mat3::skew(w);
    let k2 = k * k;
    if theta < 1e-8 {
        // I + K + K²/2; the next term is O(θ³) and below roundoff here.
        return Mat3::IDENTITY + k + k2.scale(0.5);
    }
    let a = sin(theta) / theta;
    let b = (1.0 - cos(theta)) / theta2;
    Mat3::IDENTITY + k.scale(a) + k2.scale(b)
}

fn local_transform(skel: &Skeleton, pose: &Pose, i: usize) -> RigidTransform {
    RigidTransform::new(rodrigues(pose.angles[i]), pose.local_offset(skel, i))
}

/// `G_k(J, Ω)`: ordered product of `[R(ω_i) | j_i]` along the root-to-`k` chain.
pub fn world_transform(
    skel: &Skeleton,
    pose: &Pose,
    k: usize,
) -> Result<RigidTransform, KinematicsError> {
    skel.check_index(k)?;
    pose.check(skel)?;
    Ok(skel
        .chain(k)
        .into_iter()
        .fold(RigidTransform::IDENTITY, |acc, i| {
            acc.compose(&local_transform(skel, pose, i))
        }))
}

/// All `G_k` in one topological sweep.
pub fn world_transforms(
    skel: &Skeleton,
    pose: &Pose,
) -> Result<Vec<RigidTransform>, KinematicsError> {
    pose.check(skel)?;
    let mut out: Vec<RigidTransform> = Vec::with_capacity(skel.bone_count());
    for i in 0..skel.bone_count() {
        let local = local_transform(skel, pose, i);
        let g = match skel.parent(i) {
            Some(p) => out[p].compose(&local),
            None => local,
        };
        out.push(g);
    }
    Ok(out)
}

/// `F_k = G_k(canonical) · G_k(target)⁻¹`.
pub fn relative_transform(
    skel: &Skeleton,
    canonical: &Pose,
    target: &Pose,
    k: usize,
) -> Result<RigidTransform, KinematicsError> {
    let gc = world_transform(skel, canonical, k)?;
    let gt = world_transform(skel, target, k)?;
    Ok(gc.compose(&gt.inverse()))
}

/// Per-bone rigid maps from target-pose space into canonical space.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionBasisSet {
    bases: Vec<RigidTransform>,
}

impl MotionBasisSet {
    pub fn from_transforms(bases: Vec<RigidTransform>) -> Self {
        Self { bases }
    }

    pub fn identity(k: usize) -> Self {
        Self {
            bases: alloc::vec![RigidTransform::IDENTITY; k],
        }
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn get(&self, k: usize) -> &RigidTransform {
        &self.bases[k]
    }

    pub fn as_slice(&self) -> &[RigidTransform] {
        &self.bases
    }
}

/// `bases[k] = relative_transform(skel, canonical, target, k)` for every bone.
pub fn motion_bases(
    skel: &Skeleton,
    canonical: &Pose,
    target: &Pose,
) -> Result<MotionBasisSet, KinematicsError> {
    let gc = world_transforms(skel, canonical)?;
    let gt = world_transforms(skel, target)?;
    Ok(MotionBasisSet {
        bases: gc
            .iter()
            .zip(gt.iter())
            .map(|(c, t)| c.compose(&t.inverse()))
            .collect(),
    })
}
