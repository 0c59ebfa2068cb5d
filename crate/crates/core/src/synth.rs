//! Procedural ground-truth character and the synthetic capture protocol:
//! camera placement, random poses and the train/test split.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::deform::PosedVolumeView;
use crate::exec::Executor;
use crate::kinematics::{motion_bases, KinematicsError, Pose, Skeleton};
use crate::math::{acos, cos, sin, sqrt, Vec3};
use crate::render::{render_image, Camera, Intrinsics, MarchSettings, RenderError, RenderedImage};
use crate::rng::stream;
use crate::volume::{bone_segments, BoneSegment, GridBox, VolumeError, VoxelGrid};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("figure has {bones} bones but {radii} radii and {colors} colors")]
    LengthMismatch {
        bones: usize,
        radii: usize,
        colors: usize,
    },
    #[error("bone {0}: capsule radius must be positive")]
    BadRadius(usize),
    #[error("bone {0}: color components must lie in [0, 1]")]
    BadColor(usize),
    #[error("capsule alpha must lie in (0, 1]")]
    BadAlpha,
    #[error("bone {0}: capsule leaves the grid box")]
    CapsuleOutsideBox(usize),
    #[error("need at least one {0}")]
    Empty(&'static str),
    #[error("max angle must lie in (0, pi)")]
    BadMaxAngle,
    #[error("holdout fraction must lie in [0, 1)")]
    BadHoldout,
    #[error("test poses exist but no camera is held out")]
    NoTestCameras,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// A skeleton dressed in one capsule per bone.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureSpec {
    pub skeleton: Skeleton,
    pub radii: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    /// α of every voxel inside a capsule.
    pub alpha: f64,
}

impl FigureSpec {
    pub fn new(skeleton: Skeleton, radii: Vec<f64>, colors: Vec<[f64; 3]>) -> Result<Self, SynthError> {
        let spec = Self {
            skeleton,
            radii,
            colors,
            alpha: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let k = self.skeleton.bone_count();
        if self.radii.len() != k || self.colors.len() != k {
            return Err(SynthError::LengthMismatch {
                bones: k,
                radii: self.radii.len(),
                colors: self.colors.len(),
            });
        }
        for (i, r) in self.radii.iter().enumerate() {
            if !(*r > 0.0 && r.is_finite()) {
                return Err(SynthError::BadRadius(i));
            }
        }
        for (i, c) in self.colors.iter().enumerate() {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(SynthError::BadColor(i));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(SynthError::BadAlpha);
        }
        Ok(())
    }

    /// Four-bone figure: pelvis, torso and two arms held out sideways.
    pub fn desk() -> Self {
        let skeleton = Skeleton::new(
            vec![None, Some(0), Some(1), Some(1)],
            vec![
                Vec3::new(0.0, 0.0, -0.2),
                Vec3::new(0.0, 0.0, 0.45),
                Vec3::new(0.42, 0.0, 0.0),
                Vec3::new(-0.42, 0.0, 0.0),
            ],
            vec![0.12, 0.1, 0.06, 0.06],
        )
        .expect("desk skeleton is valid");
        Self {
            skeleton,
            radii: vec![0.17, 0.12, 0.075, 0.075],
            colors: vec![
                [0.85, 0.3, 0.2],
                [0.2, 0.55, 0.9],
                [0.3, 0.85, 0.35],
                [0.95, 0.8, 0.2],
            ],
            alpha: 1.0,
        }
    }

    pub fn rest_pose(&self) -> Pose {
        Pose::rest(&self.skeleton)
    }

    /// Grid box holding every rest-pose capsule with `margin` to spare.
    pub fn bounding_box(&self, margin: f64, dims: [usize; 3]) -> Result<GridBox, SynthError> {
        let segs = bone_segments(&self.skeleton, &self.rest_pose())?;
        let mut lo = Vec3::splat(f64::MAX);
        let mut hi = Vec3::splat(f64::MIN);
        for (s, r) in segs.iter().zip(&self.radii) {
            let pad = Vec3::splat(r + margin);
            lo = lo.min(s.start.min(s.end) - pad);
            hi = hi.max(s.start.max(s.end) + pad);
        }
        Ok(GridBox::new(lo, hi, dims)?)
    }

    /// Bone owning `x` in the rest pose and the axial parameter of its
    /// closest point: the nearest capsule containing `x`, ties to the lower
    /// index.
    pub fn owner(&self, segs: &[BoneSegment], x: Vec3) -> Option<(usize, f64, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for (k, seg) in segs.iter().enumerate() {
            let (d, t) = seg.distance(x);
            if d <= self.radii[k] && best.is_none_or(|b| d < b.1) {
                best = Some((k, d, t));
            }
        }
        best.map(|(k, d, t)| (k, t, d))
    }

    /// Base color shaded from 55% at the parent end to full at the child end.
    pub fn color(&self, bone: usize, t: f64) -> [f64; 3] {
        let g = 0.55 + 0.45 * t;
        let c = self.colors[bone];
        [c[0] * g, c[1] * g, c[2] * g]
    }
}

/// Ground-truth volumes of a [`FigureSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct FigureVolumes {
    pub canonical: VoxelGrid,
    pub weights: VoxelGrid,
}

fn check_inside(spec: &FigureSpec, segs: &[BoneSegment], gb: &GridBox) -> Result<(), SynthError> {
    for (k, (s, r)) in segs.iter().zip(&spec.radii).enumerate() {
        let lo = s.start.min(s.end) - Vec3::splat(*r);
        let hi = s.start.max(s.end) + Vec3::splat(*r);
        if !(gb.contains(lo) && gb.contains(hi)) {
            return Err(SynthError::CapsuleOutsideBox(k));
        }
    }
    Ok(())
}

/// Voxelize the figure at its rest pose: capsule color with α on the
/// canonical grid and a one-hot owner on the weight grid (background last).
pub fn make_figure(
    spec: &FigureSpec,
    canonical_box: GridBox,
    weight_box: GridBox,
) -> Result<FigureVolumes, SynthError> {
    spec.validate()?;
    let segs = bone_segments(&spec.skeleton, &spec.rest_pose())?;
    check_inside(spec, &segs, &canonical_box)?;
    check_inside(spec, &segs, &weight_box)?;
    let k = spec.skeleton.bone_count();

    let mut canonical = VoxelGrid::zeros(canonical_box, 4);
    for node in 0..canonical_box.voxel_count() {
        let x = canonical_box.node_position_of(node);
        if let Some((bone, t, _)) = spec.owner(&segs, x) {
            let c = spec.color(bone, t);
            canonical.voxel_mut(node).copy_from_slice(&[c[0], c[1], c[2], spec.alpha]);
        }
    }

    let mut weights = VoxelGrid::zeros(weight_box, k + 1).with_exterior_one_hot(k);
    for node in 0..weight_box.voxel_count() {
        let x = weight_box.node_position_of(node);
        let ch = spec.owner(&segs, x).map_or(k, |o| o.0);
        weights.voxel_mut(node)[ch] = 1.0;
    }
    Ok(FigureVolumes { canonical, weights })
}

/// Render `volumes` posed at `pose`.
pub fn render_posed<E: Executor>(
    volumes: &FigureVolumes,
    skel: &Skeleton,
    canonical: &Pose,
    pose: &Pose,
    camera: &Camera,
    march: &MarchSettings,
    exec: &E,
) -> Result<RenderedImage, SynthError> {
    let bases = motion_bases(skel, canonical, pose)?;
    let view = PosedVolumeView::new(&volumes.canonical, &volumes.weights, &bases)
        .map_err(|_| SynthError::Volume(VolumeError::ShapeMismatch))?;
    Ok(render_image(&view, camera, march, exec))
}

/// `n` unit directions on an offset Fibonacci lattice. Two points are
/// placed antipodally, which the lattice alone does not do.
pub fn fibonacci_directions(n: usize) -> Vec<Vec3> {
    if n == 1 {
        return vec![Vec3::X];
    }
    if n == 2 {
        return vec![Vec3::X, -Vec3::X];
    }
    let golden = core::f64::consts::PI * (3.0 - sqrt(5.0));
    (0..n)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / n as f64;
            let r = sqrt((1.0 - z * z).max(0.0));
            let phi = golden * i as f64;
            Vec3::new(r * cos(phi), r * sin(phi), z)
        })
        .collect()
}

/// Cameras at `radius` along [`fibonacci_directions`], each looking at the
/// origin with +z up.
pub fn sample_cameras(n: usize, radius: f64, intrinsics: Intrinsics) -> Result<Vec<Camera>, SynthError> {
    fibonacci_directions(n)
        .into_iter()
        .map(|d| Ok(Camera::look_at(d * radius, Vec3::ZERO, Vec3::Z, intrinsics)?))
        .collect()
}

/// Angle between two directions.
pub fn angle_between(a: Vec3, b: Vec3) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    acos(c.clamp(-1.0, 1.0))
}

/// Poses with every axis-angle component uniform in `[-max_angle, max_angle]`.
/// Draws within 1e-3 of the rest pose are rejected.
pub fn sample_poses(skel: &Skeleton, n: usize, max_angle: f64, seed: u64) -> Result<Vec<Pose>, SynthError> {
    if !(max_angle > 0.0 && max_angle < core::f64::consts::PI) {
        return Err(SynthError::BadMaxAngle);
    }
    let k = skel.bone_count();
    let mut rng = stream(&[seed, 0x9053]);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let angles: Vec<Vec3> = (0..k)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-max_angle..=max_angle),
                    rng.gen_range(-max_angle..=max_angle),
                    rng.gen_range(-max_angle..=max_angle),
                )
            })
            .collect();
        let dist = sqrt(angles.iter().map(|a| a.norm_squared()).sum());
        if dist < 1e-3 {
            continue;
        }
        out.push(Pose::from_angles(skel, angles)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One pose seen by one camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedFrame {
    pub pose: usize,
    pub camera: usize,
    pub split: Split,
}

/// How poses and cameras are divided between training and testing.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub frames: Vec<PlannedFrame>,
    pub test_cameras: Vec<usize>,
    pub train_cameras: Vec<usize>,
}

impl SplitPlan {
    pub fn count(&self, split: Split) -> usize {
        self.frames.iter().filter(|f| f.split == split).count()
    }
}

fn holdout(n: usize, frac: f64) -> Result<usize, SynthError> {
    if !(0.0..1.0).contains(&frac) {
        return Err(SynthError::BadHoldout);
    }
    Ok(crate::math::round(frac * n as f64) as usize)
}

/// Hold out `round(frac · n)` poses and cameras; every pose is then seen by
/// exactly one random camera of its own split. Frames are listed in pose
/// order.
pub fn plan_split(
    n_poses: usize,
    n_cameras: usize,
    pose_holdout: f64,
    camera_holdout: f64,
    seed: u64,
) -> Result<SplitPlan, SynthError> {
    if n_poses == 0 {
        return Err(SynthError::Empty("pose"));
    }
    if n_cameras == 0 {
        return Err(SynthError::Empty("camera"));
    }
    let hp = holdout(n_poses, pose_holdout)?;
    let hc = holdout(n_cameras, camera_holdout)?;
    if hp > 0 && hc == 0 {
        return Err(SynthError::NoTestCameras);
    }
    if hc == n_cameras && hp < n_poses {
        return Err(SynthError::Empty("training camera"));
    }
    let mut poses: Vec<usize> = (0..n_poses).collect();
    poses.shuffle(&mut stream(&[seed, 0x5011, 0]));
    let mut cams: Vec<usize> = (0..n_cameras).collect();
    cams.shuffle(&mut stream(&[seed, 0x5011, 1]));
    let mut test_pose = vec![false; n_poses];
    for &p in &poses[..hp] {
        test_pose[p] = true;
    }
    let mut test_cameras = cams[..hc].to_vec();
    let mut train_cameras = cams[hc..].to_vec();
    test_cameras.sort_unstable();
    train_cameras.sort_unstable();

    let mut pick = stream(&[seed, 0x5011, 2]);
    let frames = (0..n_poses)
        .map(|p| {
            let (split, pool) = if test_pose[p] {
                (Split::Test, &test_cameras)
            } else {
                (Split::Train, &train_cameras)
            };
            PlannedFrame {
                pose: p,
                camera: pool[pick.gen_range(0..pool.len())],
                split,
            }
        })
        .collect();
    Ok(SplitPlan {
        frames,
        test_cameras,
        train_cameras,
    })
}

/// Synthetic capture setup. Held-out cameras sit on a sphere shrunk by
/// `test_radius / train_radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureRig {
    pub cameras: usize,
    pub train_radius: f64,
    pub test_radius: f64,
    pub intrinsics: Intrinsics,
}

impl CaptureRig {
    pub fn new(cameras: usize, width: usize, height: usize) -> Self {
        let mut k = Intrinsics::centered(width, height);
        k.fx = width as f64;
        k.fy = width as f64;
        Self {
            cameras,
            train_radius: 2.25,
            test_radius: 1.5,
            intrinsics: k,
        }
    }

    pub fn camera(&self, index: usize, split: Split) -> Result<Camera, SynthError> {
        let d = fibonacci_directions(self.cameras)[index];
        let r = match split {
            Split::Train => self.train_radius,
            Split::Test => self.test_radius,
        };
        Ok(Camera::look_at(d * r, Vec3::ZERO, Vec3::Z, self.intrinsics)?)
    }
}
