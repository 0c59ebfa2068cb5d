//! Pinhole cameras, ray marching with front-to-back compositing, and
//! background compositing.
//!
//! Camera space follows the usual vision convention: +x right, +y down,
//! +z forward.

use alloc::vec;
use alloc::vec::Vec;

use crate::deform::{PosedVolumeView, SampleTrace};
use crate::exec::Executor;
use crate::kinematics::RigidTransform;
use crate::math::{Aabb, Mat3, Vec3};
use crate::volume::GridBox;

/// Accumulated opacity at which marching stops.
pub const EARLY_STOP_ALPHA: f64 = 1.0 - 1e-4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("focal lengths must be positive")]
    BadFocal,
    #[error("image must be at least 1×1")]
    EmptyImage,
    #[error("camera eye coincides with its target")]
    DegenerateLookAt,
    #[error("background image has {got} values, expected {expected}")]
    BackgroundSize { expected: usize, got: usize },
    #[error("step must be positive")]
    BadStep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// `fx = fy = 0.8·width`, principal point at the image centre.
    pub fn centered(width: usize, height: usize) -> Self {
        let f = 0.8 * width as f64;
        Self {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// World→camera extrinsic plus pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub extrinsic: RigidTransform,
    pub intrinsics: Intrinsics,
}

impl Camera {
    pub fn new(extrinsic: RigidTransform, intrinsics: Intrinsics) -> Result<Self, RenderError> {
        if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
            return Err(RenderError::BadFocal);
        }
        if intrinsics.width == 0 || intrinsics.height == 0 {
            return Err(RenderError::EmptyImage);
        }
        Ok(Self {
            extrinsic,
            intrinsics,
        })
    }

    /// Camera at `eye` looking at `target`. Image "up" follows `up` unless
    /// the view is parallel to it, in which case world +y is used instead.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        intrinsics: Intrinsics,
    ) -> Result<Self, RenderError> {
        let forward = (target - eye).normalized().ok_or(RenderError::DegenerateLookAt)?;
        let right = forward
            .cross(up)
            .normalized()
            .or_else(|| forward.cross(Vec3::Y).normalized())
            .or_else(|| forward.cross(Vec3::X).normalized())
            .ok_or(RenderError::DegenerateLookAt)?;
        let down = forward.cross(right);
        let rotation = Mat3::from_row_vectors(right, down, forward);
        let extrinsic = RigidTransform::new(rotation, -(rotation * eye));
        Self::new(extrinsic, intrinsics)
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Optical centre in world space.
    pub fn center(&self) -> Vec3 {
        self.extrinsic.inverse().translation
    }

    /// World direction of the optical axis.
    pub fn forward(&self) -> Vec3 {
        self.extrinsic.rotation.row(2)
    }

    /// Pixel coordinates of a world point (continuous; pixel centres at +0.5),
    /// or `None` behind the camera.
    pub fn project(&self, x: Vec3) -> Option<(f64, f64)> {
        let c = self.extrinsic.apply(x);
        if c.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
    /// `false` when the ray misses the volume bounds; such rays are not marched.
    pub hit: bool,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// Ray through the centre of pixel `(px, py)`, clipped to `bounds`.
pub fn generate_ray(cam: &Camera, px: usize, py: usize, bounds: &Aabb) -> Ray {
    let k = &cam.intrinsics;
    let dir_cam = Vec3::new(
        (px as f64 + 0.5 - k.cx) / k.fx,
        (py as f64 + 0.5 - k.cy) / k.fy,
        1.0,
    );
    let rt = cam.extrinsic.rotation.transpose();
    let direction = (rt * dir_cam).normalized().expect("camera ray has unit z");
    let origin = cam.center();
    match bounds.ray_interval(origin, direction) {
        Some((near, far)) => Ray {
            origin,
            direction,
            near,
            far,
            hit: true,
        },
        None => Ray {
            origin,
            direction,
            near: 0.0,
            far: 0.0,
            hit: false,
        },
    }
}

/// Something that can be ray marched: RGBα at a world point.
pub trait TargetVolume: Sync {
    type Scratch;
    fn scratch(&self) -> Self::Scratch;
    /// RGB (not premultiplied) and α at `x`.
    fn sample(&self, x: Vec3, scratch: &mut Self::Scratch) -> [f64; 4];
    /// Region outside of which the volume is empty.
    fn bounds(&self) -> Aabb;
}

impl TargetVolume for PosedVolumeView<'_> {
    type Scratch = SampleTrace;

    fn scratch(&self) -> SampleTrace {
        self.new_trace()
    }

    #[inline]
    fn sample(&self, x: Vec3, scratch: &mut SampleTrace) -> [f64; 4] {
        self.trace(x, scratch)
    }

    fn bounds(&self) -> Aabb {
        self.target_bounds()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchSettings {
    /// World distance between samples.
    pub step: f64,
    /// Step length at which a sample's opacity equals its α.
    pub step_ref: f64,
    /// Stop once accumulated α reaches [`EARLY_STOP_ALPHA`]. Disabled when
    /// differentiating so the adjoint sees exactly the forward samples.
    pub early_stop: bool,
}

impl MarchSettings {
    pub fn new(step: f64, step_ref: f64) -> Result<Self, RenderError> {
        if !(step > 0.0 && step_ref > 0.0) {
            return Err(RenderError::BadStep);
        }
        Ok(Self {
            step,
            step_ref,
            early_stop: true,
        })
    }

    /// Half-voxel steps with a one-voxel reference length.
    pub fn for_grid(grid: &GridBox) -> Self {
        let edge = grid.voxel_edge();
        Self {
            step: 0.5 * edge,
            step_ref: edge,
            early_stop: true,
        }
    }

    pub fn differentiable(self) -> Self {
        Self {
            early_stop: false,
            ..self
        }
    }

    #[inline]
    pub fn opacity(&self, alpha: f64) -> f64 {
        (alpha * self.step / self.step_ref).clamp(0.0, 1.0)
    }

    /// Sample distances `near + (m + 0.5)·step` strictly before `far`.
    pub fn sample_count(&self, ray: &Ray) -> usize {
        if !ray.hit {
            return 0;
        }
        let span = (ray.far - ray.near) / self.step - 0.5;
        if span <= 0.0 {
            0
        } else {
            crate::math::floor(span) as usize + 1
        }
    }

    #[inline]
    pub fn sample_distance(&self, ray: &Ray, m: usize) -> f64 {
        ray.near + (m as f64 + 0.5) * self.step
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchResult {
    /// Premultiplied colour.
    pub rgb: [f64; 3],
    pub alpha: f64,
    /// Number of samples evaluated.
    pub samples: usize,
}

pub fn march_ray_with<V: TargetVolume>(
    vol: &V,
    ray: &Ray,
    settings: &MarchSettings,
    scratch: &mut V::Scratch,
) -> MarchResult {
    let mut rgb = [0.0; 3];
    let mut acc = 0.0;
    let n = settings.sample_count(ray);
    let mut taken = 0;
    for m in 0..n {
        let s = vol.sample(ray.at(settings.sample_distance(ray, m)), scratch);
        taken += 1;
        let a = settings.opacity(s[3]);
        let t = 1.0 - acc;
        for c in 0..3 {
            rgb[c] += t * a * s[c];
        }
        acc += t * a;
        if settings.early_stop && acc >= EARLY_STOP_ALPHA {
            break;
        }
    }
    MarchResult {
        rgb,
        alpha: acc,
        samples: taken,
    }
}

/// Front-to-back compositing along one ray.
pub fn march_ray<V: TargetVolume>(vol: &V, ray: &Ray, settings: &MarchSettings) -> MarchResult {
    let mut scratch = vol.scratch();
    march_ray_with(vol, ray, settings, &mut scratch)
}

/// Premultiplied colour and coverage per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl RenderedImage {
    pub fn pixel_rgb(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn pixel_alpha(&self, x: usize, y: usize) -> f64 {
        self.alpha[y * self.width + x]
    }
}

/// March every pixel. One job per row, so the result is independent of the
/// executor.
pub fn render_image<V: TargetVolume, E: Executor>(
    vol: &V,
    cam: &Camera,
    settings: &MarchSettings,
    exec: &E,
) -> RenderedImage {
    let (w, h) = (cam.width(), cam.height());
    let bounds = vol.bounds();
    let rows = exec.map(h, |y| {
        let mut scratch = vol.scratch();
        let mut rgb = Vec::with_capacity(3 * w);
        let mut alpha = Vec::with_capacity(w);
        for x in 0..w {
            let ray = generate_ray(cam, x, y, &bounds);
            let r = march_ray_with(vol, &ray, settings, &mut scratch);
            rgb.extend_from_slice(&r.rgb);
            alpha.push(r.alpha);
        }
        (rgb, alpha)
    });
    let mut img = RenderedImage {
        width: w,
        height: h,
        rgb: Vec::with_capacity(3 * w * h),
        alpha: Vec::with_capacity(w * h),
    };
    for (rgb, alpha) in rows {
        img.rgb.extend(rgb);
        img.alpha.extend(alpha);
    }
    img
}

#[derive(Debug, Clone, Copy)]
pub enum Background<'a> {
    Solid([f64; 3]),
    /// Interleaved RGB, same size as the foreground.
    Image(&'a [f64]),
}

impl Background<'_> {
    #[inline]
    pub fn at(&self, pixel: usize) -> [f64; 3] {
        match self {
            Background::Solid(c) => *c,
            Background::Image(d) => [d[3 * pixel], d[3 * pixel + 1], d[3 * pixel + 2]],
        }
    }
}

/// `I + (1 − α)·I_bg` per pixel and channel.
pub fn composite(img: &RenderedImage, bg: Background<'_>) -> Result<Vec<f64>, RenderError> {
    let n = img.width * img.height;
    if let Background::Image(d) = bg {
        if d.len() != 3 * n {
            return Err(RenderError::BackgroundSize {
                expected: 3 * n,
                got: d.len(),
            });
        }
    }
    let mut out = vec![0.0; 3 * n];
    for p in 0..n {
        let b = bg.at(p);
        let t = 1.0 - img.alpha[p];
        for c in 0..3 {
            out[3 * p + c] = img.rgb[3 * p + c] + t * b[c];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::kinematics::MotionBasisSet;
    use crate::volume::VoxelGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_camera(w: usize, h: usize) -> Camera {
        Camera::new(RigidTransform::IDENTITY, Intrinsics::centered(w, h)).unwrap()
    }

    #[test]
    fn principal_ray_points_forward() {
        let cam = identity_camera(4, 4);
        let bounds = Aabb::new(Vec3::new(-1.0, -1.0, 1.0), Vec3::new(1.0, 1.0, 2.0));
        // pixel (1.5, 1.5)+0.5 is the principal point (2, 2)
        let ray = generate_ray(&cam, 1, 1, &bounds);
        let k = cam.intrinsics;
        let off = Vec3::new((1.5 - k.cx) / k.fx, (1.5 - k.cy) / k.fy, 1.0).normalized().unwrap();
        assert!((ray.direction - off).norm() < 1e-15);

        let mut odd = Intrinsics::centered(3, 3);
        odd.cx = 1.5;
        odd.cy = 1.5;
        let cam = Camera::new(RigidTransform::IDENTITY, odd).unwrap();
        let ray = generate_ray(&cam, 1, 1, &bounds);
        assert!((ray.direction - Vec3::Z).norm() < 1e-15);
        assert!(ray.hit);
        assert!((ray.near - 1.0).abs() < 1e-12 && (ray.far - 2.0).abs() < 1e-12);
    }

    #[test]
    fn off_axis_ray_is_45_degrees() {
        let mut k = Intrinsics::centered(64, 64);
        k.fx = 10.0;
        k.cx = 0.5;
        let cam = Camera::new(RigidTransform::IDENTITY, k).unwrap();
        let bounds = Aabb::new(Vec3::splat(-100.0), Vec3::splat(100.0));
        let ray = generate_ray(&cam, 10, 31, &bounds);
        let want = Vec3::new(1.0, (31.5 - k.cy) / k.fy, 1.0).normalized().unwrap();
        assert!((ray.direction - want).norm() < 1e-15);
        assert!((ray.direction.x - ray.direction.z).abs() < 1e-15);
    }

    #[test]
    fn missing_ray_is_flagged() {
        let cam = identity_camera(4, 4);
        let bounds = Aabb::new(Vec3::new(5.0, 5.0, 5.0), Vec3::new(6.0, 6.0, 6.0));
        let ray = generate_ray(&cam, 0, 0, &bounds);
        assert!(!ray.hit);
        assert_eq!(MarchSettings::new(0.1, 0.1).unwrap().sample_count(&ray), 0);
    }

    #[test]
    fn look_at_maps_target_to_principal_point() {
        let k = Intrinsics::centered(32, 32);
        let cam = Camera::look_at(Vec3::new(2.0, -1.0, 0.5), Vec3::ZERO, Vec3::Z, k).unwrap();
        let (u, v) = cam.project(Vec3::ZERO).unwrap();
        assert!((u - 16.0).abs() < 1e-12 && (v - 16.0).abs() < 1e-12);
        assert!((cam.center() - Vec3::new(2.0, -1.0, 0.5)).norm() < 1e-12);
        // world up projects upward in the image
        let (_, v_up) = cam.project(Vec3::new(0.0, 0.0, 0.1)).unwrap();
        assert!(v_up < 16.0);
        // looking straight down the up vector still works
        assert!(Camera::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::ZERO, Vec3::Z, k).is_ok());
    }

    /// Samples by distance along the ray, independent of position.
    struct Slabs {
        samples: Vec<[f64; 4]>,
        step: f64,
    }

    impl TargetVolume for Slabs {
        type Scratch = ();
        fn scratch(&self) {}
        fn sample(&self, x: Vec3, _: &mut ()) -> [f64; 4] {
            let m = crate::math::floor(x.z / self.step) as usize;
            self.samples.get(m).copied().unwrap_or([0.0; 4])
        }
        fn bounds(&self) -> Aabb {
            Aabb::new(Vec3::splat(-10.0), Vec3::splat(10.0))
        }
    }

    fn z_ray(len: f64) -> Ray {
        Ray {
            origin: Vec3::ZERO,
            direction: Vec3::Z,
            near: 0.0,
            far: len,
            hit: true,
        }
    }

    #[test]
    fn empty_volume_accumulates_nothing() {
        let vol = Slabs { samples: vec![], step: 0.1 };
        let r = march_ray(&vol, &z_ray(1.0), &MarchSettings::new(0.1, 0.1).unwrap());
        assert_eq!(r.rgb, [0.0; 3]);
        assert_eq!(r.alpha, 0.0);
    }

    #[test]
    fn opaque_first_sample_stops_march() {
        let vol = Slabs {
            samples: vec![[1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 0.0, 1.0]],
            step: 0.1,
        };
        let r = march_ray(&vol, &z_ray(1.0), &MarchSettings::new(0.1, 0.1).unwrap());
        assert_eq!(r.rgb, [1.0, 0.0, 0.0]);
        assert_eq!(r.alpha, 1.0);
        assert_eq!(r.samples, 1);
    }

    #[test]
    fn two_sample_recurrence() {
        let vol = Slabs {
            samples: vec![[1.0, 0.0, 0.0, 0.5], [0.0, 0.0, 1.0, 1.0]],
            step: 0.25,
        };
        let r = march_ray(&vol, &z_ray(1.0), &MarchSettings::new(0.25, 0.25).unwrap());
        assert_eq!(r.rgb, [0.5, 0.0, 0.5]);
        assert_eq!(r.alpha, 1.0);
        assert_eq!(r.samples, 2);
    }

    #[test]
    fn sample_positions_are_segment_midpoints() {
        let s = MarchSettings::new(0.25, 0.25).unwrap();
        let ray = z_ray(1.0);
        assert_eq!(s.sample_count(&ray), 4);
        assert_eq!(s.sample_distance(&ray, 0), 0.125);
        assert_eq!(s.sample_distance(&ray, 3), 0.875);
        assert_eq!(s.sample_count(&z_ray(0.1)), 0);
    }

    #[test]
    fn alpha_monotone_and_energy_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let samples: Vec<[f64; 4]> = (0..64)
            .map(|_| [rng.gen_range(0.0..0.9), rng.gen_range(0.0..0.9), rng.gen_range(0.0..0.9), rng.gen_range(0.0..0.3)])
            .collect();
        let vol = Slabs { samples: samples.clone(), step: 0.1 };
        let settings = MarchSettings::new(0.1, 0.1).unwrap().differentiable();
        let mut prev = 0.0;
        for len in 1..=64 {
            let r = march_ray(&vol, &z_ray(len as f64 * 0.1), &settings);
            assert!(r.alpha >= prev && r.alpha <= 1.0 + 1e-9);
            for c in 0..3 {
                assert!(r.rgb[c] <= r.alpha * 0.9 + 1e-9);
            }
            prev = r.alpha;
        }
    }

    #[test]
    fn composite_cases() {
        let img = RenderedImage {
            width: 3,
            height: 1,
            rgb: vec![0.3, 0.4, 0.5, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0],
            alpha: vec![1.0, 0.0, 0.25],
        };
        let out = composite(&img, Background::Solid([1.0, 1.0, 1.0])).unwrap();
        assert_eq!(&out[0..3], &[0.3, 0.4, 0.5]);
        assert_eq!(&out[3..6], &[1.0, 1.0, 1.0]);
        assert!((out[6] - 0.95).abs() < 1e-15);
        assert!((out[7] - 0.75).abs() < 1e-15 && (out[8] - 0.75).abs() < 1e-15);
        let bad = [0.0; 3];
        assert!(matches!(
            composite(&img, Background::Image(&bad)),
            Err(RenderError::BackgroundSize { expected: 9, got: 3 })
        ));
    }

    #[test]
    fn opaque_cube_covers_its_silhouette() {
        let gb = GridBox::new(Vec3::splat(-0.5), Vec3::splat(0.5), [24; 3]).unwrap();
        let mut canonical = VoxelGrid::filled(gb, 4, 1.0);
        for n in 0..gb.voxel_count() {
            canonical.voxel_mut(n).copy_from_slice(&[0.8, 0.2, 0.1, 1.0]);
        }
        let mut weights = VoxelGrid::zeros(gb, 2);
        for n in 0..gb.voxel_count() {
            weights.voxel_mut(n)[0] = 1.0;
        }
        let weights = weights.with_exterior_one_hot(1);
        let bases = MotionBasisSet::identity(1);
        let view = PosedVolumeView::new(&canonical, &weights, &bases).unwrap();
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::ZERO, Vec3::Y, Intrinsics::centered(16, 16)).unwrap();
        let img = render_image(&view, &cam, &MarchSettings::for_grid(&gb), &Sequential);
        // cube half-width 0.5 at distance 2.5..3.5: the central pixels hit, corners miss
        assert!(img.pixel_alpha(8, 8) >= EARLY_STOP_ALPHA);
        assert!(img.pixel_alpha(7, 7) >= EARLY_STOP_ALPHA);
        assert_eq!(img.pixel_alpha(0, 0), 0.0);
        assert_eq!(img.pixel_alpha(15, 0), 0.0);
        let c = img.pixel_rgb(8, 8);
        assert!((c[0] - 0.8).abs() < 1e-3);
    }

    #[test]
    fn empty_canonical_renders_transparent() {
        let gb = GridBox::new(Vec3::splat(-0.5), Vec3::splat(0.5), [6; 3]).unwrap();
        let canonical = VoxelGrid::zeros(gb, 4);
        let weights = VoxelGrid::filled(gb, 2, 0.5).with_exterior_one_hot(1);
        let bases = MotionBasisSet::identity(1);
        let view = PosedVolumeView::new(&canonical, &weights, &bases).unwrap();
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::ZERO, Vec3::Y, Intrinsics::centered(8, 8)).unwrap();
        let img = render_image(&view, &cam, &MarchSettings::for_grid(&gb), &Sequential);
        assert!(img.alpha.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn halving_the_step_barely_changes_a_smooth_volume() {
        let gb = GridBox::new(Vec3::splat(-0.5), Vec3::splat(0.5), [20; 3]).unwrap();
        let mut canonical = VoxelGrid::zeros(gb, 4);
        for n in 0..gb.voxel_count() {
            let p = gb.node_position_of(n);
            let g = crate::math::exp(-p.norm_squared() / (2.0 * 0.15 * 0.15));
            canonical
                .voxel_mut(n)
                .copy_from_slice(&[0.5 + 0.4 * p.x, 0.6, 0.5 - 0.4 * p.z, 0.6 * g]);
        }
        let weights = VoxelGrid::filled(gb, 2, 0.0);
        let mut weights = weights.with_exterior_one_hot(1);
        for n in 0..gb.voxel_count() {
            weights.voxel_mut(n)[0] = 1.0;
        }
        let bases = MotionBasisSet::identity(1);
        let view = PosedVolumeView::new(&canonical, &weights, &bases).unwrap();
        let cam = Camera::look_at(Vec3::new(0.3, -2.0, 0.4), Vec3::ZERO, Vec3::Z, Intrinsics::centered(16, 16)).unwrap();
        let coarse = MarchSettings::for_grid(&gb);
        let fine = MarchSettings {
            step: 0.5 * coarse.step,
            ..coarse
        };
        let a = render_image(&view, &cam, &coarse, &Sequential);
        let b = render_image(&view, &cam, &fine, &Sequential);
        let rms = |x: &[f64], y: &[f64]| {
            (x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64).sqrt()
        };
        assert!(a.alpha.iter().cloned().fold(0.0, f64::max) > 0.3);
        assert!(rms(&a.rgb, &b.rgb) < 0.02);
        assert!(rms(&a.alpha, &b.alpha) < 0.02);
    }
}
