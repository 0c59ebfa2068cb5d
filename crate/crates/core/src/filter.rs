//! Frame filtering for in-the-wild captures and crop normalization.
//!
//! Inputs are estimator outputs (person masks, model silhouettes, 2D and
//! projected 3D keypoints); nothing here runs an estimator.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{floor, sqrt};
use crate::render::Intrinsics;

/// Required silhouette coverage.
pub const COVERAGE_THRESHOLD: f64 = 0.95;
/// Default keypoint confidence floor.
pub const CONFIDENCE_FLOOR: f64 = 0.3;
/// Default mean keypoint distance, as a fraction of the box diagonal.
pub const POSE_TOLERANCE: f64 = 0.05;
/// Side of a normalized crop.
pub const CROP_SIZE: usize = 512;
/// Longer box side after normalization.
pub const CROP_SUBJECT: f64 = 400.0;

/// BODY_25 keypoint indices.
pub mod body25 {
    pub const R_WRIST: usize = 4;
    pub const L_WRIST: usize = 7;
    pub const R_ANKLE: usize = 11;
    pub const L_ANKLE: usize = 14;
    pub const LIMB_ENDS: [usize; 4] = [R_WRIST, L_WRIST, R_ANKLE, L_ANKLE];
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FilterError {
    #[error("masks differ in size: {0} vs {1} pixels")]
    MaskSize(usize, usize),
    #[error("model silhouette is empty")]
    EmptySilhouette,
    #[error("keypoint lists differ in length: {0} vs {1}")]
    KeypointCount(usize, usize),
    #[error("no keypoint reaches the confidence floor")]
    NoConfidentKeypoints,
    #[error("bounding box is degenerate")]
    DegenerateBox,
    #[error("image has {got} values, expected {expected}")]
    ImageSize { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// Pixel box `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn diagonal(&self) -> f64 {
        sqrt(self.width() * self.width() + self.height() * self.height())
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.width() > 0.0 && self.height() > 0.0 && self.diagonal().is_finite())
    }
}

/// `|I_pm ∩ I_sil| / |I_sil|`.
pub fn silhouette_coverage(person: &[bool], silhouette: &[bool]) -> Result<f64, FilterError> {
    if person.len() != silhouette.len() {
        return Err(FilterError::MaskSize(person.len(), silhouette.len()));
    }
    let sil = silhouette.iter().filter(|s| **s).count();
    if sil == 0 {
        return Err(FilterError::EmptySilhouette);
    }
    let both = person.iter().zip(silhouette).filter(|(p, s)| **p && **s).count();
    Ok(both as f64 / sil as f64)
}

pub fn coverage_passes(coverage: f64) -> bool {
    coverage >= COVERAGE_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSettings {
    pub confidence_floor: f64,
    pub pose_tolerance: f64,
    pub coverage_threshold: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            confidence_floor: CONFIDENCE_FLOOR,
            pose_tolerance: POSE_TOLERANCE,
            coverage_threshold: COVERAGE_THRESHOLD,
        }
    }
}

/// Mean distance between projected 3D joints and confident 2D detections,
/// divided by the box diagonal.
pub fn pose_discrepancy(
    projected: &[(f64, f64)],
    detected: &[Keypoint],
    bbox: &BBox,
    confidence_floor: f64,
) -> Result<f64, FilterError> {
    if projected.len() != detected.len() {
        return Err(FilterError::KeypointCount(projected.len(), detected.len()));
    }
    if bbox.is_degenerate() {
        return Err(FilterError::DegenerateBox);
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, k) in projected.iter().zip(detected) {
        if k.confidence >= confidence_floor {
            let (dx, dy) = (p.0 - k.x, p.1 - k.y);
            sum += sqrt(dx * dx + dy * dy);
            n += 1;
        }
    }
    if n == 0 {
        return Err(FilterError::NoConfidentKeypoints);
    }
    Ok(sum / n as f64 / bbox.diagonal())
}

pub fn pose_consistency(
    projected: &[(f64, f64)],
    detected: &[Keypoint],
    bbox: &BBox,
    settings: &FilterSettings,
) -> Result<bool, FilterError> {
    Ok(pose_discrepancy(projected, detected, bbox, settings.confidence_floor)? <= settings.pose_tolerance)
}

/// Both wrists and both ankles detected at or above the confidence floor.
pub fn full_body_check(detected: &[Keypoint], confidence_floor: f64) -> bool {
    body25::LIMB_ENDS
        .iter()
        .all(|&i| detected.get(i).is_some_and(|k| k.confidence >= confidence_floor))
}

/// Similarity `u' = s·u + (tx, ty)` taking the subject box to the crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl CropTransform {
    pub fn for_box(bbox: &BBox) -> Result<Self, FilterError> {
        if bbox.is_degenerate() {
            return Err(FilterError::DegenerateBox);
        }
        let scale = CROP_SUBJECT / bbox.width().max(bbox.height());
        let (cx, cy) = bbox.center();
        let half = CROP_SIZE as f64 / 2.0;
        Ok(Self {
            scale,
            tx: half - scale * cx,
            ty: half - scale * cy,
        })
    }

    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        (self.scale * u + self.tx, self.scale * v + self.ty)
    }

    pub fn invert(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.tx) / self.scale, (v - self.ty) / self.scale)
    }

    /// Intrinsics of the cropped image.
    pub fn intrinsics(&self, k: &Intrinsics) -> Intrinsics {
        Intrinsics {
            fx: k.fx * self.scale,
            fy: k.fy * self.scale,
            cx: self.scale * k.cx + self.tx,
            cy: self.scale * k.cy + self.ty,
            width: CROP_SIZE,
            height: CROP_SIZE,
        }
    }
}

/// A `CROP_SIZE²` crop with the same channel count as its source.
#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub image: Vec<f64>,
    pub mask: Vec<bool>,
    pub intrinsics: Intrinsics,
    pub transform: CropTransform,
}

fn bilinear(img: &[f64], w: usize, h: usize, ch: usize, u: f64, v: f64, out: &mut [f64]) {
    // pixel centres sit at half-integers
    let (x, y) = (u - 0.5, v - 0.5);
    if x < -0.5 || y < -0.5 || x > w as f64 - 0.5 || y > h as f64 - 0.5 {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let clampi = |a: f64, n: usize| (a.max(0.0) as usize).min(n - 1);
    let (fx, fy) = (floor(x), floor(y));
    let (ax, ay) = ((x - fx).clamp(0.0, 1.0), (y - fy).clamp(0.0, 1.0));
    let (x0, y0) = (clampi(fx, w), clampi(fy, h));
    let (x1, y1) = (clampi(fx + 1.0, w), clampi(fy + 1.0, h));
    for c in 0..ch {
        let p = |xx: usize, yy: usize| img[(yy * w + xx) * ch + c];
        out[c] = (1.0 - ay) * ((1.0 - ax) * p(x0, y0) + ax * p(x1, y0))
            + ay * ((1.0 - ax) * p(x0, y1) + ax * p(x1, y1));
    }
}

/// Resample `image` (interleaved, `channels` per pixel) and `mask` so the
/// subject box becomes a centred `CROP_SUBJECT`-long box in a `CROP_SIZE²`
/// frame. Pixels that come from outside the source are zero.
pub fn normalize_crop(
    image: &[f64],
    mask: &[bool],
    channels: usize,
    intrinsics: &Intrinsics,
    bbox: &BBox,
) -> Result<Crop, FilterError> {
    let (w, h) = (intrinsics.width, intrinsics.height);
    if image.len() != w * h * channels {
        return Err(FilterError::ImageSize {
            expected: w * h * channels,
            got: image.len(),
        });
    }
    if mask.len() != w * h {
        return Err(FilterError::MaskSize(mask.len(), w * h));
    }
    let t = CropTransform::for_box(bbox)?;
    let n = CROP_SIZE;
    let mut out = vec![0.0; n * n * channels];
    let mut out_mask = vec![false; n * n];
    let maskf: Vec<f64> = mask.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect();
    let mut m = [0.0];
    for y in 0..n {
        for x in 0..n {
            let (u, v) = t.invert(x as f64 + 0.5, y as f64 + 0.5);
            let i = y * n + x;
            bilinear(image, w, h, channels, u, v, &mut out[i * channels..(i + 1) * channels]);
            bilinear(&maskf, w, h, 1, u, v, &mut m);
            out_mask[i] = m[0] >= 0.5;
        }
    }
    Ok(Crop {
        image: out,
        mask: out_mask,
        intrinsics: t.intrinsics(intrinsics),
        transform: t,
    })
}

/// The checks in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    FullBody,
    PoseConsistency,
    Silhouette,
    /// Annotations absent or unreadable.
    Missing,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::FullBody => "full_body",
            Rule::PoseConsistency => "pose_consistency",
            Rule::Silhouette => "silhouette",
            Rule::Missing => "missing",
        }
    }
}

/// Everything the filter needs about one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnnotations {
    pub person_mask: Vec<bool>,
    pub silhouette: Vec<bool>,
    pub keypoints: Vec<Keypoint>,
    pub projected: Vec<(f64, f64)>,
    pub bbox: BBox,
}

/// `None` if the frame is kept, otherwise the first rule it fails.
/// Invalid inputs (empty silhouette, no confident keypoints, mismatched
/// sizes) count as a failure of the rule that reads them.
pub fn judge(ann: &FrameAnnotations, settings: &FilterSettings) -> Option<Rule> {
    if !full_body_check(&ann.keypoints, settings.confidence_floor) {
        return Some(Rule::FullBody);
    }
    match pose_consistency(&ann.projected, &ann.keypoints, &ann.bbox, settings) {
        Ok(true) => {}
        _ => return Some(Rule::PoseConsistency),
    }
    match silhouette_coverage(&ann.person_mask, &ann.silhouette) {
        Ok(c) if c >= settings.coverage_threshold => None,
        _ => Some(Rule::Silhouette),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub frame: usize,
    pub dropped: Option<Rule>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub verdicts: Vec<Verdict>,
}

impl FilterReport {
    pub fn kept(&self) -> impl Iterator<Item = usize> + '_ {
        self.verdicts.iter().filter(|v| v.dropped.is_none()).map(|v| v.frame)
    }

    pub fn dropped_by(&self, rule: Rule) -> usize {
        self.verdicts.iter().filter(|v| v.dropped == Some(rule)).count()
    }
}

/// Judge every frame; `None` entries are frames whose annotations are missing.
pub fn filter_frames(frames: &[Option<FrameAnnotations>], settings: &FilterSettings) -> FilterReport {
    FilterReport {
        verdicts: frames
            .iter()
            .enumerate()
            .map(|(frame, a)| Verdict {
                frame,
                dropped: match a {
                    Some(a) => judge(a, settings),
                    None => Some(Rule::Missing),
                },
            })
            .collect(),
    }
}
