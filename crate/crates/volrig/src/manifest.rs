//! Line-delimited JSON frame records.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use volrig_core::render::{Camera, Intrinsics};
use volrig_core::{Mat3, Pose, RigidTransform, Vec3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    /// World-to-camera rotation, row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    /// `fx, fy, cx, cy`.
    pub intrinsics: [f64; 4],
    /// `width, height`.
    pub size: [usize; 2],
}

impl CameraRecord {
    pub fn from_camera(cam: &Camera) -> Self {
        let r = &cam.extrinsic.rotation;
        let k = &cam.intrinsics;
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            rotation[3 * i..3 * i + 3].copy_from_slice(&r.row(i).to_array());
        }
        Self {
            rotation,
            translation: cam.extrinsic.translation.to_array(),
            intrinsics: [k.fx, k.fy, k.cx, k.cy],
            size: [k.width, k.height],
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let r = &self.rotation;
        let rotation = Mat3::from_row_vectors(
            Vec3::new(r[0], r[1], r[2]),
            Vec3::new(r[3], r[4], r[5]),
            Vec3::new(r[6], r[7], r[8]),
        );
        let [fx, fy, cx, cy] = self.intrinsics;
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width: self.size[0],
            height: self.size[1],
        };
        Ok(Camera::new(
            RigidTransform::new(rotation, Vec3::from_array(self.translation)),
            k,
        )?)
    }
}

/// One frame: image and mask paths relative to the manifest, the pose as
/// `3K` angles and `3K` rest-joint coordinates, the camera and the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    #[serde(default)]
    pub image: String,
    #[serde(default)]
    pub mask: String,
    pub angles: Vec<f64>,
    pub joints: Vec<f64>,
    pub camera: CameraRecord,
    #[serde(default = "default_split")]
    pub split: String,
    /// Annotation file for filtering, relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<String>,
}

fn default_split() -> String {
    "train".into()
}

fn triples(v: &[f64]) -> Vec<Vec3> {
    v.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| p.to_array()).collect()
}

impl FrameRecord {
    pub fn new(pose: &Pose, camera: &Camera, image: String, mask: String, split: &str) -> Self {
        Self {
            image,
            mask,
            angles: flatten(pose.angles()),
            joints: flatten(pose.joints()),
            camera: CameraRecord::from_camera(camera),
            split: split.to_string(),
            annotations: None,
        }
    }

    /// Pose for a `k`-bone skeleton.
    pub fn pose(&self, k: usize) -> Result<Pose> {
        if self.angles.len() != 3 * k || self.joints.len() != 3 * k {
            return Err(Error::config(format!(
                "pose has {} angle and {} joint values, expected {} for {k} bones",
                self.angles.len(),
                self.joints.len(),
                3 * k
            )));
        }
        Ok(Pose::new(triples(&self.joints), triples(&self.angles))?)
    }
}

pub fn write_manifest(path: &Path, records: &[FrameRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<FrameRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
