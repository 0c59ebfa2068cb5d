//! Per-frame estimator outputs and dataset filtering.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use volrig_core::filter::{
    filter_frames, normalize_crop, BBox, FilterReport, FilterSettings, FrameAnnotations, Keypoint,
};

use crate::checkpoint::SKELETON_FILE;
use crate::dataset::MANIFEST;
use crate::error::{Error, Result};
use crate::image_io::{read_mask, read_rgba, write_mask, write_rgba};
use crate::manifest::{read_manifest, write_manifest, CameraRecord, FrameRecord};

pub const DROP_REPORT: &str = "drop_report.txt";

/// Annotation file; mask paths are relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    pub person_mask: String,
    pub silhouette: String,
    /// `(x, y, confidence)` in BODY_25 order.
    pub keypoints: Vec<[f64; 3]>,
    /// Projected 3D joints, index-aligned with `keypoints`.
    pub projected: Vec<[f64; 2]>,
    /// `x0, y0, x1, y1`.
    pub bbox: [f64; 4],
}

impl AnnotationFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("annotations serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn bbox(&self) -> BBox {
        let [x0, y0, x1, y1] = self.bbox;
        BBox { x0, y0, x1, y1 }
    }
}

pub fn load_annotations(path: &Path) -> Result<(AnnotationFile, FrameAnnotations)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: AnnotationFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let (w1, h1, person_mask) = read_mask(&base.join(&file.person_mask))?;
    let (w2, h2, silhouette) = read_mask(&base.join(&file.silhouette))?;
    if (w1, h1) != (w2, h2) {
        return Err(Error::format(path, "person mask and silhouette differ in size"));
    }
    let ann = FrameAnnotations {
        person_mask,
        silhouette,
        keypoints: file
            .keypoints
            .iter()
            .map(|k| Keypoint {
                x: k[0],
                y: k[1],
                confidence: k[2],
            })
            .collect(),
        projected: file.projected.iter().map(|p| (p[0], p[1])).collect(),
        bbox: file.bbox(),
    };
    Ok((file, ann))
}

fn absolute(base: &Path, rel: &str) -> String {
    let p = base.join(rel);
    let p = fs::canonicalize(&p).unwrap_or(p);
    p.to_string_lossy().into_owned()
}

/// Report lines `frame,rule,kept|dropped`; kept frames have an empty rule.
pub fn report_text(report: &FilterReport) -> String {
    let mut s = String::new();
    for v in &report.verdicts {
        match v.dropped {
            Some(rule) => s.push_str(&format!("{},{},dropped\n", v.frame, rule.as_str())),
            None => s.push_str(&format!("{},,kept\n", v.frame)),
        }
    }
    s
}

/// Filter the manifest in `input` and write the kept records (with
/// absolute paths), the skeleton and the drop report under `out`. With
/// `crop`, kept frames are also resampled to normalized crops under
/// `out/crops`, and their records point there.
pub fn filter_dataset(input: &Path, out: &Path, settings: &FilterSettings, crop: bool) -> Result<FilterReport> {
    let records = read_manifest(&input.join(MANIFEST))?;
    let loaded: Vec<Option<(AnnotationFile, FrameAnnotations)>> = records
        .iter()
        .map(|r| r.annotations.as_ref().and_then(|a| load_annotations(&input.join(a)).ok()))
        .collect();
    let anns: Vec<Option<FrameAnnotations>> = loaded.iter().map(|o| o.as_ref().map(|(_, a)| a.clone())).collect();
    let report = filter_frames(&anns, settings);

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    if crop {
        let d = out.join("crops");
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut kept = Vec::new();
    for i in report.kept() {
        let r = &records[i];
        let mut rec = FrameRecord {
            image: absolute(input, &r.image),
            mask: absolute(input, &r.mask),
            annotations: r.annotations.as_ref().map(|a| absolute(input, a)),
            ..r.clone()
        };
        if crop {
            let (file, _) = loaded[i].as_ref().expect("kept frames have annotations");
            rec = crop_frame(input, out, i, &rec, &file.bbox())?;
        }
        kept.push(rec);
    }
    write_manifest(&out.join(MANIFEST), &kept)?;
    let skel = input.join(SKELETON_FILE);
    if skel.exists() {
        fs::copy(&skel, out.join(SKELETON_FILE)).map_err(|e| Error::io(&skel, e))?;
    }
    let rp = out.join(DROP_REPORT);
    fs::write(&rp, report_text(&report)).map_err(|e| Error::io(&rp, e))?;
    Ok(report)
}

fn crop_frame(input: &Path, out: &Path, i: usize, rec: &FrameRecord, bbox: &BBox) -> Result<FrameRecord> {
    let cam = rec.camera.camera()?;
    let img_path = PathBuf::from(&rec.image);
    let img = read_rgba(&img_path)?;
    let (_, _, mask) = read_mask(&input.join(&rec.mask))?;
    let mut rgba = Vec::with_capacity(img.alpha.len() * 4);
    for (p, a) in img.rgb.chunks_exact(3).zip(&img.alpha) {
        rgba.extend_from_slice(p);
        rgba.push(*a);
    }
    let c = normalize_crop(&rgba, &mask, 4, &cam.intrinsics, bbox).map_err(|e| Error::format(&img_path, e))?;
    let n = volrig_core::filter::CROP_SIZE;
    let rgb: Vec<f64> = c.image.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    let alpha: Vec<f64> = c.image.chunks_exact(4).map(|p| p[3]).collect();
    let image = out.join(format!("crops/{i:05}.png"));
    let mask_path = out.join(format!("crops/{i:05}_mask.png"));
    write_rgba(&image, n, n, &rgb, &alpha)?;
    write_mask(&mask_path, n, n, &c.mask)?;
    let mut cropped = cam;
    cropped.intrinsics = c.intrinsics;
    Ok(FrameRecord {
        image: image.to_string_lossy().into_owned(),
        mask: mask_path.to_string_lossy().into_owned(),
        camera: CameraRecord::from_camera(&cropped),
        ..rec.clone()
    })
}
