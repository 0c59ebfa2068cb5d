//! Synthetic dataset generation and loading.

use std::fs;
use std::path::{Path, PathBuf};

use volrig_core::exec::{Executor, Sequential};
use volrig_core::fit::TrainingFrame;
use volrig_core::render::MarchSettings;
use volrig_core::synth::{make_figure, plan_split, render_posed, sample_poses, CaptureRig, Split};
use volrig_core::Pose;

use crate::checkpoint::{Checkpoint, Model, SKELETON_FILE};
use crate::config::{SkeletonFile, SynthSection};
use crate::error::{Error, Result};
use crate::image_io::{read_mask, read_rgba, to_u8, write_mask, write_rgba};
use crate::manifest::{read_manifest, write_manifest, FrameRecord};

pub const MANIFEST: &str = "manifest.jsonl";
/// Ground-truth model written next to a synthetic dataset.
pub const FIGURE_DIR: &str = "figure";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSummary {
    pub frames: usize,
    pub train: usize,
    pub test: usize,
}

/// Render the capsule figure of `skeleton` under random poses, one view per
/// pose, and write images, masks, the manifest, the skeleton and the
/// ground-truth model under `out`.
pub fn generate_dataset<E: Executor>(
    out: &Path,
    skeleton: &SkeletonFile,
    s: &SynthSection,
    seed: u64,
    exec: &E,
) -> Result<DatasetSummary> {
    let spec = skeleton.figure()?;
    let cbox = skeleton.model_box(s.margin, [s.grid; 3])?;
    let wbox = skeleton.model_box(s.margin, [s.wgrid; 3])?;
    let figure = make_figure(&spec, cbox, wbox)?;
    let poses = sample_poses(&spec.skeleton, s.poses, s.max_angle, seed)?;
    let plan = plan_split(s.poses, s.cameras, s.pose_holdout, s.camera_holdout, seed)?;
    let mut rig = CaptureRig::new(s.cameras, s.width, s.height);
    rig.train_radius = s.train_radius;
    rig.test_radius = s.test_radius;
    let march = MarchSettings::for_grid(&cbox);
    let rest = spec.rest_pose();

    for sub in ["images", "masks"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let records = exec.map(plan.frames.len(), |i| -> Result<FrameRecord> {
        let f = plan.frames[i];
        let camera = rig.camera(f.camera, f.split)?;
        let pose = &poses[f.pose];
        let img = render_posed(&figure, &spec.skeleton, &rest, pose, &camera, &march, &Sequential)?;
        let image = format!("images/{i:05}.png");
        let mask = format!("masks/{i:05}.png");
        write_rgba(&out.join(&image), img.width, img.height, &img.rgb, &img.alpha)?;
        // the stored coverage decides the mask so the two always agree
        let m: Vec<bool> = img.alpha.iter().map(|a| to_u8(*a) > 0).collect();
        write_mask(&out.join(&mask), img.width, img.height, &m)?;
        Ok(FrameRecord::new(pose, &camera, image, mask, f.split.as_str()))
    });
    let records = records.into_iter().collect::<Result<Vec<_>>>()?;
    write_manifest(&out.join(MANIFEST), &records)?;
    skeleton.save(&out.join(SKELETON_FILE))?;
    Checkpoint {
        skeleton: skeleton.clone(),
        model: Model::Baked {
            canonical: figure.canonical,
            weights: figure.weights,
        },
    }
    .save(&out.join(FIGURE_DIR))?;
    Ok(DatasetSummary {
        frames: records.len(),
        train: plan.count(Split::Train),
        test: plan.count(Split::Test),
    })
}

/// A manifest and the skeleton next to it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub skeleton: SkeletonFile,
    pub records: Vec<FrameRecord>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = dir.join(MANIFEST);
        if !manifest.exists() {
            return Err(Error::config(format!("{}: no such dataset manifest", manifest.display())));
        }
        let records = read_manifest(&manifest)?;
        let skeleton = SkeletonFile::load(&dir.join(SKELETON_FILE))?;
        let k = skeleton.bone_count();
        for r in &records {
            r.pose(k)?;
            if r.split != "train" && r.split != "test" {
                return Err(Error::config(format!("unknown split {:?}", r.split)));
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            skeleton,
            records,
        })
    }

    pub fn count(&self, split: &str) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    pub fn frame(&self, r: &FrameRecord) -> Result<TrainingFrame> {
        let camera = r.camera.camera()?;
        let pose: Pose = r.pose(self.skeleton.bone_count())?;
        let img = read_rgba(&self.dir.join(&r.image))?;
        let (mw, mh, mask) = read_mask(&self.dir.join(&r.mask))?;
        if (img.width, img.height) != (camera.width(), camera.height()) || (mw, mh) != (img.width, img.height) {
            return Err(Error::format(&self.dir.join(&r.image), "image size disagrees with the camera"));
        }
        Ok(TrainingFrame {
            pose,
            camera,
            rgb: img.rgb,
            alpha: img.alpha,
            mask,
        })
    }

    /// Frames of one split, in manifest order.
    pub fn frames(&self, split: &str) -> Result<Vec<TrainingFrame>> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| self.frame(r))
            .collect()
    }
}
