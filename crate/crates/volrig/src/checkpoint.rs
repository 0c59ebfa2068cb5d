//! Model directories: volumes plus the skeleton they were built for.
//!
//! A fitted model stores `raw_canonical.volr` and `delta_w.volr`; a baked
//! one (such as the synthetic ground truth) stores the activated
//! `canonical.volr` and `weights.volr` directly.

use std::fs;
use std::path::Path;

use volrig_core::fit::{CharacterRig, FitParams};
use volrig_core::{Pose, VoxelGrid};

use crate::config::SkeletonFile;
use crate::error::{Error, Result};
use crate::volume_io::{read_volume, write_volume};

pub const SKELETON_FILE: &str = "skeleton.toml";

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Fitted(FitParams),
    Baked { canonical: VoxelGrid, weights: VoxelGrid },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub skeleton: SkeletonFile,
    pub model: Model,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.skeleton.save(&dir.join(SKELETON_FILE))?;
        match &self.model {
            Model::Fitted(p) => {
                write_volume(&dir.join("raw_canonical.volr"), &p.raw_canonical)?;
                write_volume(&dir.join("delta_w.volr"), &p.delta_w)
            }
            Model::Baked { canonical, weights } => {
                write_volume(&dir.join("canonical.volr"), canonical)?;
                write_volume(&dir.join("weights.volr"), weights)
            }
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let skel_path = dir.join(SKELETON_FILE);
        if !skel_path.exists() {
            return Err(Error::io(
                &skel_path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint has no skeleton"),
            ));
        }
        let skeleton = SkeletonFile::load(&skel_path)?;
        let k = skeleton.bone_count();
        let model = if dir.join("raw_canonical.volr").exists() {
            Model::Fitted(FitParams {
                raw_canonical: read_volume(&dir.join("raw_canonical.volr"))?,
                delta_w: read_volume(&dir.join("delta_w.volr"))?,
            })
        } else {
            Model::Baked {
                canonical: read_volume(&dir.join("canonical.volr"))?,
                weights: read_volume(&dir.join("weights.volr"))?.with_exterior_one_hot(k),
            }
        };
        let (c, w) = match &model {
            Model::Fitted(p) => (&p.raw_canonical, &p.delta_w),
            Model::Baked { canonical, weights } => (canonical, weights),
        };
        if c.channels() != 4 || w.channels() != k + 1 {
            return Err(Error::format(
                dir,
                format!(
                    "volumes have {} and {} channels; expected 4 and {} for {k} bones",
                    c.channels(),
                    w.channels(),
                    k + 1
                ),
            ));
        }
        Ok(Self { skeleton, model })
    }

    /// Rig with the prior on the model's weight grid.
    pub fn rig(&self) -> Result<CharacterRig> {
        let skel = self.skeleton.skeleton()?;
        let rest = Pose::rest(&skel);
        let wbox = match &self.model {
            Model::Fitted(p) => *p.delta_w.grid_box(),
            Model::Baked { weights, .. } => *weights.grid_box(),
        };
        Ok(CharacterRig::new(skel, rest, wbox)?)
    }

    /// Activated canonical volume and blend weights.
    pub fn volumes(&self, rig: &CharacterRig) -> (VoxelGrid, VoxelGrid) {
        match &self.model {
            Model::Fitted(p) => (p.canonical(), p.weights(&rig.prior)),
            Model::Baked { canonical, weights } => (canonical.clone(), weights.clone()),
        }
    }
}
