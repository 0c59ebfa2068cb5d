//! TOML skeleton description and the resolved run configuration.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use volrig_core::synth::FigureSpec;
use volrig_core::{GridBox, Pose, Skeleton, Vec3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneEntry {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// Rest offset from the parent joint (world position for the root).
    pub offset: [f64; 3],
    /// Radial sigma of the bone's prior Gaussian.
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[f64; 3]>,
}

/// Bones in topological order, parents referenced by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonFile {
    pub bone: Vec<BoneEntry>,
}

impl SkeletonFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let file: SkeletonFile =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        file.skeleton()
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::format(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn skeleton(&self) -> Result<Skeleton> {
        let mut index = HashMap::new();
        let mut parents = Vec::new();
        for (i, b) in self.bone.iter().enumerate() {
            let p = match &b.parent {
                None => None,
                Some(name) => Some(*index.get(name.as_str()).ok_or_else(|| {
                    Error::config(format!("bone {:?}: parent {name:?} must be listed before it", b.name))
                })?),
            };
            if index.insert(b.name.as_str(), i).is_some() {
                return Err(Error::config(format!("duplicate bone name {:?}", b.name)));
            }
            parents.push(p);
        }
        Ok(Skeleton::new(
            parents,
            self.bone.iter().map(|b| Vec3::from_array(b.offset)).collect(),
            self.bone.iter().map(|b| b.sigma).collect(),
        )?)
    }

    pub fn bone_count(&self) -> usize {
        self.bone.len()
    }

    /// Capsule figure; every bone needs a radius and a color.
    pub fn figure(&self) -> Result<FigureSpec> {
        let radii = self
            .bone
            .iter()
            .map(|b| b.radius.ok_or_else(|| Error::config(format!("bone {:?} has no radius", b.name))))
            .collect::<Result<Vec<_>>>()?;
        let colors = self
            .bone
            .iter()
            .map(|b| b.color.ok_or_else(|| Error::config(format!("bone {:?} has no color", b.name))))
            .collect::<Result<Vec<_>>>()?;
        Ok(FigureSpec::new(self.skeleton()?, radii, colors)?)
    }

    pub fn from_figure(spec: &FigureSpec, names: &[&str]) -> Self {
        let skel = &spec.skeleton;
        Self {
            bone: (0..skel.bone_count())
                .map(|k| BoneEntry {
                    name: names[k].to_string(),
                    parent: skel.parent(k).map(|p| names[p].to_string()),
                    offset: skel.offset(k).to_array(),
                    sigma: skel.radial_sigma(k),
                    radius: Some(spec.radii[k]),
                    color: Some(spec.colors[k]),
                })
                .collect(),
        }
    }

    pub fn desk() -> Self {
        Self::from_figure(&FigureSpec::desk(), &["pelvis", "torso", "left_arm", "right_arm"])
    }

    /// Volume box shared by data generation and fitting: the capsules (or
    /// the joints, for bones without a radius) plus `margin`.
    pub fn model_box(&self, margin: f64, dims: [usize; 3]) -> Result<GridBox> {
        if self.bone.iter().all(|b| b.radius.is_some()) {
            let spec = FigureSpec {
                skeleton: self.skeleton()?,
                radii: self.bone.iter().map(|b| b.radius.unwrap()).collect(),
                colors: vec![[0.0; 3]; self.bone.len()],
                alpha: 1.0,
            };
            Ok(spec.bounding_box(margin, dims)?)
        } else {
            let skel = self.skeleton()?;
            Ok(volrig_core::volume::skeleton_box(&skel, &Pose::rest(&skel), margin, dims)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub poses: usize,
    pub cameras: usize,
    pub pose_holdout: f64,
    pub camera_holdout: f64,
    pub max_angle: f64,
    pub width: usize,
    pub height: usize,
    pub train_radius: f64,
    pub test_radius: f64,
    pub grid: usize,
    pub wgrid: usize,
    pub margin: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            poses: 100,
            cameras: 144,
            pose_holdout: 0.1,
            camera_holdout: 0.1,
            max_angle: 0.5,
            width: 32,
            height: 32,
            train_radius: 2.25,
            test_radius: 1.5,
            grid: 24,
            wgrid: 16,
            margin: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l2: f64,
    pub l1: f64,
    /// Evaluate on the test split every this many iterations (0: only at the end).
    pub eval_every: usize,
    pub tiles: usize,
    pub grid: usize,
    pub wgrid: usize,
    pub margin: f64,
    /// March step; half a canonical voxel when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 2,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2: 1.0,
            l1: 0.1,
            eval_every: 500,
            tiles: 8,
            grid: 24,
            wgrid: 16,
            margin: 0.08,
            step: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RenderMode {
    Single,
    Retarget,
    Turntable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    pub mode: RenderMode,
    /// Pose records, one per line, in manifest format.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub poses: Option<PathBuf>,
    /// Turntable camera count.
    pub frames: usize,
    pub radius: f64,
    /// Turntable elevation in radians.
    pub elevation: f64,
    pub width: usize,
    pub height: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self {
            mode: RenderMode::Single,
            poses: None,
            frames: 36,
            radius: 2.25,
            elevation: 0.0,
            width: 64,
            height: 64,
            step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub confidence_floor: f64,
    pub pose_tolerance: f64,
    pub coverage_threshold: f64,
    /// Also write normalized 512² crops of the kept frames.
    pub crop: bool,
}

impl Default for FilterSection {
    fn default() -> Self {
        let s = volrig_core::filter::FilterSettings::default();
        Self {
            confidence_floor: s.confidence_floor,
            pose_tolerance: s.pose_tolerance,
            coverage_threshold: s.coverage_threshold,
            crop: false,
        }
    }
}

impl FilterSection {
    pub fn settings(&self) -> volrig_core::filter::FilterSettings {
        volrig_core::filter::FilterSettings {
            confidence_floor: self.confidence_floor,
            pose_tolerance: self.pose_tolerance,
            coverage_threshold: self.coverage_threshold,
        }
    }
}

/// Everything a subcommand runs with. Paths in a config file are relative
/// to that file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub synth: SynthSection,
    pub fit: FitSection,
    pub render: RenderSection,
    pub filter: FilterSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.skeleton, &mut cfg.dataset, &mut cfg.checkpoint, &mut cfg.render.poses]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Write the resolved configuration as `config.toml` under `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))
    }

    /// Skeleton from the configured file, or the built-in four-bone figure.
    pub fn skeleton_file(&self) -> Result<SkeletonFile> {
        match &self.skeleton {
            Some(p) => SkeletonFile::load(p),
            None => Ok(SkeletonFile::desk()),
        }
    }
}
