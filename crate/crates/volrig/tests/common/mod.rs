#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use volrig::annotations::AnnotationFile;
use volrig::config::RunConfig;
use volrig::dataset::MANIFEST;
use volrig::image_io::{read_mask, write_mask};
use volrig::manifest::{read_manifest, write_manifest};
use volrig_core::filter::body25;

pub fn volrig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volrig"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Small synthetic setup: `poses` poses rendered at `size`², coarse grids.
pub fn small_config(poses: usize, size: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 7;
    cfg.synth.poses = poses;
    cfg.synth.width = size;
    cfg.synth.height = size;
    cfg.synth.grid = 12;
    cfg.synth.wgrid = 8;
    cfg.fit.grid = 12;
    cfg.fit.wgrid = 8;
    cfg.fit.tiles = 2;
    cfg
}

pub fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let p = dir.join("run.toml");
    fs::write(&p, cfg.to_toml()).unwrap();
    p
}

/// SHA-256 of every file under `dir`, keyed by relative path.
pub fn tree_hash(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                let digest = Sha256::digest(fs::read(&p).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.insert(rel, hex);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Clean,
    /// Left wrist undetected.
    FullBody,
    /// 3D projection off by a fifth of the box diagonal.
    Pose,
    /// Person mask misses a fifth of the silhouette.
    Silhouette,
    /// Annotation file absent.
    Missing,
    /// 10×10 silhouette with this many of its 100 pixels covered.
    Coverage(usize),
}

/// Attach annotation files to every frame of the dataset in `dir`, planting
/// `faults[i]` in frame `i`. Silhouettes come from the dataset masks.
pub fn plant_annotations(dir: &Path, faults: &[Fault]) {
    let mut records = read_manifest(&dir.join(MANIFEST)).unwrap();
    assert_eq!(records.len(), faults.len(), "one fault entry per frame");
    let ann_dir = dir.join("annotations");
    fs::create_dir_all(&ann_dir).unwrap();
    for (i, (rec, fault)) in records.iter_mut().zip(faults).enumerate() {
        let name = format!("annotations/{i:05}.json");
        rec.annotations = Some(name.clone());
        if *fault == Fault::Missing {
            continue;
        }
        let (w, h, sil) = match fault {
            Fault::Coverage(_) => (10, 10, vec![true; 100]),
            _ => read_mask(&dir.join(&rec.mask)).unwrap(),
        };
        let mut pm = sil.clone();
        match fault {
            Fault::Silhouette => {
                let n = sil.iter().filter(|&&b| b).count();
                let drop = n.div_ceil(5);
                pm.iter_mut().filter(|b| **b).take(drop).for_each(|b| *b = false);
            }
            Fault::Coverage(k) => pm.iter_mut().skip(*k).for_each(|b| *b = false),
            _ => {}
        }
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for (p, _) in sil.iter().enumerate().filter(|(_, b)| **b) {
            let (x, y) = ((p % w) as f64, (p / w) as f64);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1.0);
            y1 = y1.max(y + 1.0);
        }
        assert!(x1 > x0, "frame {i} has an empty silhouette");
        let diag = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        let mut keypoints: Vec<[f64; 3]> = (0..25)
            .map(|j| {
                let u = ((j % 5) as f64 + 0.5) / 5.0;
                let v = ((j / 5) as f64 + 0.5) / 5.0;
                [x0 + u * (x1 - x0), y0 + v * (y1 - y0), 0.9]
            })
            .collect();
        let mut projected: Vec<[f64; 2]> = keypoints.iter().map(|k| [k[0], k[1]]).collect();
        match fault {
            Fault::FullBody => keypoints[body25::L_WRIST][2] = 0.0,
            Fault::Pose => projected.iter_mut().for_each(|p| p[0] += 0.2 * diag),
            _ => {}
        }
        let pm_name = format!("{i:05}_pm.png");
        let sil_name = format!("{i:05}_sil.png");
        write_mask(&ann_dir.join(&pm_name), w, h, &pm).unwrap();
        write_mask(&ann_dir.join(&sil_name), w, h, &sil).unwrap();
        AnnotationFile {
            person_mask: pm_name,
            silhouette: sil_name,
            keypoints,
            projected,
            bbox: [x0, y0, x1, y1],
        }
        .save(&dir.join(&name))
        .unwrap();
    }
    write_manifest(&dir.join(MANIFEST), &records).unwrap();
}
