//! Reverse-mode gradients of the photometric loss.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::{CharacterRig, FitError, FitParams, LossWeights, TrainingFrame};
use crate::deform::{PosedVolumeView, SampleTrace};
use crate::exec::Executor;
use crate::kinematics::motion_bases;
use crate::math::{sigmoid, softplus, Vec3};
use crate::render::{generate_ray, MarchSettings, TargetVolume};
use crate::volume::VoxelGrid;

/// Loss and its gradient with respect to the activated volumes: canonical
/// RGBα values and the blend weights `W` (all `K + 1` channels).
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGradients {
    pub loss: f64,
    pub canonical: Vec<f64>,
    pub weights: Vec<f64>,
}

impl VolumeGradients {
    fn zeros(canonical: usize, weights: usize) -> Self {
        Self {
            loss: 0.0,
            canonical: vec![0.0; canonical],
            weights: vec![0.0; weights],
        }
    }

    fn accumulate(&mut self, o: &VolumeGradients) {
        self.loss += o.loss;
        for (a, b) in self.canonical.iter_mut().zip(&o.canonical) {
            *a += b;
        }
        for (a, b) in self.weights.iter_mut().zip(&o.weights) {
            *a += b;
        }
    }
}

struct Sample {
    a: f64,
    rgb: [f64; 3],
    x: Vec3,
    transmittance: f64,
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Scatter the gradient of one sample's RGBα back through the warp.
fn scatter_sample(
    view: &PosedVolumeView<'_>,
    t: &SampleTrace,
    d_rgb: [f64; 3],
    d_alpha: f64,
    out: &mut VolumeGradients,
) {
    if t.warp.is_none() {
        return;
    }
    let vc = t.canonical_value;
    let m = t.mask;
    let d_value = [d_rgb[0], d_rgb[1], d_rgb[2], d_alpha];
    let mut d_mask = 0.0;
    let mut d_vc = [0.0; 4];
    for c in 0..4 {
        d_mask += d_value[c] * vc[c];
        d_vc[c] = d_value[c] * m;
    }

    let canonical = view.canonical();
    let mut d_warp = Vec3::ZERO;
    if let Some(st) = &t.canonical_stencil {
        let grads = st.weight_gradients();
        for corner in 0..8 {
            let base = st.nodes[corner] * 4;
            let w = st.weights[corner];
            let mut dot = 0.0;
            for c in 0..4 {
                out.canonical[base + c] += w * d_vc[c];
                dot += d_vc[c] * canonical.values()[base + c];
            }
            d_warp += grads[corner] * dot;
        }
    }

    let k = view.bone_count();
    let s = t.support;
    let mut d_norm_dot = 0.0;
    for i in 0..k {
        d_norm_dot += d_warp.dot(t.warped[i]) * t.normalized[i];
    }
    let d_mask_support = if s < 1.0 { d_mask } else { 0.0 };
    let wc = view.weights().channels();
    for i in 0..k {
        let ds = (d_warp.dot(t.warped[i]) - d_norm_dot) / s + d_mask_support;
        if ds == 0.0 {
            continue;
        }
        if let Some(st) = &t.stencils[i] {
            for corner in 0..8 {
                out.weights[st.nodes[corner] * wc + i] += st.weights[corner] * ds;
            }
        }
    }
}

fn tile_gradients(
    view: &PosedVolumeView<'_>,
    frame: &TrainingFrame,
    background: [f64; 3],
    march: &MarchSettings,
    loss: &LossWeights,
    rows: Range<usize>,
) -> VolumeGradients {
    let mut out = VolumeGradients::zeros(view.canonical().values().len(), view.weights().values().len());
    let cam = &frame.camera;
    let w = cam.width();
    let bounds = view.bounds();
    let mut trace = view.new_trace();
    let mut samples: Vec<Sample> = Vec::new();
    for y in rows {
        for x in 0..w {
            let p = y * w + x;
            let ray = generate_ray(cam, x, y, &bounds);
            samples.clear();
            let mut rgb = [0.0; 3];
            let mut acc = 0.0;
            for m in 0..march.sample_count(&ray) {
                let pos = ray.at(march.sample_distance(&ray, m));
                let s = view.trace(pos, &mut trace);
                let a = march.opacity(s[3]);
                let tr = 1.0 - acc;
                for c in 0..3 {
                    rgb[c] += tr * a * s[c];
                }
                acc += tr * a;
                samples.push(Sample {
                    a,
                    rgb: [s[0], s[1], s[2]],
                    x: pos,
                    transmittance: tr,
                });
            }

            let fg = frame.mask[p];
            let ga = frame.alpha[p];
            let mut d_out = [0.0; 3];
            for c in 0..3 {
                let rendered = rgb[c] + (1.0 - acc) * background[c];
                let target = frame.rgb[3 * p + c] + (1.0 - ga) * background[c];
                let r = rendered - target;
                out.loss += loss.l2 * r * r;
                d_out[c] = 2.0 * loss.l2 * r;
                if fg {
                    out.loss += loss.l1 * r.abs();
                    d_out[c] += loss.l1 * sign(r);
                }
            }
            if d_out == [0.0; 3] {
                continue;
            }

            let mut behind = background;
            let ratio = march.step / march.step_ref;
            for smp in samples.iter().rev() {
                let mut d_rgb = [0.0; 3];
                let mut d_a = 0.0;
                for c in 0..3 {
                    d_rgb[c] = d_out[c] * smp.transmittance * smp.a;
                    d_a += d_out[c] * smp.transmittance * (smp.rgb[c] - behind[c]);
                    behind[c] = smp.a * smp.rgb[c] + (1.0 - smp.a) * behind[c];
                }
                let s = view.trace(smp.x, &mut trace);
                // opacity = clamp(α·ratio, 0, 1)
                let unclamped = s[3] * ratio;
                let d_alpha = if (0.0..=1.0).contains(&unclamped) { d_a * ratio } else { 0.0 };
                scatter_sample(view, &trace, d_rgb, d_alpha, &mut out);
            }
        }
    }
    out
}

/// Loss of one frame against `background` and its gradient with respect to
/// the activated volumes behind `view`. Rows are split into `tiles` bands
/// reduced in order.
pub fn render_gradients<E: Executor>(
    view: &PosedVolumeView<'_>,
    frame: &TrainingFrame,
    background: [f64; 3],
    march: &MarchSettings,
    loss: &LossWeights,
    tiles: usize,
    exec: &E,
) -> VolumeGradients {
    let h = frame.camera.height();
    let march = march.differentiable();
    let parts = exec.map(tiles, |t| {
        let rows = (t * h / tiles)..((t + 1) * h / tiles);
        tile_gradients(view, frame, background, &march, loss, rows)
    });
    let mut total = VolumeGradients::zeros(view.canonical().values().len(), view.weights().values().len());
    for p in &parts {
        total.accumulate(p);
    }
    total
}

/// Gradient with respect to the raw canonical values given one with
/// respect to the activated values.
pub fn chain_canonical(raw: &VoxelGrid, grad: &[f64]) -> Vec<f64> {
    raw.values()
        .iter()
        .zip(grad)
        .enumerate()
        .map(|(i, (&r, &g))| {
            if i % 4 == 3 && softplus(r) >= 1.0 {
                0.0
            } else {
                g * sigmoid(r)
            }
        })
        .collect()
}

/// Gradient through the per-voxel softmax: `W ⊙ (g − Σ W·g)`.
pub fn chain_weights(weights: &VoxelGrid, grad: &[f64]) -> Vec<f64> {
    let c = weights.channels();
    let mut out = vec![0.0; grad.len()];
    for ((o, w), g) in out
        .chunks_exact_mut(c)
        .zip(weights.values().chunks_exact(c))
        .zip(grad.chunks_exact(c))
    {
        let dot: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
        for ch in 0..c {
            o[ch] = w[ch] * (g[ch] - dot);
        }
    }
    out
}

/// Total loss over `batch` (frame, background) pairs and its gradient with
/// respect to the fitted parameters.
pub fn backward<E: Executor>(
    rig: &CharacterRig,
    params: &FitParams,
    batch: &[(&TrainingFrame, [f64; 3])],
    march: &MarchSettings,
    loss: &LossWeights,
    tiles: usize,
    exec: &E,
) -> Result<(f64, FitParams), FitError> {
    let canonical = params.canonical();
    let weights = params.weights(&rig.prior);
    let bases = batch
        .iter()
        .map(|(f, _)| motion_bases(&rig.skeleton, &rig.canonical_pose, &f.pose))
        .collect::<Result<Vec<_>, _>>()?;
    for (f, _) in batch {
        let n = f.camera.width() * f.camera.height();
        if f.rgb.len() != 3 * n {
            return Err(FitError::DimensionMismatch(f.rgb.len(), 3 * n));
        }
        if f.alpha.len() != n || f.mask.len() != n {
            return Err(FitError::DimensionMismatch(f.alpha.len().min(f.mask.len()), n));
        }
    }
    let views = bases
        .iter()
        .map(|b| PosedVolumeView::new(&canonical, &weights, b))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| FitError::ShapeMismatch)?;

    let march = march.differentiable();
    let jobs = batch.len() * tiles;
    let parts = exec.map(jobs, |j| {
        let (fi, t) = (j / tiles, j % tiles);
        let (frame, bg) = batch[fi];
        let h = frame.camera.height();
        let rows = (t * h / tiles)..((t + 1) * h / tiles);
        tile_gradients(&views[fi], frame, bg, &march, loss, rows)
    });
    let mut total = VolumeGradients::zeros(canonical.values().len(), weights.values().len());
    for p in &parts {
        total.accumulate(p);
    }
    if !total.loss.is_finite() {
        return Err(FitError::NonFiniteLoss);
    }

    let mut grads = params.zeros_like();
    grads
        .raw_canonical
        .values_mut()
        .copy_from_slice(&chain_canonical(&params.raw_canonical, &total.canonical));
    grads
        .delta_w
        .values_mut()
        .copy_from_slice(&chain_weights(&weights, &total.weights));
    Ok((total.loss, grads))
}
