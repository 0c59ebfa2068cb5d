//! Dense voxel grids, their world-box mapping and trilinear sampling.
//!
//! Voxel values sit at grid nodes: node `(i, j, k)` is at
//! `min + (i, j, k) * spacing`, so the box corners are node positions and
//! the box is exactly the region where interpolation is defined. Values are
//! stored x-fastest, then y, then z, with channels interleaved per voxel.

mod codec;
mod prior;

pub use codec::{decode, encode, CodecError, MAGIC, VERSION};
pub use prior::{
    activate_canonical, bone_gaussian, bone_segments, gaussian_prior, weights_from_logits,
    skeleton_box, BoneSegment, WeightLogits, PRIOR_FLOOR,
};

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{floor, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VolumeError {
    #[error("grid box needs max > min on every axis")]
    EmptyBox,
    #[error("grid needs at least 2 nodes per axis, got {0:?}")]
    TooFewNodes([usize; 3]),
    #[error("grid needs at least one channel")]
    NoChannels,
    #[error("expected {expected} values, got {got}")]
    ValueCount { expected: usize, got: usize },
    #[error("grid contains a non-finite value")]
    NonFinite,
    #[error("grids disagree in shape")]
    ShapeMismatch,
    #[error("prior channels must be positive")]
    NonPositivePrior,
}

/// Axis-aligned world box sampled by `dims` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridBox {
    min: Vec3,
    max: Vec3,
    dims: [usize; 3],
}

/// The eight nodes surrounding a point and their interpolation weights.
/// Corner `c` has offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub nodes: [usize; 8],
    pub weights: [f64; 8],
    frac: [f64; 3],
    inv_spacing: Vec3,
}

impl Stencil {
    /// `∂ weights[c] / ∂ x` in world units.
    pub fn weight_gradients(&self) -> [Vec3; 8] {
        let [fx, fy, fz] = self.frac;
        let mut out = [Vec3::ZERO; 8];
        for (c, g) in out.iter_mut().enumerate() {
            let (bx, by, bz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let wx = if bx == 1 { fx } else { 1.0 - fx };
            let wy = if by == 1 { fy } else { 1.0 - fy };
            let wz = if bz == 1 { fz } else { 1.0 - fz };
            let sx = if bx == 1 { 1.0 } else { -1.0 };
            let sy = if by == 1 { 1.0 } else { -1.0 };
            let sz = if bz == 1 { 1.0 } else { -1.0 };
            *g = Vec3::new(
                sx * wy * wz * self.inv_spacing.x,
                wx * sy * wz * self.inv_spacing.y,
                wx * wy * sz * self.inv_spacing.z,
            );
        }
        out
    }
}

impl GridBox {
    pub fn new(min: Vec3, max: Vec3, dims: [usize; 3]) -> Result<Self, VolumeError> {
        if !(min.is_finite() && max.is_finite()) || (0..3).any(|a| max[a] <= min[a]) {
            return Err(VolumeError::EmptyBox);
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(VolumeError::TooFewNodes(dims));
        }
        Ok(Self { min, max, dims })
    }

    pub fn min(&self) -> Vec3 {
        self.min
    }

    pub fn max(&self) -> Vec3 {
        self.max
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn with_dims(&self, dims: [usize; 3]) -> Result<Self, VolumeError> {
        Self::new(self.min, self.max, dims)
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Distance between neighbouring nodes along each axis.
    pub fn spacing(&self) -> Vec3 {
        let e = self.max - self.min;
        Vec3::new(
            e.x / (self.dims[0] - 1) as f64,
            e.y / (self.dims[1] - 1) as f64,
            e.z / (self.dims[2] - 1) as f64,
        )
    }

    /// Largest spacing over the three axes.
    pub fn voxel_edge(&self) -> f64 {
        let s = self.spacing();
        s.x.max(s.y).max(s.z)
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn node_coords(&self, index: usize) -> [usize; 3] {
        let i = index % self.dims[0];
        let j = (index / self.dims[0]) % self.dims[1];
        let k = index / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.min + self.spacing().component_mul(Vec3::new(i as f64, j as f64, k as f64))
    }

    pub fn node_position_of(&self, index: usize) -> Vec3 {
        let [i, j, k] = self.node_coords(index);
        self.node_position(i, j, k)
    }

    pub fn contains(&self, x: Vec3) -> bool {
        (0..3).all(|a| x[a] >= self.min[a] && x[a] <= self.max[a])
    }

    /// Trilinear stencil at `x`, or `None` outside the box.
    #[inline]
    pub fn stencil(&self, x: Vec3) -> Option<Stencil> {
        if !self.contains(x) {
            return None;
        }
        let sp = self.spacing();
        let inv = Vec3::new(1.0 / sp.x, 1.0 / sp.y, 1.0 / sp.z);
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = (x[a] - self.min[a]) * inv[a];
            let b = (floor(u) as usize).min(self.dims[a] - 2);
            base[a] = b;
            frac[a] = (u - b as f64).clamp(0.0, 1.0);
        }
        let mut nodes = [0usize; 8];
        let mut weights = [0.0; 8];
        for c in 0..8 {
            let (bx, by, bz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            nodes[c] = self.linear_index(base[0] + bx, base[1] + by, base[2] + bz);
            let wx = if bx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if by == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if bz == 1 { frac[2] } else { 1.0 - frac[2] };
            weights[c] = wx * wy * wz;
        }
        Some(Stencil {
            nodes,
            weights,
            frac,
            inv_spacing: inv,
        })
    }
}

/// `channels` scalars per node of a [`GridBox`], plus the value reported for
/// points outside the box.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    grid_box: GridBox,
    channels: usize,
    values: Vec<f64>,
    exterior: Vec<f64>,
}

impl VoxelGrid {
    pub fn zeros(grid_box: GridBox, channels: usize) -> Self {
        Self::filled(grid_box, channels, 0.0)
    }

    pub fn filled(grid_box: GridBox, channels: usize, value: f64) -> Self {
        assert!(channels > 0, "voxel grid needs at least one channel");
        Self {
            grid_box,
            channels,
            values: vec![value; grid_box.voxel_count() * channels],
            exterior: vec![0.0; channels],
        }
    }

    pub fn from_values(
        grid_box: GridBox,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self, VolumeError> {
        if channels == 0 {
            return Err(VolumeError::NoChannels);
        }
        let expected = grid_box.voxel_count() * channels;
        if values.len() != expected {
            return Err(VolumeError::ValueCount {
                expected,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite);
        }
        Ok(Self {
            grid_box,
            channels,
            values,
            exterior: vec![0.0; channels],
        })
    }

    /// Replace the out-of-box value.
    pub fn with_exterior(mut self, exterior: Vec<f64>) -> Self {
        assert_eq!(exterior.len(), self.channels);
        self.exterior = exterior;
        self
    }

    /// Out-of-box value that is one-hot on `channel`.
    pub fn with_exterior_one_hot(self, channel: usize) -> Self {
        let mut e = vec![0.0; self.channels];
        e[channel] = 1.0;
        self.with_exterior(e)
    }

    pub fn grid_box(&self) -> &GridBox {
        &self.grid_box
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn exterior(&self) -> &[f64] {
        &self.exterior
    }

    pub fn same_shape(&self, other: &VoxelGrid) -> bool {
        self.grid_box == other.grid_box && self.channels == other.channels
    }

    #[inline]
    pub fn value(&self, node: usize, channel: usize) -> f64 {
        self.values[node * self.channels + channel]
    }

    #[inline]
    pub fn voxel(&self, node: usize) -> &[f64] {
        &self.values[node * self.channels..(node + 1) * self.channels]
    }

    #[inline]
    pub fn voxel_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.values[node * self.channels..(node + 1) * self.channels]
    }

    /// Trilinear blend of all channels at `x` into `out`.
    pub fn sample_into(&self, x: Vec3, out: &mut [f64]) {
        match self.grid_box.stencil(x) {
            Some(st) => self.blend_into(&st, out),
            None => out.copy_from_slice(&self.exterior),
        }
    }

    pub fn trilinear_sample(&self, x: Vec3) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.sample_into(x, &mut out);
        out
    }

    /// Single channel at `x`.
    #[inline]
    pub fn sample_channel(&self, x: Vec3, channel: usize) -> f64 {
        match self.grid_box.stencil(x) {
            Some(st) => self.blend_channel(&st, channel),
            None => self.exterior[channel],
        }
    }

    #[inline]
    pub fn blend_channel(&self, st: &Stencil, channel: usize) -> f64 {
        let mut acc = 0.0;
        for c in 0..8 {
            acc += st.weights[c] * self.values[st.nodes[c] * self.channels + channel];
        }
        acc
    }

    #[inline]
    pub fn blend_into(&self, st: &Stencil, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..8 {
            let w = st.weights[c];
            let base = st.nodes[c] * self.channels;
            for (ch, o) in out.iter_mut().enumerate() {
                *o += w * self.values[base + ch];
            }
        }
    }

    /// Spatial gradient of one channel of the interpolant at a stencil.
    #[inline]
    pub fn channel_gradient(&self, st: &Stencil, channel: usize) -> Vec3 {
        let grads = st.weight_gradients();
        let mut g = Vec3::ZERO;
        for c in 0..8 {
            g += grads[c] * self.values[st.nodes[c] * self.channels + channel];
        }
        g
    }
}
