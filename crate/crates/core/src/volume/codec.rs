//! Binary volume format.
//!
//! ```text
//! "VOLR"  u32 version=1  u32 nx  u32 ny  u32 nz  u32 channels
//! f64 min.x min.y min.z max.x max.y max.z
//! f32 × nx·ny·nz·channels        (x-fastest, channels interleaved)
//! ```
//! All little-endian. Values are stored as `f32`; in-memory grids are `f64`.

use alloc::vec::Vec;

use super::{GridBox, VolumeError, VoxelGrid};
use crate::math::Vec3;

pub const MAGIC: [u8; 4] = *b"VOLR";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 5 + 8 * 6;
/// Refuse headers describing more than 2³¹ values.
const MAX_VALUES: u64 = 1 << 31;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("bad magic: not a volume file")]
    BadMagic,
    #[error("unsupported volume version {0}")]
    UnsupportedVersion(u32),
    #[error("dimension overflow: {dims:?} × {channels} channels")]
    DimensionOverflow { dims: [u32; 3], channels: u32 },
    #[error("truncated payload: need {needed} bytes, have {have}")]
    TruncatedPayload { needed: usize, have: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(VolumeError),
}

pub fn encode(grid: &VoxelGrid) -> Vec<u8> {
    let gb = grid.grid_box();
    let mut out = Vec::with_capacity(HEADER_LEN + grid.values().len() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in gb.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(grid.channels() as u32).to_le_bytes());
    for v in gb.min().to_array().iter().chain(gb.max().to_array().iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in grid.values() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    let mut a = [0u8; 8];
    a.copy_from_slice(&b[at..at + 8]);
    f64::from_le_bytes(a)
}

pub fn decode(bytes: &[u8]) -> Result<VoxelGrid, CodecError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(CodecError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::TruncatedPayload {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let dims = [u32_at(bytes, 8), u32_at(bytes, 12), u32_at(bytes, 16)];
    let channels = u32_at(bytes, 20);
    let count = dims
        .iter()
        .try_fold(channels as u64, |acc, &d| acc.checked_mul(d as u64))
        .filter(|&n| n <= MAX_VALUES)
        .ok_or(CodecError::DimensionOverflow { dims, channels })?;
    let mut corners = [0.0; 6];
    for (i, c) in corners.iter_mut().enumerate() {
        *c = f64_at(bytes, 24 + 8 * i);
    }
    let gb = GridBox::new(
        Vec3::new(corners[0], corners[1], corners[2]),
        Vec3::new(corners[3], corners[4], corners[5]),
        [dims[0] as usize, dims[1] as usize, dims[2] as usize],
    )
    .map_err(CodecError::InvalidHeader)?;
    let needed = HEADER_LEN + count as usize * 4;
    if bytes.len() < needed {
        return Err(CodecError::TruncatedPayload {
            needed,
            have: bytes.len(),
        });
    }
    let values = bytes[HEADER_LEN..needed]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    VoxelGrid::from_values(gb, channels as usize, values).map_err(CodecError::InvalidHeader)
}
