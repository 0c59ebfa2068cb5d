use std::fs;
use std::path::Path;

use volrig_core::volume::{decode, encode};
use volrig_core::VoxelGrid;

use crate::error::{codec, Error, Result};

pub fn write_volume(path: &Path, grid: &VoxelGrid) -> Result<()> {
    fs::write(path, encode(grid)).map_err(|e| Error::io(path, e))
}

/// Values are stored as `f32`. The exterior value is not part of the file
/// and comes back as zeros.
pub fn read_volume(path: &Path) -> Result<VoxelGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| codec(path, e))
}
