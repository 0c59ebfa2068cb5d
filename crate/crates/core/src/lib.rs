//! Posable voxel-volume character model.
//!
//! A character is a canonical RGBα voxel volume plus a motion-weight volume
//! (one channel per bone and one background channel). Posing warps target
//! space back into canonical space with volumetric linear blend skinning;
//! images come from front-to-back ray marching, and both volumes are fit to
//! posed photographs by gradient descent with exact adjoints.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, PNG IO,
//! threading and the command line live in the `volrig` companion crate.

#![no_std]

extern crate alloc;

pub mod deform;
pub mod exec;
pub mod filter;
pub mod fit;
pub mod kinematics;
pub mod math;
pub mod render;
pub mod rng;
pub mod synth;
pub mod volume;

pub use kinematics::{MotionBasisSet, Pose, RigidTransform, Skeleton};
pub use math::{Mat3, Vec3};
pub use volume::{GridBox, VoxelGrid};
