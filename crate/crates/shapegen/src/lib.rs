//! Procedural multi-view depth datasets.
//!
//! Shapes are primitives defined by signed distance functions, normalized to
//! a unit bounding radius and rendered by sphere tracing from a ring-plus-
//! poles camera rig. Occlusion (a second unioned shape) and background
//! clutter (a bounded heightfield) can be injected deterministically, and
//! whole datasets round-trip through a binary archive with a JSON manifest.

pub mod camera;
pub mod dataset;
mod error;
pub mod io;
pub mod noise;
pub mod pgm;
pub mod render;
pub mod seeds;
pub mod shape;
pub mod vec3;

pub use camera::{camera_ring, camera_ring_at, CameraPose, DEFAULT_CAMERA_DISTANCE};
pub use dataset::{
    build_dataset, ClutterTraining, DatasetConfig, DatasetManifest, NoiseRecord, ShapeRecord,
    Split,
};
pub use error::{Error, Result};
pub use io::{read_dataset, write_dataset};
pub use noise::{
    inject_clutter, inject_occluder, ClutterNoise, NoiseSpec, OccluderNoise, OccluderPlacement,
    Scene, OCCLUDER_SIZE_MAX, OCCLUDER_SIZE_MIN, OCCLUDER_SIZE_TRAIN,
};
pub use render::{render_depth, render_sdf, DepthImage};
pub use seeds::{derive_seed, SeedDomain};
pub use shape::{sdf_eval, ShapeCategory, ShapeParams, ShapeSpec};
