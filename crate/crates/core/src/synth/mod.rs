//! Synthetic urban drive used as a ground-truth oracle for every stage.

mod city;
mod presets;
mod products;
mod render;
mod scene;
pub mod two_view;

pub use city::{City, Hit, Surface};
pub use presets::{preset, PRESETS};
pub use products::{write_products, ProductSummary, SCENE_CONFIG_FILE};
pub use render::{RenderedKeypoints, EGO_FRACTION};
pub use scene::{backward_camera_rotation, generate_scene, synth_intrinsics, FrameTruth, NoiseConfig, Revisit, Scene, SceneConfig, TimeJump};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid scene configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
}
