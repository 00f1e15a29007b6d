//! Guidance-driven PBR material generation.
//!
//! A mesh's albedo, roughness and metallic parameters are represented by a
//! trainable multiresolution hash-grid field ([`field::MaterialField`]). The
//! field is rendered under known HDR environment lighting with an
//! importance-sampled split diffuse/specular estimator ([`render`]), and
//! optimized by distilling noise predictions from a pluggable guidance
//! provider ([`distill`]). Conditioning inputs for the provider (normal,
//! depth and six predefined-material light renders) are produced by
//! [`condition`]. Trained fields are baked into UV texture maps by
//! [`texture`].
//!
//! The `examples/` directory of this crate has one runnable program per
//! capability; the `matforge` binary wraps the same pipeline for batch use.

pub mod brdf;
pub mod cli;
pub mod condition;
pub mod distill;
pub mod field;
pub mod image;
pub mod material;
pub mod recovery;
pub mod render;
pub mod rng;
pub mod scene;
pub mod texture;

pub use brdf::ALPHA_MIN;
pub use condition::{ConditionStack, PredefMaterial};
pub use field::{FieldConfig, FieldGradient, MaterialField};
pub use image::{LinearImage, RgbImage};
pub use material::{MaterialModel, MaterialSample};
pub use render::{RenderConfig, RenderTape};
pub use scene::{Camera, EnvironmentMap, GBuffer, Hit, Ray, Scene, TriangleMesh};
