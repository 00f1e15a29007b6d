//! Geometry and lighting condition stacks for guidance providers.
//!
//! A stack has 22 channels per pixel: six renders of fixed white materials
//! (18 channels), the x-flipped view-space normal (3) and normalized inverse
//! depth (1).

use std::fs;
use std::path::{Path, PathBuf};

use glam::DVec3;
use serde::{Deserialize, Serialize};

use crate::field::write_atomic;
use crate::material::MaterialSample;
use crate::render::{render_image, RenderConfig, RenderError};
use crate::rng;
use crate::scene::{render_gbuffer, Camera, EnvironmentMap, Scene};

pub const CONDITION_CHANNELS: usize = 22;
pub const LIGHT_CHANNELS: usize = 18;
pub const NORMAL_CHANNEL: usize = 18;
pub const DEPTH_CHANNEL: usize = 21;
pub const CMAP_MAGIC: &[u8; 4] = b"CMAP";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum ConditionError {
    #[error("condition stack needs {expected} values for {width}x{height}x22, got {actual}")]
    Shape { width: usize, height: usize, expected: usize, actual: usize },
    #[error("bad CMAP data: {0}")]
    Format(String),
    #[error("{path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid condition manifest")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Render(#[from] RenderError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ConditionError + '_ {
    move |source| ConditionError::Io { path: path.to_path_buf(), source }
}

/// One of the white reference materials used for light conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredefMaterial {
    pub metallic: f64,
    /// Nominal roughness; clamped to the BRDF minimum when rendered.
    pub roughness: f64,
}

impl PredefMaterial {
    pub fn albedo(&self) -> DVec3 {
        DVec3::ONE
    }

    pub fn sample(&self) -> MaterialSample {
        MaterialSample::new(self.albedo(), self.roughness, self.metallic)
    }
}

/// The six reference materials in channel order.
pub fn predefined_materials() -> [PredefMaterial; 6] {
    let m = |metallic, roughness| PredefMaterial { metallic, roughness };
    [m(0.0, 0.0), m(0.0, 0.5), m(0.0, 1.0), m(1.0, 0.0), m(1.0, 0.5), m(1.0, 1.0)]
}

/// Row-major `height x width x 22` floats.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionStack {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ConditionStack {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ConditionError> {
        let expected = width * height * CONDITION_CHANNELS;
        if data.len() != expected {
            return Err(ConditionError::Shape { width, height, expected, actual: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let at = (y * self.width + x) * CONDITION_CHANNELS;
        &self.data[at..at + CONDITION_CHANNELS]
    }

    /// `CMAP`, u32 width, height, channels, then row-major little-endian f32.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(CMAP_MAGIC);
        for v in [self.width as u32, self.height as u32, CONDITION_CHANNELS as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ConditionError> {
        if bytes.len() < 16 || &bytes[..4] != CMAP_MAGIC {
            return Err(ConditionError::Format("missing CMAP header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (width, height, channels) = (word(0), word(1), word(2));
        if channels != CONDITION_CHANNELS {
            return Err(ConditionError::Format(format!("expected 22 channels, found {channels}")));
        }
        if bytes.len() != 16 + 4 * width * height * channels {
            return Err(ConditionError::Format(format!("payload does not match {width}x{height}")));
        }
        let data = bytes[16..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(width, height, data)
    }

    pub fn write(&self, path: &Path) -> Result<(), ConditionError> {
        write_atomic(path, &self.encode()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, ConditionError> {
        Self::decode(&fs::read(path).map_err(io_err(path))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditionConfig {
    pub width: usize,
    pub height: usize,
    /// Diffuse and specular sample count of each light render.
    pub samples: usize,
    pub shadows: bool,
    pub seed: u64,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        Self { width: 512, height: 512, samples: 64, shadows: true, seed: 0 }
    }
}

pub fn render_condition_stack(
    scene: &Scene,
    camera: &Camera,
    env: &EnvironmentMap,
    config: &ConditionConfig,
) -> Result<ConditionStack, ConditionError> {
    let (w, h) = (config.width, config.height);
    let render = RenderConfig { shadows: config.shadows, ..RenderConfig::new(w, h, config.samples, config.seed) };
    let mut data = vec![0f32; w * h * CONDITION_CHANNELS];
    for (k, m) in predefined_materials().iter().enumerate() {
        let (img, _) = render_image(scene, camera, env, &m.sample(), &render)?;
        for (i, p) in img.rgb.pixels.iter().enumerate() {
            let at = i * CONDITION_CHANNELS + 3 * k;
            data[at..at + 3].copy_from_slice(&[p.x as f32, p.y as f32, p.z as f32]);
        }
    }
    let gb = render_gbuffer(scene, camera, w, h);
    for i in 0..w * h {
        let at = i * CONDITION_CHANNELS;
        data[at + NORMAL_CHANNEL..at + NORMAL_CHANNEL + 3].copy_from_slice(&gb.normal[i]);
        data[at + DEPTH_CHANNEL] = gb.depth[i];
    }
    ConditionStack::new(w, h, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub view: usize,
    pub env: usize,
    pub camera: Camera,
    /// Path relative to the manifest directory.
    pub file: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionManifest {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub samples: usize,
    pub seed: u64,
    /// Labels of the environment maps, indexed by `ManifestEntry::env`.
    pub envs: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl ConditionManifest {
    pub fn read(dir: &Path) -> Result<Self, ConditionError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, dir: &Path) -> Result<(), ConditionError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(&path, text.as_bytes()).map_err(io_err(&path))
    }

    pub fn views(&self) -> usize {
        self.entries.iter().map(|e| e.view + 1).max().unwrap_or(0)
    }

    pub fn find(&self, view: usize, env: usize) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.view == view && e.env == env)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputeReport {
    pub manifest: ConditionManifest,
    pub rendered: usize,
    pub skipped: usize,
}

fn entry_file(view: usize, env: usize) -> String {
    format!("view{view:03}_env{env}.cmap")
}

fn existing_is_valid(path: &Path, config: &ConditionConfig) -> bool {
    matches!(ConditionStack::read(path), Ok(s) if s.width == config.width && s.height == config.height)
}

/// Renders a stack for every (camera, environment) pair into `out_dir` and
/// writes `manifest.json`. Valid files already present are kept.
pub fn precompute_conditions(
    scene: &Scene,
    cameras: &[Camera],
    envs: &[(String, EnvironmentMap)],
    out_dir: &Path,
    config: &ConditionConfig,
) -> Result<PrecomputeReport, ConditionError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut manifest = ConditionManifest {
        width: config.width,
        height: config.height,
        channels: CONDITION_CHANNELS,
        samples: config.samples,
        seed: config.seed,
        envs: envs.iter().map(|(label, _)| label.clone()).collect(),
        entries: Vec::new(),
    };
    let (mut rendered, mut skipped) = (0, 0);
    for (view, camera) in cameras.iter().enumerate() {
        for (env_id, (_, env)) in envs.iter().enumerate() {
            let file = entry_file(view, env_id);
            let path = out_dir.join(&file);
            let seed = rng::derive_seed(config.seed, (view * envs.len() + env_id) as u64);
            if existing_is_valid(&path, config) {
                skipped += 1;
            } else {
                let stack = render_condition_stack(scene, camera, env, &ConditionConfig { seed, ..*config });
                let written = stack.and_then(|s| s.write(&path));
                if let Err(e) = written {
                    manifest.write(out_dir)?;
                    return Err(e);
                }
                rendered += 1;
            }
            manifest.entries.push(ManifestEntry { view, env: env_id, camera: *camera, file, seed });
        }
    }
    if skipped > 0 {
        log::info!("skipped {skipped} existing condition stacks");
    }
    manifest.write(out_dir)?;
    Ok(PrecomputeReport { manifest, rendered, skipped })
}
