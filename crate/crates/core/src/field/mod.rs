//! Trainable material field: multiresolution hash-grid features and an MLP head.
//!
//! Parameters live in one `f32` blob: every level's feature table first, then
//! the MLP (`W1, b1, W2, b2, W3, b3`, weights stored output-major). Math is
//! done in `f64`.

mod adam;
mod checkpoint;
mod encoding;

use std::ops::Range;

use glam::DVec3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brdf::ALPHA_MIN;
use crate::material::{MaterialModel, MaterialSample};
use crate::rng;
use crate::scene::{Aabb, Hit};

pub use adam::AdamState;
pub(crate) use checkpoint::write_atomic;
pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoding::{level_resolutions, Level, HASH_PRIMES};

/// Output channels: albedo rgb, roughness, metallic.
pub const OUTPUTS: usize = 5;

/// Initial uniform range of hash-table features.
pub const FEATURE_INIT_RANGE: f32 = 1e-4;

/// Output-layer biases giving albedo 0.5, roughness 0.7, metallic 0.3 before training.
pub const INITIAL_OUTPUT_BIAS: [f64; OUTPUTS] = [0.0, 0.0, 0.0, 0.788_457_360_364_270_3, -0.847_297_860_387_203_8];

/// Points per work item when evaluating in parallel.
const CHUNK: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error("field bounding box is degenerate")]
    DegenerateBbox,
    #[error("invalid field configuration: {0}")]
    Config(String),
    #[error("field version {found} does not match forward pass version {expected}")]
    VersionMismatch { expected: u64, found: u64 },
    #[error("gradient has a non-finite entry at index {0}")]
    NonFiniteGradient(usize),
    #[error("gradient has {actual} entries, field has {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldConfig {
    pub levels: u32,
    pub features: u32,
    pub log2_table_size: u32,
    pub base_resolution: u32,
    pub max_resolution: u32,
    pub hidden: u32,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { levels: 16, features: 2, log2_table_size: 19, base_resolution: 16, max_resolution: 2048, hidden: 64, seed: 0 }
    }
}

impl FieldConfig {
    /// A reduced grid for small scenes and quick runs.
    pub fn compact() -> Self {
        Self { levels: 8, features: 2, log2_table_size: 15, base_resolution: 8, max_resolution: 256, hidden: 32, seed: 0 }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let err = |m: &str| Err(FieldError::Config(m.to_string()));
        if self.levels == 0 || self.features == 0 || self.hidden == 0 {
            return err("levels, features and hidden width must be positive");
        }
        if !(1..=30).contains(&self.log2_table_size) {
            return err("log2_table_size must be in 1..=30");
        }
        if self.base_resolution < 1 || self.max_resolution < self.base_resolution {
            return err("need 1 <= base_resolution <= max_resolution");
        }
        let res = level_resolutions(self.levels, self.base_resolution, self.max_resolution);
        if res.windows(2).any(|w| w[0] >= w[1]) {
            return err("level resolutions are not strictly increasing");
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        (self.levels * self.features) as usize
    }
}

/// Receives gradient contributions by flat parameter index.
pub trait GradientSink {
    fn add(&mut self, index: usize, value: f64);
}

/// Dense gradient over every field parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGradient {
    pub values: Vec<f64>,
}

impl FieldGradient {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn clear(&mut self) {
        self.values.fill(0.0);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Adds a worker's partial gradient; entries are applied in recorded order.
    pub fn merge(&mut self, part: &PartialGradient) {
        for (i, v) in &part.table {
            self.values[*i] += v;
        }
        for (dst, v) in self.values[part.table_len..].iter_mut().zip(&part.mlp) {
            *dst += v;
        }
    }
}

impl GradientSink for FieldGradient {
    fn add(&mut self, index: usize, value: f64) {
        self.values[index] += value;
    }
}

/// Per-worker gradient: sparse over the feature tables, dense over the MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialGradient {
    table_len: usize,
    table: Vec<(usize, f64)>,
    mlp: Vec<f64>,
}

impl PartialGradient {
    pub fn new(field: &MaterialField) -> Self {
        Self { table_len: field.table_len, table: Vec::new(), mlp: vec![0.0; field.params.len() - field.table_len] }
    }
}

impl GradientSink for PartialGradient {
    fn add(&mut self, index: usize, value: f64) {
        if index < self.table_len {
            self.table.push((index, value));
        } else {
            self.mlp[index - self.table_len] += value;
        }
    }
}

/// Intermediate values of one forward evaluation.
struct Trace {
    corners: Vec<[(u32, f64); 8]>,
    input: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    sig: [f64; OUTPUTS],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct MlpLayout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

impl MlpLayout {
    fn new(start: usize, input: usize, hidden: usize) -> Self {
        let w1 = start;
        let b1 = w1 + hidden * input;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden * hidden;
        let w3 = b2 + hidden;
        let b3 = w3 + OUTPUTS * hidden;
        Self { w1, b1, w2, b2, w3, b3, end: b3 + OUTPUTS }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialField {
    config: FieldConfig,
    bbox: Aabb,
    levels: Vec<Level>,
    table_len: usize,
    mlp: MlpLayout,
    params: Vec<f32>,
    version: u64,
}

impl MaterialField {
    pub fn new(bbox: Aabb, config: FieldConfig) -> Result<Self, FieldError> {
        let mut field = Self::zeroed(bbox, config)?;
        let mut r = rng::stream(config.seed, 0x6669_656c_64);
        for v in &mut field.params[..field.table_len] {
            *v = r.random_range(-FEATURE_INIT_RANGE..=FEATURE_INIT_RANGE);
        }
        let (input, hidden) = (config.input_width(), config.hidden as usize);
        let l = field.mlp;
        for (start, fan_in, fan_out) in [(l.w1, input, hidden), (l.w2, hidden, hidden), (l.w3, hidden, OUTPUTS)] {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut field.params[start..start + fan_in * fan_out] {
                *v = r.random_range(-limit..=limit) as f32;
            }
        }
        for (v, b) in field.params[l.b3..l.end].iter_mut().zip(INITIAL_OUTPUT_BIAS) {
            *v = b as f32;
        }
        Ok(field)
    }

    /// Field with all parameters zero.
    pub fn zeroed(bbox: Aabb, config: FieldConfig) -> Result<Self, FieldError> {
        config.validate()?;
        let e = bbox.extent();
        if !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0) || !e.is_finite() {
            return Err(FieldError::DegenerateBbox);
        }
        let table = 1u32 << config.log2_table_size;
        let mut offset = 0;
        let levels = level_resolutions(config.levels, config.base_resolution, config.max_resolution)
            .into_iter()
            .map(|n| {
                let level = Level::new(n, table, offset);
                offset += level.entries as usize * config.features as usize;
                level
            })
            .collect();
        let mlp = MlpLayout::new(offset, config.input_width(), config.hidden as usize);
        Ok(Self { config, bbox, levels, table_len: offset, mlp, params: vec![0.0; mlp.end], version: 0 })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn bbox(&self) -> Aabb {
        self.bbox
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Number of leading parameters that belong to the feature tables.
    pub fn table_len(&self) -> usize {
        self.table_len
    }

    pub fn mlp_range(&self) -> Range<usize> {
        self.table_len..self.mlp.end
    }

    pub fn mlp_weight_ranges(&self) -> [Range<usize>; 3] {
        let l = self.mlp;
        [l.w1..l.b1, l.w2..l.b2, l.w3..l.b3]
    }

    pub fn output_bias_range(&self) -> Range<usize> {
        self.mlp.b3..self.mlp.end
    }

    pub fn set_param(&mut self, index: usize, value: f32) {
        self.params[index] = value;
        self.version += 1;
    }

    /// Replaces every parameter at once.
    pub fn set_params(&mut self, params: &[f32]) -> Result<(), FieldError> {
        if params.len() != self.params.len() {
            return Err(FieldError::ShapeMismatch { expected: self.params.len(), actual: params.len() });
        }
        self.params.copy_from_slice(params);
        self.version += 1;
        Ok(())
    }

    pub fn zero_gradient(&self) -> FieldGradient {
        FieldGradient::zeros(self.params.len())
    }

    /// Position inside the unit cube; points outside the box are clamped to it.
    pub fn normalize(&self, p: DVec3) -> DVec3 {
        ((p - self.bbox.min) / self.bbox.extent()).clamp(DVec3::ZERO, DVec3::ONE)
    }

    /// Parameter indices read when evaluating `p`.
    pub fn touched_entries(&self, p: DVec3) -> Vec<usize> {
        let x = self.normalize(p);
        let f = self.config.features as usize;
        let mut out: Vec<usize> = self
            .levels
            .iter()
            .flat_map(|level| {
                level.corners(x).into_iter().flat_map(move |(row, _)| (0..f).map(move |k| level.offset + row as usize * f + k))
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn w(&self, i: usize) -> f64 {
        self.params[i] as f64
    }

    fn trace(&self, p: DVec3) -> Trace {
        let x = self.normalize(p);
        let f = self.config.features as usize;
        let hidden = self.config.hidden as usize;
        let mut corners = Vec::with_capacity(self.levels.len());
        let mut input = vec![0.0; self.config.input_width()];
        for (l, level) in self.levels.iter().enumerate() {
            let c = level.corners(x);
            for (row, weight) in c {
                let base = level.offset + row as usize * f;
                for k in 0..f {
                    input[l * f + k] += weight * self.w(base + k);
                }
            }
            corners.push(c);
        }
        let l = self.mlp;
        let dense = |w: usize, b: usize, inp: &[f64], out_n: usize| -> Vec<f64> {
            (0..out_n)
                .map(|o| {
                    let row = &self.params[w + o * inp.len()..w + (o + 1) * inp.len()];
                    row.iter().zip(inp).fold(self.w(b + o), |acc, (wi, xi)| acc + *wi as f64 * xi)
                })
                .collect()
        };
        let z1 = dense(l.w1, l.b1, &input, hidden);
        let a1: Vec<f64> = z1.iter().map(|v| silu(*v)).collect();
        let z2 = dense(l.w2, l.b2, &a1, hidden);
        let a2: Vec<f64> = z2.iter().map(|v| silu(*v)).collect();
        let z3 = dense(l.w3, l.b3, &a2, OUTPUTS);
        let sig = std::array::from_fn(|i| sigmoid(z3[i]));
        Trace { corners, input, z1, a1, z2, a2, sig }
    }

    fn sample_from(sig: &[f64; OUTPUTS]) -> MaterialSample {
        MaterialSample {
            albedo: DVec3::new(sig[0], sig[1], sig[2]),
            roughness: ALPHA_MIN + (1.0 - ALPHA_MIN) * sig[3],
            metallic: sig[4],
        }
    }

    pub fn eval(&self, p: DVec3) -> MaterialSample {
        Self::sample_from(&self.trace(p).sig)
    }

    pub fn eval_many(&self, points: &[DVec3]) -> Vec<MaterialSample> {
        points.par_iter().map(|p| self.eval(*p)).collect()
    }

    /// Accumulates `upstream . d(eval(p)) / d(params)` into `grad`.
    ///
    /// `upstream` is ordered `[albedo r, g, b, roughness, metallic]`;
    /// `version` is the field version seen by the forward pass.
    pub fn eval_backward(
        &self,
        p: DVec3,
        version: u64,
        upstream: &[f64; OUTPUTS],
        grad: &mut impl GradientSink,
    ) -> Result<(), FieldError> {
        if version != self.version {
            return Err(FieldError::VersionMismatch { expected: version, found: self.version });
        }
        if upstream.iter().all(|u| *u == 0.0) {
            return Ok(());
        }
        let t = self.trace(p);
        let l = self.mlp;
        let hidden = self.config.hidden as usize;
        let input_n = t.input.len();

        let dz3: [f64; OUTPUTS] = std::array::from_fn(|i| {
            let scale = if i == 3 { 1.0 - ALPHA_MIN } else { 1.0 };
            upstream[i] * scale * t.sig[i] * (1.0 - t.sig[i])
        });
        let mut da2 = vec![0.0; hidden];
        for (o, d) in dz3.iter().enumerate() {
            grad.add(l.b3 + o, *d);
            for (h, a) in t.a2.iter().enumerate() {
                grad.add(l.w3 + o * hidden + h, d * a);
                da2[h] += d * self.w(l.w3 + o * hidden + h);
            }
        }
        let dz2: Vec<f64> = da2.iter().zip(&t.z2).map(|(d, z)| d * silu_grad(*z)).collect();
        let mut da1 = vec![0.0; hidden];
        for (o, d) in dz2.iter().enumerate() {
            grad.add(l.b2 + o, *d);
            for (h, a) in t.a1.iter().enumerate() {
                grad.add(l.w2 + o * hidden + h, d * a);
                da1[h] += d * self.w(l.w2 + o * hidden + h);
            }
        }
        let dz1: Vec<f64> = da1.iter().zip(&t.z1).map(|(d, z)| d * silu_grad(*z)).collect();
        let mut dinput = vec![0.0; input_n];
        for (o, d) in dz1.iter().enumerate() {
            grad.add(l.b1 + o, *d);
            for (i, x) in t.input.iter().enumerate() {
                grad.add(l.w1 + o * input_n + i, d * x);
                dinput[i] += d * self.w(l.w1 + o * input_n + i);
            }
        }
        let f = self.config.features as usize;
        for (lvl, (level, corners)) in self.levels.iter().zip(&t.corners).enumerate() {
            for (row, weight) in corners {
                if *weight == 0.0 {
                    continue;
                }
                let base = level.offset + *row as usize * f;
                for k in 0..f {
                    grad.add(base + k, weight * dinput[lvl * f + k]);
                }
            }
        }
        Ok(())
    }

    /// Backward pass over many points, reduced in a fixed order.
    pub fn eval_backward_many(
        &self,
        items: &[(DVec3, [f64; OUTPUTS])],
        version: u64,
        grad: &mut FieldGradient,
    ) -> Result<(), FieldError> {
        let parts = items
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut part = PartialGradient::new(self);
                for (p, up) in chunk {
                    self.eval_backward(*p, version, up, &mut part)?;
                }
                Ok(part)
            })
            .collect::<Result<Vec<_>, FieldError>>()?;
        for part in &parts {
            grad.merge(part);
        }
        Ok(())
    }

    /// Mean squared difference between the field at each point and at a
    /// Gaussian-jittered copy, over points and the 5 output channels.
    ///
    /// When `grad` is given, `weight * d loss / d params` is accumulated.
    pub fn smoothness_loss(
        &self,
        points: &[DVec3],
        sigma: f64,
        seed: u64,
        weight: f64,
        grad: Option<&mut FieldGradient>,
    ) -> Result<f64, FieldError> {
        if points.is_empty() {
            return Ok(0.0);
        }
        let denom = (points.len() * OUTPUTS) as f64;
        let want_grad = grad.is_some();
        let parts = points
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut part = want_grad.then(|| PartialGradient::new(self));
                let mut sum = 0.0;
                for (i, p) in chunk.iter().enumerate() {
                    let mut r = rng::stream(seed, (c * CHUNK + i) as u64);
                    let eps = DVec3::new(
                        StandardNormal.sample(&mut r),
                        StandardNormal.sample(&mut r),
                        StandardNormal.sample(&mut r),
                    ) * sigma;
                    let q = *p + eps;
                    let a = self.eval(*p).to_array();
                    let b = self.eval(q).to_array();
                    let diff: [f64; OUTPUTS] = std::array::from_fn(|k| a[k] - b[k]);
                    sum += diff.iter().map(|d| d * d).sum::<f64>();
                    if let Some(part) = part.as_mut() {
                        let up: [f64; OUTPUTS] = std::array::from_fn(|k| weight * 2.0 * diff[k] / denom);
                        let down = up.map(|u| -u);
                        self.eval_backward(*p, self.version, &up, part)?;
                        self.eval_backward(q, self.version, &down, part)?;
                    }
                }
                Ok((sum, part))
            })
            .collect::<Result<Vec<_>, FieldError>>()?;
        let mut total = 0.0;
        let mut grad = grad;
        for (sum, part) in &parts {
            total += sum;
            if let (Some(g), Some(part)) = (grad.as_deref_mut(), part) {
                g.merge(part);
            }
        }
        Ok(total / denom)
    }

    /// One Adam update; the version increments even for a zero gradient.
    pub fn apply_adam(&mut self, grad: &FieldGradient, state: &mut AdamState) -> Result<(), FieldError> {
        state.update(&mut self.params, &grad.values)?;
        self.version += 1;
        Ok(())
    }
}

impl MaterialModel for MaterialField {
    fn material_at(&self, hit: &Hit) -> MaterialSample {
        self.eval(hit.point)
    }

    fn version(&self) -> Option<u64> {
        Some(self.version)
    }
}
