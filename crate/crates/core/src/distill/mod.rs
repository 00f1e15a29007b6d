//! The material-generation loop.
//!
//! Each step renders the field from a random precomputed (view, environment)
//! pair, noises the display image, asks a [`GuidanceProvider`] for noise
//! predictions under the positive, null and negative prompts, and pushes the
//! resulting residual back through the renderer into the field with Adam.

pub mod http;
pub mod provider;
pub mod residual;
pub mod schedule;
pub mod stub;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use glam::DVec3;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::condition::{ConditionError, ConditionManifest, ConditionStack};
use crate::field::{write_atomic, AdamState, FieldConfig, FieldError, MaterialField};
use crate::image::RgbImage;
use crate::render::{encode_srgb, render_backward, render_image, RenderConfig, RenderError};
use crate::rng;
use crate::scene::{EnvironmentMap, Scene};

pub use http::HttpProvider;
pub use provider::{GuidanceError, GuidanceProvider, GuidanceRequest, PromptSlot, SyntheticOracle};
pub use residual::{csd_residual, sds_residual};
pub use schedule::{add_noise, control_scale_at, eta2_at, NoiseSchedule, ETA1};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FIELD_FILE: &str = "field.matf";
/// Fraction by which the mesh bounds are grown to give the field domain.
pub const FIELD_PADDING: f64 = 0.05;
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error("invalid distillation config: {0}")]
    Config(String),
    #[error("image is {actual:?}, expected {expected:?}")]
    Shape { expected: (usize, usize), actual: (usize, usize) },
    #[error("step {step} failed after {attempts} attempts: {last}")]
    RetriesExhausted { step: usize, attempts: usize, last: Box<DistillError> },
    #[error("guidance residual or gradient is not finite")]
    NonFinite,
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Condition(#[from] ConditionError),
    #[error("{path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("metrics log")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DistillError + '_ {
    move |source| DistillError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Csd,
    Sds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub steps: usize,
    pub lr: f64,
    pub eta1: f64,
    pub eta2_start: f64,
    pub eta2_end: f64,
    pub control_start: f64,
    pub control_end: f64,
    pub control_decay_start: usize,
    pub smooth_weight: f64,
    pub smooth_sigma: f64,
    pub t_min: usize,
    pub t_max: usize,
    pub width: usize,
    pub height: usize,
    /// Diffuse and specular samples per pixel.
    pub samples: usize,
    pub shadows: bool,
    pub seed: u64,
    pub prompt: String,
    pub negative_prompt: String,
    /// Write a checkpoint every this many steps; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub max_retries: usize,
    pub loss: LossKind,
    pub field: FieldConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            lr: 0.01,
            eta1: schedule::ETA1,
            eta2_start: schedule::ETA2_START,
            eta2_end: schedule::ETA2_END,
            control_start: schedule::CONTROL_START,
            control_end: schedule::CONTROL_END,
            control_decay_start: schedule::CONTROL_DECAY_STEP,
            smooth_weight: 1.0,
            smooth_sigma: 0.05,
            t_min: 20,
            t_max: 980,
            width: 512,
            height: 512,
            samples: 64,
            shadows: true,
            seed: 0,
            prompt: String::new(),
            negative_prompt: "oversaturated color, ugly, underexposed, overexposed".into(),
            checkpoint_every: 500,
            max_retries: 3,
            loss: LossKind::Csd,
            field: FieldConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn from_json(text: &str) -> Result<Self, DistillError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        let err = |m: &str| Err(DistillError::Config(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err("lr must be positive");
        }
        if self.t_min < 1 || self.t_max > schedule::TIMESTEPS || self.t_min > self.t_max {
            return err("need 1 <= t_min <= t_max <= 1000");
        }
        if self.width == 0 || self.height == 0 || self.samples == 0 {
            return err("width, height and samples must be positive");
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.control_start) || !unit(self.control_end) {
            return err("control scales must lie in [0, 1]");
        }
        if [self.eta1, self.eta2_start, self.eta2_end, self.smooth_weight, self.smooth_sigma]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return err("eta, smoothness weight and sigma must be finite and non-negative");
        }
        self.field.validate()?;
        Ok(())
    }

    pub fn eta2(&self, step: usize) -> f64 {
        schedule::linear_anneal(step, self.steps, self.eta2_start, self.eta2_end)
    }

    pub fn control_scale(&self, step: usize) -> f64 {
        schedule::delayed_anneal(step, self.steps, self.control_decay_start, self.control_start, self.control_end)
    }

    pub fn render_config(&self, seed: u64) -> RenderConfig {
        RenderConfig { shadows: self.shadows, ..RenderConfig::new(self.width, self.height, self.samples, seed) }
    }
}

/// Scene, lights and precomputed conditions shared by every step.
#[derive(Debug, Clone, Copy)]
pub struct DistillContext<'a> {
    pub scene: &'a Scene,
    /// Indexed by `ManifestEntry::env`.
    pub envs: &'a [EnvironmentMap],
    pub manifest: &'a ConditionManifest,
    pub condition_dir: &'a Path,
}

#[derive(Debug, Clone)]
pub struct DistillState {
    pub field: MaterialField,
    pub adam: AdamState,
    /// Number of accepted steps.
    pub step: usize,
}

impl DistillState {
    /// Fresh field over the padded mesh bounds.
    pub fn new(scene: &Scene, config: &DistillConfig) -> Result<Self, DistillError> {
        let field = MaterialField::new(scene.mesh.bbox.padded(FIELD_PADDING), config.field)?;
        let adam = AdamState::new(field.param_count(), config.lr);
        Ok(Self { field, adam, step: 0 })
    }
}

/// Deterministic per-step record. `elapsed_ms` is not serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub view: usize,
    pub env: usize,
    pub t: usize,
    pub alpha_bar: f64,
    pub eta2: f64,
    pub control_scale: f64,
    /// Mean |delta| over pixels and channels.
    pub delta_abs_mean: f64,
    /// Mean squared image residual after the `sqrt(abar)` chain factor.
    pub residual_sq_mean: f64,
    pub smooth_loss: f64,
    pub grad_norm: f64,
    pub attempts: usize,
    #[serde(skip)]
    pub elapsed_ms: f64,
}

enum Failure {
    Retry(DistillError),
    Fatal(DistillError),
}

impl<E: Into<DistillError>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Fatal(e.into())
    }
}

/// Runs one optimization step, retrying provider failures and non-finite
/// residuals up to `config.max_retries` times. Rejected attempts leave the
/// field and the Adam state untouched.
pub fn distill_step(
    config: &DistillConfig,
    ctx: &DistillContext,
    schedule: &NoiseSchedule,
    state: &mut DistillState,
    provider: &impl GuidanceProvider,
) -> Result<StepMetrics, DistillError> {
    if ctx.manifest.entries.is_empty() {
        return Err(DistillError::Config("condition manifest has no entries".into()));
    }
    let start = Instant::now();
    let mut last = None;
    for attempt in 0..=config.max_retries {
        match attempt_step(config, ctx, schedule, state, provider, attempt) {
            Ok(mut m) => {
                m.attempts = attempt + 1;
                m.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
                state.step += 1;
                return Ok(m);
            }
            Err(Failure::Fatal(e)) => return Err(e),
            Err(Failure::Retry(e)) => {
                log::warn!("step {} attempt {} rejected: {e}", state.step, attempt + 1);
                last = Some(e);
            }
        }
    }
    Err(DistillError::RetriesExhausted {
        step: state.step,
        attempts: config.max_retries + 1,
        last: Box::new(last.unwrap_or(DistillError::NonFinite)),
    })
}

fn attempt_step(
    config: &DistillConfig,
    ctx: &DistillContext,
    schedule: &NoiseSchedule,
    state: &mut DistillState,
    provider: &impl GuidanceProvider,
    attempt: usize,
) -> Result<StepMetrics, Failure> {
    let step = state.step;
    let mut r = rng::stream(rng::derive_seed(config.seed, 1 + attempt as u64), step as u64);
    let entry = &ctx.manifest.entries[r.random_range(0..ctx.manifest.entries.len())];
    let t = r.random_range(config.t_min..=config.t_max);
    let (render_seed, noise_seed, smooth_seed) = (r.next_u64(), r.next_u64(), r.next_u64());

    let env = ctx
        .envs
        .get(entry.env)
        .ok_or_else(|| DistillError::Config(format!("no environment map for index {}", entry.env)))?;
    let condition = ConditionStack::read(&ctx.condition_dir.join(&entry.file))?;
    if (condition.width(), condition.height()) != (config.width, config.height) {
        return Err(DistillError::Shape {
            expected: (config.width, config.height),
            actual: (condition.width(), condition.height()),
        }
        .into());
    }

    let (linear, tape) = render_image(ctx.scene, &entry.camera, env, &state.field, &config.render_config(render_seed))?;
    let clean = encode_srgb(&linear);
    let (noisy, eps) = add_noise(&clean, t, schedule, &mut rng::stream(noise_seed, 0));
    let alpha_bar = schedule.alpha_bar(t);
    let control_scale = config.control_scale(step);
    let eta2 = config.eta2(step);

    let request = |slot: PromptSlot| GuidanceRequest {
        noisy: &noisy,
        clean: &clean,
        t,
        alpha_bar,
        slot,
        prompt: match slot {
            PromptSlot::Positive => &config.prompt,
            PromptSlot::Null => "",
            PromptSlot::Negative => &config.negative_prompt,
        },
        negative_prompt: &config.negative_prompt,
        condition: &condition,
        control_scale,
        view: entry.view,
        env: entry.env,
    };
    let predict = |slot| provider.predict_noise(&request(slot)).map_err(|e| Failure::Retry(e.into()));
    let delta = match config.loss {
        LossKind::Csd => {
            let (pos, (null, neg)) =
                rayon::join(|| predict(PromptSlot::Positive), || rayon::join(|| predict(PromptSlot::Null), || predict(PromptSlot::Negative)));
            csd_residual(&pos?, &null?, &neg?, config.eta1, eta2)?
        }
        LossKind::Sds => sds_residual(&predict(PromptSlot::Positive)?, &eps, 1.0 - alpha_bar)?,
    };
    if !delta.is_finite() {
        return Err(Failure::Retry(DistillError::NonFinite));
    }

    let scale = alpha_bar.sqrt();
    let residual = RgbImage {
        width: delta.width,
        height: delta.height,
        pixels: delta.pixels.iter().map(|d| *d * scale).collect(),
    };
    let mut grad = state.field.zero_gradient();
    render_backward(&tape, &state.field, &residual, &mut grad)?;
    let smooth_loss = if config.smooth_weight > 0.0 {
        state.field.smoothness_loss(&tape.hit_points(), config.smooth_sigma, smooth_seed, config.smooth_weight, Some(&mut grad))?
    } else {
        0.0
    };
    if !grad.is_finite() {
        return Err(Failure::Retry(DistillError::NonFinite));
    }
    state.field.apply_adam(&grad, &mut state.adam)?;

    let n = (delta.len() * 3) as f64;
    let sum = |f: fn(DVec3) -> f64, img: &RgbImage| img.pixels.iter().map(|p| f(*p)).sum::<f64>() / n;
    Ok(StepMetrics {
        step,
        view: entry.view,
        env: entry.env,
        t,
        alpha_bar,
        eta2,
        control_scale,
        delta_abs_mean: sum(|p| p.abs().element_sum(), &delta),
        residual_sq_mean: sum(|p| p.length_squared(), &delta) * alpha_bar,
        smooth_loss,
        grad_norm: grad.norm(),
        attempts: 0,
        elapsed_ms: 0.0,
    })
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub state: DistillState,
    /// Metrics of every step from 0, including steps restored on resume.
    pub metrics: Vec<StepMetrics>,
    pub resumed_from: Option<usize>,
}

pub fn checkpoint_paths(out: &Path, step: usize) -> (PathBuf, PathBuf) {
    let dir = out.join(CHECKPOINT_DIR);
    (dir.join(format!("step_{step:06}.matf")), dir.join(format!("step_{step:06}.adam")))
}

fn save_checkpoint(out: &Path, state: &DistillState) -> Result<(), DistillError> {
    let (field_path, adam_path) = checkpoint_paths(out, state.step);
    let dir = out.join(CHECKPOINT_DIR);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_atomic(&adam_path, &state.adam.encode()).map_err(io_err(&adam_path))?;
    state.field.save(&field_path)?;
    Ok(())
}

/// Latest checkpoint whose field and Adam files both load.
pub fn latest_checkpoint(out: &Path) -> Option<(usize, MaterialField, AdamState)> {
    let entries = fs::read_dir(out.join(CHECKPOINT_DIR)).ok()?;
    let mut steps: Vec<usize> = entries
        .filter_map(|e| {
            let name = e.ok()?.file_name().into_string().ok()?;
            name.strip_prefix("step_")?.strip_suffix(".matf")?.parse().ok()
        })
        .collect();
    steps.sort_unstable();
    steps.into_iter().rev().find_map(|s| {
        let (f, a) = checkpoint_paths(out, s);
        let field = MaterialField::load(&f).ok()?;
        let adam = AdamState::decode(&fs::read(&a).ok()?).ok()?;
        (adam.len() == field.param_count()).then_some((s, field, adam))
    })
}

fn read_metrics(path: &Path, keep: usize) -> Result<Vec<StepMetrics>, DistillError> {
    let Ok(file) = File::open(path) else { return Ok(Vec::new()) };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines().take(keep) {
        let line = line.map_err(io_err(path))?;
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Runs `config.steps` steps from a fresh field, or from the latest valid
/// checkpoint in `out` when `resume` is set.
///
/// With an output directory, metrics are appended to `metrics.jsonl`, a
/// checkpoint is written every `checkpoint_every` steps and at the end, and
/// the final field is written to `field.matf`.
pub fn run_distillation(
    config: &DistillConfig,
    ctx: &DistillContext,
    provider: &impl GuidanceProvider,
    out: Option<&Path>,
    resume: bool,
) -> Result<DistillOutcome, DistillError> {
    config.validate()?;
    let schedule = NoiseSchedule::default();
    let mut state = DistillState::new(ctx.scene, config)?;
    let mut metrics = Vec::new();
    let mut resumed_from = None;

    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            let path = dir.join(METRICS_FILE);
            if resume {
                if let Some((step, field, adam)) = latest_checkpoint(dir) {
                    if step > config.steps {
                        return Err(DistillError::Config(format!(
                            "checkpoint at step {step} is past the configured {} steps",
                            config.steps
                        )));
                    }
                    state = DistillState { field, adam, step };
                    metrics = read_metrics(&path, step)?;
                    if metrics.len() != step {
                        return Err(DistillError::Config(format!(
                            "metrics log has {} entries, checkpoint is at step {step}",
                            metrics.len()
                        )));
                    }
                    resumed_from = Some(step);
                    log::info!("resuming from step {step}");
                }
            }
            let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
            for m in &metrics {
                serde_json::to_writer(&mut w, m)?;
                w.write_all(b"\n").map_err(io_err(&path))?;
            }
            Some((w, path))
        }
        None => None,
    };

    while state.step < config.steps {
        let m = distill_step(config, ctx, &schedule, &mut state, provider)?;
        log::debug!("step {} t={} |delta|={:.4e}", m.step, m.t, m.delta_abs_mean);
        if let Some((w, path)) = log.as_mut() {
            serde_json::to_writer(&mut *w, &m)?;
            w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))?;
        }
        metrics.push(m);
        if let Some(dir) = out {
            if config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 {
                save_checkpoint(dir, &state)?;
            }
        }
    }

    if let Some(dir) = out {
        if !checkpoint_paths(dir, state.step).0.exists() || resumed_from == Some(state.step) {
            save_checkpoint(dir, &state)?;
        }
        state.field.save(&dir.join(FIELD_FILE))?;
    }
    Ok(DistillOutcome { state, metrics, resumed_from })
}
