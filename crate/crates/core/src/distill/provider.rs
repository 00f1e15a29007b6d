//! The noise-predictor interface and a deterministic test oracle.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::condition::{ConditionManifest, ConditionStack};
use crate::image::RgbImage;
use crate::material::MaterialModel;
use crate::render::{encode_srgb, render_image, RenderConfig, RenderError};
use crate::scene::{EnvironmentMap, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptSlot {
    Positive,
    Null,
    Negative,
}

impl PromptSlot {
    pub const ALL: [PromptSlot; 3] = [PromptSlot::Positive, PromptSlot::Null, PromptSlot::Negative];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptSlot::Positive => "positive",
            PromptSlot::Null => "null",
            PromptSlot::Negative => "negative",
        }
    }
}

/// One noise-prediction query.
#[derive(Debug, Clone, Copy)]
pub struct GuidanceRequest<'a> {
    /// Noisy display image `I_t`.
    pub noisy: &'a RgbImage,
    /// Clean display image the noise was added to. Treated as a constant.
    pub clean: &'a RgbImage,
    pub t: usize,
    pub alpha_bar: f64,
    pub slot: PromptSlot,
    /// Text for this slot: the prompt, empty, or the negative prompt.
    pub prompt: &'a str,
    pub negative_prompt: &'a str,
    pub condition: &'a ConditionStack,
    pub control_scale: f64,
    pub view: usize,
    pub env: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum GuidanceError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("no target for view {view}, env {env}")]
    MissingTarget { view: usize, env: usize },
    #[error("prediction is {actual:?}, request is {expected:?}")]
    Shape { expected: (usize, usize), actual: (usize, usize) },
}

/// A source of noise predictions `eps(I_t; y, t)`.
pub trait GuidanceProvider: Sync {
    fn predict_noise(&self, request: &GuidanceRequest) -> Result<RgbImage, GuidanceError>;
}

impl<P: GuidanceProvider + ?Sized> GuidanceProvider for &P {
    fn predict_noise(&self, request: &GuidanceRequest) -> Result<RgbImage, GuidanceError> {
        (**self).predict_noise(request)
    }
}

impl<P: GuidanceProvider + ?Sized + Send> GuidanceProvider for Box<P> {
    fn predict_noise(&self, request: &GuidanceRequest) -> Result<RgbImage, GuidanceError> {
        (**self).predict_noise(request)
    }
}

/// Predicts the noise that would turn a known target image into `I_t`.
///
/// The positive slot answers `(I_t - sqrt(abar) * target) / sqrt(1 - abar)`;
/// the other slots use the request's clean image in place of the target, so
/// the guidance residual pulls the render toward the target.
#[derive(Debug, Clone, Default)]
pub struct SyntheticOracle {
    targets: HashMap<(usize, usize), RgbImage>,
}

impl SyntheticOracle {
    pub fn new(targets: HashMap<(usize, usize), RgbImage>) -> Self {
        Self { targets }
    }

    /// Renders display-space targets of `model` for every manifest entry.
    /// `config.seed` is combined with each entry's own seed.
    pub fn render_targets(
        scene: &Scene,
        manifest: &ConditionManifest,
        envs: &[EnvironmentMap],
        model: &impl MaterialModel,
        config: &RenderConfig,
    ) -> Result<Self, RenderError> {
        let mut targets = HashMap::new();
        for e in &manifest.entries {
            let env = envs
                .get(e.env)
                .ok_or_else(|| RenderError::Config(format!("no environment map for index {}", e.env)))?;
            let cfg = RenderConfig { seed: config.seed ^ e.seed, ..*config };
            let (img, _) = render_image(scene, &e.camera, env, model, &cfg)?;
            targets.insert((e.view, e.env), encode_srgb(&img));
        }
        Ok(Self { targets })
    }

    pub fn target(&self, view: usize, env: usize) -> Option<&RgbImage> {
        self.targets.get(&(view, env))
    }

    pub fn targets(&self) -> &HashMap<(usize, usize), RgbImage> {
        &self.targets
    }
}

impl GuidanceProvider for SyntheticOracle {
    fn predict_noise(&self, req: &GuidanceRequest) -> Result<RgbImage, GuidanceError> {
        let reference = match req.slot {
            PromptSlot::Positive => self
                .targets
                .get(&(req.view, req.env))
                .ok_or(GuidanceError::MissingTarget { view: req.view, env: req.env })?,
            PromptSlot::Null | PromptSlot::Negative => req.clean,
        };
        if !reference.same_shape(req.noisy) {
            return Err(GuidanceError::Shape {
                expected: (req.noisy.width, req.noisy.height),
                actual: (reference.width, reference.height),
            });
        }
        let a = req.alpha_bar.sqrt();
        let s = (1.0 - req.alpha_bar).sqrt();
        let pixels = req.noisy.pixels.iter().zip(&reference.pixels).map(|(n, r)| (*n - *r * a) / s).collect();
        Ok(RgbImage { width: req.noisy.width, height: req.noisy.height, pixels })
    }
}
