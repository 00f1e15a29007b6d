//! JSON-over-HTTP guidance provider.
//!
//! `POST /predict_noise` takes a [`WireRequest`] and answers a
//! [`WireResponse`]; `GET /health` answers a [`Health`]. Image payloads are
//! base64 of little-endian f32 in row-major HWC order; the condition payload
//! is base64 of a `.cmap` file.

use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::image::RgbImage;

use super::provider::{GuidanceError, GuidanceProvider, GuidanceRequest};

pub const DEFAULT_PORT: u16 = 8711;
const MAX_BODY: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub t: usize,
    pub slot: String,
    pub prompt: String,
    pub negative_prompt: String,
    pub condition: String,
    pub control_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub noise: String,
    pub model_id: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_id: String,
    pub ready: bool,
}

pub fn encode_f32(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub fn decode_f32(text: &str) -> Result<Vec<f32>, String> {
    let bytes = B64.decode(text).map_err(|e| format!("bad base64: {e}"))?;
    if bytes.len() % 4 != 0 {
        return Err(format!("payload of {} bytes is not a whole number of f32", bytes.len()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

impl WireRequest {
    pub fn from_request(req: &GuidanceRequest) -> Self {
        Self {
            image: encode_f32(&req.noisy.to_f32()),
            width: req.noisy.width,
            height: req.noisy.height,
            t: req.t,
            slot: req.slot.as_str().to_string(),
            prompt: req.prompt.to_string(),
            negative_prompt: req.negative_prompt.to_string(),
            condition: B64.encode(req.condition.encode()),
            control_scale: req.control_scale,
        }
    }
}

/// Blocking client for a guidance service.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    base: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    /// `base` is the service root, e.g. `http://127.0.0.1:8711`.
    pub fn new(base: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { base: base.trim_end_matches('/').to_string(), agent }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    /// Queries `/health`. A 503 still parses into a not-ready [`Health`].
    pub fn health(&self) -> Result<Health, GuidanceError> {
        let mut resp = self
            .agent
            .get(format!("{}/health", self.base))
            .call()
            .map_err(|e| GuidanceError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| GuidanceError::Transport(e.to_string()))?;
        match serde_json::from_str::<Health>(&text) {
            Ok(h) if status == 200 || status == 503 => Ok(h),
            _ => Err(GuidanceError::Status { status, body: text }),
        }
    }

    /// Polls `/health` until ready or `timeout` elapses.
    pub fn wait_ready(&self, timeout: Duration) -> Result<Health, GuidanceError> {
        let start = std::time::Instant::now();
        loop {
            let last = self.health();
            match last {
                Ok(h) if h.ready => return Ok(h),
                _ if start.elapsed() >= timeout => {
                    return Err(last.err().unwrap_or_else(|| GuidanceError::Protocol("service never became ready".into())))
                }
                _ => std::thread::sleep(Duration::from_millis(50)),
            }
        }
    }

    pub fn predict(&self, wire: &WireRequest) -> Result<WireResponse, GuidanceError> {
        let mut resp = self
            .agent
            .post(format!("{}/predict_noise", self.base))
            .send_json(wire)
            .map_err(|e| GuidanceError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(GuidanceError::Status { status, body });
        }
        resp.body_mut()
            .with_config()
            .limit(MAX_BODY)
            .read_json()
            .map_err(|e| GuidanceError::Protocol(format!("bad response body: {e}")))
    }
}

impl GuidanceProvider for HttpProvider {
    fn predict_noise(&self, req: &GuidanceRequest) -> Result<RgbImage, GuidanceError> {
        let resp = self.predict(&WireRequest::from_request(req))?;
        let values = decode_f32(&resp.noise).map_err(GuidanceError::Protocol)?;
        let (w, h) = (req.noisy.width, req.noisy.height);
        if values.len() != w * h * 3 {
            return Err(GuidanceError::Protocol(format!("expected {} noise values, got {}", w * h * 3, values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GuidanceError::Protocol("noise prediction is not finite".into()));
        }
        RgbImage::from_f32(w, h, &values).map_err(|e| GuidanceError::Protocol(e.to_string()))
    }
}
