use serde::{Deserialize, Serialize};

use super::FieldError;

/// Adam optimizer state with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Applies one update. A non-finite gradient leaves parameters and state untouched.
    pub fn update(&mut self, params: &mut [f32], grad: &[f64]) -> Result<(), FieldError> {
        if grad.len() != params.len() || self.m.len() != params.len() {
            return Err(FieldError::ShapeMismatch { expected: params.len(), actual: grad.len() });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(FieldError::NonFiniteGradient(i));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let delta = self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            *p = (*p as f64 - delta) as f32;
        }
        Ok(())
    }

    /// `ADAM` magic, u64 step, f64 lr/beta1/beta2/eps, u64 length, then the
    /// first and second moments as little-endian f64.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(52 + 16 * self.m.len());
        out.extend_from_slice(b"ADAM");
        out.extend_from_slice(&self.step.to_le_bytes());
        for x in [self.lr, self.beta1, self.beta2, self.eps] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&(self.m.len() as u64).to_le_bytes());
        for x in self.m.iter().chain(&self.v) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FieldError> {
        let bad = |m: &str| FieldError::Format(m.to_string());
        if bytes.len() < 52 || &bytes[..4] != b"ADAM" {
            return Err(bad("missing ADAM header"));
        }
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let f64_at = |at: usize| f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let len = u64_at(44) as usize;
        if bytes.len() != 52 + 16 * len {
            return Err(bad("optimizer state length does not match header"));
        }
        let moments = |start: usize| (0..len).map(|i| f64_at(start + 8 * i)).collect::<Vec<_>>();
        Ok(Self {
            step: u64_at(4),
            lr: f64_at(12),
            beta1: f64_at(20),
            beta2: f64_at(28),
            eps: f64_at(36),
            m: moments(52),
            v: moments(52 + 8 * len),
        })
    }
}
