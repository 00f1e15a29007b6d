//! Diffusion noise schedule and the annealing schedules of the optimization loop.

use glam::DVec3;
use rand_distr::{Distribution, StandardNormal};

use crate::image::RgbImage;
use crate::rng::StreamRng;

pub const TIMESTEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

/// Weight of the positive-prompt term.
pub const ETA1: f64 = 1.05;
pub const ETA2_START: f64 = 1.0;
pub const ETA2_END: f64 = 0.5;
pub const CONTROL_START: f64 = 1.0;
pub const CONTROL_END: f64 = 0.8;
/// First step at which the control scale starts to decay.
pub const CONTROL_DECAY_STEP: usize = 700;

/// Linear-beta DDPM schedule; timesteps are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(TIMESTEPS, BETA_START, BETA_END)
    }
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Self {
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1).max(1) as f64)
            .collect();
        let alpha_bars = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Self { betas, alpha_bars }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }
}

/// `sqrt(abar) * img + sqrt(1 - abar) * eps` with `eps ~ N(0, 1)` per element.
pub fn add_noise(img: &RgbImage, t: usize, schedule: &NoiseSchedule, rng: &mut StreamRng) -> (RgbImage, RgbImage) {
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut noisy = Vec::with_capacity(img.len());
    let mut eps = Vec::with_capacity(img.len());
    for p in &img.pixels {
        let e = DVec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        noisy.push(*p * a + e * b);
        eps.push(e);
    }
    (
        RgbImage { width: img.width, height: img.height, pixels: noisy },
        RgbImage { width: img.width, height: img.height, pixels: eps },
    )
}

fn ramp(step: usize, start: usize, end: usize, from: f64, to: f64) -> f64 {
    if step <= start {
        from
    } else if step >= end {
        to
    } else {
        from + (to - from) * (step - start) as f64 / (end - start) as f64
    }
}

/// Holds `from` until `decay_start`, then moves linearly to `to` at the final step `steps - 1`.
pub fn delayed_anneal(step: usize, steps: usize, decay_start: usize, from: f64, to: f64) -> f64 {
    if step < decay_start {
        return from;
    }
    ramp(step, decay_start, steps.saturating_sub(1).max(decay_start), from, to)
}

/// Linear from `from` at step 0 to `to` at the final step `steps - 1`.
pub fn linear_anneal(step: usize, steps: usize, from: f64, to: f64) -> f64 {
    if steps <= 1 {
        return from;
    }
    ramp(step, 0, steps - 1, from, to)
}

/// 1.0 before step 700, then linear down to 0.8 at the final step.
pub fn control_scale_at(step: usize, steps: usize) -> f64 {
    delayed_anneal(step, steps, CONTROL_DECAY_STEP, CONTROL_START, CONTROL_END)
}

/// Linear from 1.0 at step 0 to 0.5 at the final step.
pub fn eta2_at(step: usize, steps: usize) -> f64 {
    linear_anneal(step, steps, ETA2_START, ETA2_END)
}
