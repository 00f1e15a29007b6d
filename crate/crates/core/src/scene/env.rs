//! Equirectangular HDR environment lighting.
//!
//! Direction `d` maps to `u = atan2(d.x, -d.z) / 2pi + 0.5`, `v = acos(d.y) / pi`;
//! row 0 of the map is the +y pole. Lookups are bilinear between texel
//! centers, wrapping in longitude and clamping in latitude.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use glam::{DVec2, DVec3};

use crate::image::{ImageError, Pfm};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("environment map must be 2:1 (got {width}x{height})")]
    Aspect { width: usize, height: usize },
    #[error("environment data has {actual} texels, expected {expected}")]
    Size { expected: usize, actual: usize },
    #[error("radiance at texel {0} is negative or not finite")]
    Radiance(usize),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentMap {
    width: usize,
    height: usize,
    data: Vec<[f32; 3]>,
}

pub fn dir_to_uv(d: DVec3) -> DVec2 {
    let u = d.x.atan2(-d.z) / TAU + 0.5;
    let v = d.y.clamp(-1.0, 1.0).acos() / PI;
    DVec2::new(u, v)
}

pub fn uv_to_dir(uv: DVec2) -> DVec3 {
    let phi = (uv.x - 0.5) * TAU;
    let theta = uv.y * PI;
    DVec3::new(theta.sin() * phi.sin(), theta.cos(), -theta.sin() * phi.cos())
}

impl EnvironmentMap {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 3]>) -> Result<Self, EnvError> {
        if height == 0 || width != 2 * height {
            return Err(EnvError::Aspect { width, height });
        }
        if data.len() != width * height {
            return Err(EnvError::Size { expected: width * height, actual: data.len() });
        }
        if let Some(i) = data.iter().position(|t| t.iter().any(|c| !c.is_finite() || *c < 0.0)) {
            return Err(EnvError::Radiance(i));
        }
        Ok(Self { width, height, data })
    }

    pub fn constant(value: DVec3, height: usize) -> Self {
        let texel = [value.x as f32, value.y as f32, value.z as f32];
        Self::new(2 * height, height, vec![texel; 2 * height * height]).expect("constant map is valid")
    }

    /// Builds a map by evaluating `f` at every texel-center direction.
    pub fn from_fn(height: usize, f: impl Fn(DVec3) -> DVec3) -> Result<Self, EnvError> {
        let width = 2 * height;
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| {
                let c = f(uv_to_dir(DVec2::new((x as f64 + 0.5) / width as f64, (y as f64 + 0.5) / height as f64)));
                [c.x as f32, c.y as f32, c.z as f32]
            })
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn texel(&self, x: usize, y: usize) -> DVec3 {
        let t = self.data[y * self.width + x];
        DVec3::new(t[0] as f64, t[1] as f64, t[2] as f64)
    }

    /// Direction through the center of texel `(x, y)`.
    pub fn texel_direction(&self, x: usize, y: usize) -> DVec3 {
        uv_to_dir(DVec2::new((x as f64 + 0.5) / self.width as f64, (y as f64 + 0.5) / self.height as f64))
    }

    /// Solid angle covered by a texel in row `y`.
    pub fn texel_solid_angle(&self, y: usize) -> f64 {
        let t0 = y as f64 / self.height as f64 * PI;
        let t1 = (y + 1) as f64 / self.height as f64 * PI;
        TAU / self.width as f64 * (t0.cos() - t1.cos())
    }

    /// Bilinear radiance lookup along unit direction `dir`.
    pub fn radiance(&self, dir: DVec3) -> DVec3 {
        let uv = dir_to_uv(dir);
        let fx = uv.x * self.width as f64 - 0.5;
        let fy = (uv.y * self.height as f64 - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0f = fx.floor();
        let y0f = fy.floor();
        let tx = fx - x0f;
        let ty = fy - y0f;
        let w = self.width as i64;
        let x0 = (x0f as i64).rem_euclid(w) as usize;
        let x1 = (x0 + 1) % self.width;
        let y0 = y0f as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        // a + (b - a) * t keeps constant regions exact
        let top = lerp(self.texel(x0, y0), self.texel(x1, y0), tx);
        let bottom = lerp(self.texel(x0, y1), self.texel(x1, y1), tx);
        lerp(top, bottom, ty)
    }

    /// Radiance of the texel containing `dir`, without filtering.
    pub fn radiance_nearest(&self, dir: DVec3) -> DVec3 {
        let uv = dir_to_uv(dir);
        let x = ((uv.x * self.width as f64).floor() as i64).rem_euclid(self.width as i64) as usize;
        let y = ((uv.y * self.height as f64).floor() as usize).min(self.height - 1);
        self.texel(x, y)
    }

    pub fn to_pfm(&self) -> Pfm {
        Pfm { width: self.width, height: self.height, channels: 3, data: self.data.iter().flatten().copied().collect() }
    }

    pub fn from_pfm(pfm: &Pfm) -> Result<Self, EnvError> {
        let data = match pfm.channels {
            3 => pfm.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            _ => pfm.data.iter().map(|&v| [v, v, v]).collect(),
        };
        Self::new(pfm.width, pfm.height, data)
    }

    pub fn read_pfm(path: &Path) -> Result<Self, EnvError> {
        Self::from_pfm(&Pfm::read(path)?)
    }

    pub fn write_pfm(&self, path: &Path) -> Result<(), EnvError> {
        Ok(self.to_pfm().write(path)?)
    }

    /// Smooth outdoor-style map: sky gradient, ground, and a soft sun lobe.
    pub fn procedural_sky(height: usize, sun_dir: DVec3, sun: DVec3, sky: DVec3, ground: DVec3, sun_sharpness: f64) -> Self {
        let sun_dir = sun_dir.normalize();
        Self::from_fn(height, |d| {
            let up = d.y.clamp(-1.0, 1.0);
            let base = if up >= 0.0 { ground.lerp(sky, 0.4 + 0.6 * up.sqrt()) } else { ground * (1.0 + 0.5 * up) };
            let lobe = ((d.dot(sun_dir) - 1.0) * sun_sharpness).exp();
            base + sun * lobe
        })
        .expect("procedural values are finite and non-negative")
    }

    /// Every texel multiplied by `factor` (non-negative).
    pub fn scaled(&self, factor: f64) -> Self {
        let f = factor.max(0.0) as f32;
        let data = self.data.iter().map(|t| t.map(|c| c * f)).collect();
        Self { width: self.width, height: self.height, data }
    }

    /// Five distinct smooth lighting setups used by examples and tests.
    pub fn preset(index: usize, height: usize) -> Self {
        let v = DVec3::new;
        match index % 5 {
            0 => Self::procedural_sky(height, v(0.6, 0.7, 0.4), v(3.0, 2.8, 2.5), v(0.45, 0.6, 0.85), v(0.25, 0.22, 0.2), 12.0),
            1 => Self::procedural_sky(height, v(-0.8, 0.3, -0.5), v(3.5, 2.2, 1.2), v(0.5, 0.4, 0.35), v(0.15, 0.12, 0.1), 10.0),
            2 => Self::procedural_sky(height, v(0.0, 1.0, 0.1), v(2.0, 2.0, 2.0), v(0.7, 0.7, 0.7), v(0.3, 0.3, 0.3), 6.0),
            3 => Self::procedural_sky(height, v(0.3, 0.2, 0.9), v(1.5, 2.5, 3.5), v(0.3, 0.35, 0.5), v(0.2, 0.25, 0.2), 14.0),
            _ => Self::procedural_sky(height, v(-0.4, 0.8, 0.6), v(2.5, 2.5, 2.2), v(0.6, 0.65, 0.6), v(0.35, 0.3, 0.25), 8.0),
        }
    }
}

fn lerp(a: DVec3, b: DVec3, t: f64) -> DVec3 {
    a + (b - a) * t
}
