//! Material parameters and the sources that produce them.

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};

use crate::brdf::ALPHA_MIN;
use crate::scene::Hit;

/// Simplified-Disney parameters at one surface point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialSample {
    pub albedo: DVec3,
    pub roughness: f64,
    pub metallic: f64,
}

impl MaterialSample {
    /// Clamps every component into its valid range; roughness is floored at [`ALPHA_MIN`].
    pub fn new(albedo: DVec3, roughness: f64, metallic: f64) -> Self {
        Self {
            albedo: albedo.clamp(DVec3::ZERO, DVec3::ONE),
            roughness: roughness.clamp(ALPHA_MIN, 1.0),
            metallic: metallic.clamp(0.0, 1.0),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.albedo.is_finite()
            && self.albedo.cmpge(DVec3::ZERO).all()
            && self.albedo.cmple(DVec3::ONE).all()
            && (ALPHA_MIN..=1.0).contains(&self.roughness)
            && (0.0..=1.0).contains(&self.metallic)
    }

    /// `[r, g, b, roughness, metallic]`.
    pub fn to_array(&self) -> [f64; 5] {
        [self.albedo.x, self.albedo.y, self.albedo.z, self.roughness, self.metallic]
    }
}

/// Anything that assigns a material to a surface hit.
pub trait MaterialModel: Sync {
    fn material_at(&self, hit: &Hit) -> MaterialSample;

    /// Parameter version for sources that can be trained; used to detect stale tapes.
    fn version(&self) -> Option<u64> {
        None
    }
}

impl MaterialModel for MaterialSample {
    fn material_at(&self, _hit: &Hit) -> MaterialSample {
        *self
    }
}

/// Procedural 3D checkerboard in albedo with constant roughness and metallic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkerboard {
    pub cell_size: f64,
    pub albedo_a: DVec3,
    pub albedo_b: DVec3,
    pub roughness: f64,
    pub metallic: f64,
}

impl Checkerboard {
    pub fn at_point(&self, p: DVec3) -> MaterialSample {
        let cell = (p / self.cell_size).floor();
        let parity = (cell.x + cell.y + cell.z).rem_euclid(2.0);
        let albedo = if parity < 0.5 { self.albedo_a } else { self.albedo_b };
        MaterialSample::new(albedo, self.roughness, self.metallic)
    }
}

impl MaterialModel for Checkerboard {
    fn material_at(&self, hit: &Hit) -> MaterialSample {
        self.at_point(hit.point)
    }
}

/// Material looked up from UV-space maps with bilinear filtering.
///
/// Texel `(x, y)` covers `u in [x/R, (x+1)/R)`, `v in [1 - (y+1)/R, 1 - y/R)`,
/// so row 0 is the top of the texture (v = 1).
#[derive(Debug, Clone, PartialEq)]
pub struct UvMaps {
    pub resolution: usize,
    pub albedo: Vec<DVec3>,
    pub roughness: Vec<f64>,
    pub metallic: Vec<f64>,
}

impl UvMaps {
    pub fn sample(&self, uv: DVec2) -> MaterialSample {
        let r = self.resolution;
        let fx = (uv.x * r as f64 - 0.5).clamp(0.0, (r - 1) as f64);
        let fy = ((1.0 - uv.y) * r as f64 - 0.5).clamp(0.0, (r - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(r - 1), (y0 + 1).min(r - 1));
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let idx = |x: usize, y: usize| y * r + x;
        let bilerp3 = |m: &[DVec3]| {
            let top = m[idx(x0, y0)].lerp(m[idx(x1, y0)], tx);
            let bottom = m[idx(x0, y1)].lerp(m[idx(x1, y1)], tx);
            top.lerp(bottom, ty)
        };
        let bilerp1 = |m: &[f64]| {
            let top = m[idx(x0, y0)] + (m[idx(x1, y0)] - m[idx(x0, y0)]) * tx;
            let bottom = m[idx(x0, y1)] + (m[idx(x1, y1)] - m[idx(x0, y1)]) * tx;
            top + (bottom - top) * ty
        };
        MaterialSample::new(bilerp3(&self.albedo), bilerp1(&self.roughness), bilerp1(&self.metallic))
    }
}

impl MaterialModel for UvMaps {
    fn material_at(&self, hit: &Hit) -> MaterialSample {
        self.sample(hit.uv)
    }
}
