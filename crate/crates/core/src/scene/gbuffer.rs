//! Geometry conditions: view-space normals and inverse-depth maps.

use std::io;

use rayon::prelude::*;

use super::{Camera, Scene};

/// Channels stored by [`GBuffer::encode`]: depth, normal xyz, mask.
pub const GBUFFER_CHANNELS: u32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum GBufferError {
    #[error("bad GBUF header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-pixel geometry of the primary hits.
///
/// `normal` is in view space with x negated; `depth` is inverse view depth
/// normalized over the hit pixels of this image (nearest = 1, farthest = 0).
/// Background pixels are zero everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub normal: Vec<[f32; 3]>,
    pub mask: Vec<bool>,
}

pub fn render_gbuffer(scene: &Scene, camera: &Camera, width: usize, height: usize) -> GBuffer {
    let hits: Vec<Option<(f64, [f64; 3])>> = (0..width * height)
        .into_par_iter()
        .map(|i| {
            let ray = camera.primary_ray(i % width, i / width, width, height);
            scene.intersect(&ray, camera.near, camera.far).map(|hit| {
                let n = camera.world_to_view_dir(hit.shading_normal);
                (camera.view_depth(hit.point), [-n.x, n.y, n.z])
            })
        })
        .collect();

    let inv: Vec<f64> = hits.iter().flatten().map(|(z, _)| 1.0 / z).collect();
    let lo = inv.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = inv.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut depth = vec![0f32; width * height];
    let mut normal = vec![[0f32; 3]; width * height];
    let mut mask = vec![false; width * height];
    for (i, hit) in hits.iter().enumerate() {
        if let Some((z, n)) = hit {
            mask[i] = true;
            // depths equal up to rounding count as a single depth
            depth[i] = if hi - lo > 1e-9 * hi { ((1.0 / z - lo) / (hi - lo)) as f32 } else { 1.0 };
            normal[i] = n.map(|c| c as f32);
        }
    }
    GBuffer { width, height, depth, normal, mask }
}

impl GBuffer {
    /// `GBUF` magic, u32 width/height/channels, then planar little-endian f32
    /// planes: depth, normal x, y, z, mask (0 or 1).
    pub fn encode(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = Vec::with_capacity(16 + n * 4 * GBUFFER_CHANNELS as usize);
        out.extend_from_slice(b"GBUF");
        for v in [self.width as u32, self.height as u32, GBUFFER_CHANNELS] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut plane = |f: &dyn Fn(usize) -> f32| {
            for i in 0..n {
                out.extend_from_slice(&f(i).to_le_bytes());
            }
        };
        plane(&|i| self.depth[i]);
        for c in 0..3 {
            plane(&|i| self.normal[i][c]);
        }
        plane(&|i| if self.mask[i] { 1.0 } else { 0.0 });
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, GBufferError> {
        if bytes.len() < 16 || &bytes[..4] != b"GBUF" {
            return Err(GBufferError::Header("missing GBUF magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (width, height, channels) = (word(0), word(1), word(2));
        if channels != GBUFFER_CHANNELS as usize {
            return Err(GBufferError::Header(format!("expected {GBUFFER_CHANNELS} channels, found {channels}")));
        }
        let n = width * height;
        if bytes.len() != 16 + n * channels * 4 {
            return Err(GBufferError::Header(format!("payload length {} does not match {width}x{height}", bytes.len())));
        }
        let value = |plane: usize, i: usize| {
            let at = 16 + (plane * n + i) * 4;
            f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
        };
        Ok(Self {
            width,
            height,
            depth: (0..n).map(|i| value(0, i)).collect(),
            normal: (0..n).map(|i| [value(1, i), value(2, i), value(3, i)]).collect(),
            mask: (0..n).map(|i| value(4, i) != 0.0).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::TriangleMesh;
    use glam::DVec3;

    fn head_on_camera() -> Camera {
        Camera::look_at(DVec3::new(0.0, 0.0, 3.0), DVec3::ZERO, DVec3::Y, 0.6, 0.01, 100.0).unwrap()
    }

    #[test]
    fn facing_plane_has_plus_z_normals() {
        let scene = Scene::new(TriangleMesh::quad(DVec3::ZERO, 10.0));
        let gb = render_gbuffer(&scene, &head_on_camera(), 8, 8);
        assert!(gb.mask.iter().all(|m| *m));
        for n in &gb.normal {
            assert_eq!(n[0], 0.0);
            assert!((n[2] - 1.0).abs() < 1e-6);
        }
        // a single depth maps to 1
        assert!(gb.depth.iter().all(|d| *d == 1.0));
    }

    #[test]
    fn two_planes_normalize_to_endpoints() {
        // left half at view depth 1, right half at view depth 2
        let cam = Camera::look_at(DVec3::ZERO, DVec3::NEG_Z, DVec3::Y, 0.8, 0.01, 100.0).unwrap();
        let near = TriangleMesh::quad(DVec3::new(-5.0, 0.0, -1.0), 5.0);
        let far = TriangleMesh::quad(DVec3::new(5.0, 0.0, -2.0), 5.0);
        let scene = Scene::new(near.merged(&far));
        let gb = render_gbuffer(&scene, &cam, 8, 4);
        assert!(gb.mask.iter().all(|m| *m));
        for y in 0..4 {
            assert!((gb.depth[y * 8] - 1.0).abs() < 1e-6);
            assert!(gb.depth[y * 8 + 7].abs() < 1e-6);
        }
    }

    #[test]
    fn empty_scene_is_all_zero() {
        let gb = render_gbuffer(&Scene::empty(), &head_on_camera(), 4, 3);
        assert!(gb.mask.iter().all(|m| !*m));
        assert!(gb.depth.iter().all(|d| *d == 0.0));
        assert!(gb.normal.iter().all(|n| *n == [0.0; 3]));
    }

    #[test]
    fn encode_round_trip() {
        let scene = Scene::new(TriangleMesh::uv_sphere(DVec3::ZERO, 1.0, 12, 6));
        let gb = render_gbuffer(&scene, &head_on_camera(), 6, 5);
        let bytes = gb.encode();
        assert_eq!(&bytes[..4], b"GBUF");
        assert_eq!(bytes.len(), 16 + 6 * 5 * 4 * 5);
        assert_eq!(GBuffer::decode(&bytes).unwrap(), gb);
        assert!(GBuffer::decode(&bytes[..20]).is_err());
    }
}
