//! Geometry, ray tracing, cameras, environment lighting and G-buffers.

mod bvh;
mod camera;
mod env;
mod gbuffer;
mod mesh;
mod obj;

use std::io;
use std::path::PathBuf;

use glam::{DVec2, DVec3};

pub use bvh::{intersect_brute_force, intersect_triangle, Bvh, BvhNode, TraversalStats};
pub use camera::{
    sample_camera_poses, Camera, CameraError, POSE_ELEVATION_MAX, POSE_ELEVATION_MIN, POSE_FOV_Y, POSE_RADIUS_SCALE,
};
pub use env::{dir_to_uv, uv_to_dir, EnvError, EnvironmentMap};
pub use gbuffer::{render_gbuffer, GBuffer, GBufferError};
pub use mesh::{area_weighted_normals, Aabb, TriangleMesh};
pub use obj::{load_obj, parse_obj, to_obj, write_obj};

/// Shadow-ray origins are offset by this fraction of the scene diagonal.
pub const SHADOW_EPSILON_SCALE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("cannot read {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {kind} index {index} out of range ({count} defined)")]
    IndexOutOfRange { line: usize, index: i64, count: usize, kind: &'static str },
    #[error("mesh has no triangles")]
    Empty,
    #[error("invalid mesh: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: DVec3,
    pub dir: DVec3,
}

impl Ray {
    pub fn new(origin: DVec3, dir: DVec3) -> Self {
        Self { origin, dir }
    }

    pub fn at(&self, t: f64) -> DVec3 {
        self.origin + self.dir * t
    }
}

/// Nearest ray/triangle intersection. Both normals are flipped to face the
/// incoming ray when the geometric normal points away from the viewer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: DVec3,
    pub geometric_normal: DVec3,
    pub shading_normal: DVec3,
    pub uv: DVec2,
    pub barycentric: DVec2,
    pub triangle: usize,
}

/// A mesh with its acceleration structure. Immutable once built.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mesh: TriangleMesh,
    pub bvh: Bvh,
    shadow_epsilon: f64,
}

impl Scene {
    pub fn new(mesh: TriangleMesh) -> Self {
        let bvh = Bvh::build(&mesh);
        let shadow_epsilon = SHADOW_EPSILON_SCALE * mesh.bbox.diagonal().max(1e-9);
        Self { mesh, bvh, shadow_epsilon }
    }

    pub fn empty() -> Self {
        Self::new(TriangleMesh::empty())
    }

    pub fn shadow_epsilon(&self) -> f64 {
        self.shadow_epsilon
    }

    pub fn intersect(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
        self.bvh.intersect(&self.mesh, ray, t_min, t_max)
    }

    /// Expects `origin` already offset off the surface.
    pub fn occluded(&self, origin: DVec3, dir: DVec3, t_max: f64) -> bool {
        self.bvh.occluded(&self.mesh, &Ray::new(origin, dir), t_max)
    }

    /// Origin for a ray leaving `hit` along `dir`, pushed off the surface on the side `dir` points to.
    pub fn offset_origin(&self, point: DVec3, geometric_normal: DVec3, dir: DVec3) -> DVec3 {
        let side = if geometric_normal.dot(dir) >= 0.0 { 1.0 } else { -1.0 };
        point + geometric_normal * (side * self.shadow_epsilon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_triangle_at_z1() -> Scene {
        let mesh = TriangleMesh::new(
            vec![DVec3::new(0.0, 0.0, 1.0), DVec3::new(1.0, 0.0, 1.0), DVec3::new(0.0, 1.0, 1.0)],
            None,
            Some(vec![DVec2::new(0.0, 0.0), DVec2::new(1.0, 0.0), DVec2::new(0.0, 1.0)]),
            vec![[0, 1, 2]],
        )
        .unwrap();
        Scene::new(mesh)
    }

    #[test]
    fn ray_down_z_hits_at_t1_with_interpolated_uv() {
        let scene = unit_triangle_at_z1();
        let ray = Ray::new(DVec3::new(0.25, 0.5, 0.0), DVec3::Z);
        let hit = scene.intersect(&ray, 0.0, f64::INFINITY).unwrap();
        assert!((hit.t - 1.0).abs() < 1e-12);
        assert!((hit.uv - DVec2::new(0.25, 0.5)).length() < 1e-12);
        // geometric normal +z flipped to face the ray coming from below
        assert!((hit.geometric_normal - DVec3::NEG_Z).length() < 1e-12);
        assert!((hit.shading_normal - DVec3::NEG_Z).length() < 1e-12);
    }

    #[test]
    fn parallel_ray_misses() {
        let scene = unit_triangle_at_z1();
        let ray = Ray::new(DVec3::new(-1.0, 0.2, 1.0), DVec3::X);
        assert!(scene.intersect(&ray, 0.0, f64::INFINITY).is_none());
    }

    #[test]
    fn t_range_is_open_interval() {
        let scene = unit_triangle_at_z1();
        let ray = Ray::new(DVec3::new(0.25, 0.25, 0.0), DVec3::Z);
        assert!(scene.intersect(&ray, 0.0, 1.0).is_none());
        assert!(scene.intersect(&ray, 1.0, 2.0).is_none());
    }

    #[test]
    fn occlusion_under_plane() {
        let scene = Scene::new(TriangleMesh::quad(DVec3::ZERO, 1.0));
        assert!(scene.occluded(DVec3::new(0.0, 0.0, -1.0), DVec3::Z, f64::INFINITY));
        assert!(!scene.occluded(DVec3::new(0.0, 0.0, -1.0), DVec3::NEG_Z, f64::INFINITY));
        assert!(!scene.occluded(DVec3::new(0.0, 0.0, -1.0), DVec3::Z, 0.5));
    }
}
