use std::f64::consts::PI;

use glam::{DMat3, DVec3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mesh::Aabb;
use super::Ray;
use crate::rng;

/// Camera distance from the bbox center, in multiples of the bbox diagonal.
pub const POSE_RADIUS_SCALE: f64 = 1.3;
/// Vertical field of view used for sampled poses.
pub const POSE_FOV_Y: f64 = 50.0 * PI / 180.0;
pub const POSE_ELEVATION_MIN: f64 = -15.0 * PI / 180.0;
pub const POSE_ELEVATION_MAX: f64 = 75.0 * PI / 180.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("rotation is not orthonormal with determinant +1 (det = {0})")]
    Rotation(f64),
    #[error("vertical field of view {0} outside (0, pi)")]
    Fov(f64),
    #[error("clip planes must satisfy 0 < near < far (near = {near}, far = {far})")]
    Clip { near: f64, far: f64 },
    #[error("look-at eye coincides with target or is parallel to up")]
    LookAt,
}

/// Pinhole camera. View space looks down -z with +y up and +x right;
/// `rotation` maps world directions into view space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: DVec3,
    pub rotation: DMat3,
    pub fov_y: f64,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn new(position: DVec3, rotation: DMat3, fov_y: f64, near: f64, far: f64) -> Result<Self, CameraError> {
        let cam = Self { position, rotation, fov_y, near, far };
        cam.validate()?;
        Ok(cam)
    }

    pub fn look_at(eye: DVec3, target: DVec3, up: DVec3, fov_y: f64, near: f64, far: f64) -> Result<Self, CameraError> {
        let forward = (target - eye).normalize_or_zero();
        let right = forward.cross(up).normalize_or_zero();
        if forward == DVec3::ZERO || right == DVec3::ZERO {
            return Err(CameraError::LookAt);
        }
        let true_up = right.cross(forward);
        // rows of the world->view matrix are the view axes in world space
        let rotation = DMat3::from_cols(right, true_up, -forward).transpose();
        Self::new(eye, rotation, fov_y, near, far)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let det = self.rotation.determinant();
        let gram = self.rotation * self.rotation.transpose();
        let ortho = gram.abs_diff_eq(DMat3::IDENTITY, 1e-6);
        if !ortho || (det - 1.0).abs() > 1e-6 || !det.is_finite() {
            return Err(CameraError::Rotation(det));
        }
        if !(self.fov_y > 0.0 && self.fov_y < PI) {
            return Err(CameraError::Fov(self.fov_y));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(CameraError::Clip { near: self.near, far: self.far });
        }
        if !self.position.is_finite() {
            return Err(CameraError::LookAt);
        }
        Ok(())
    }

    /// Viewing direction in world space.
    pub fn forward(&self) -> DVec3 {
        -self.rotation.row(2)
    }

    pub fn world_to_view_dir(&self, dir: DVec3) -> DVec3 {
        self.rotation * dir
    }

    /// Distance in front of the camera along the optical axis.
    pub fn view_depth(&self, point: DVec3) -> f64 {
        -(self.rotation * (point - self.position)).z
    }

    /// Ray through the center of pixel `(x, y)`, with row 0 at the top.
    pub fn primary_ray(&self, x: usize, y: usize, width: usize, height: usize) -> Ray {
        let tan = (self.fov_y * 0.5).tan();
        let aspect = width as f64 / height as f64;
        let sx = (2.0 * (x as f64 + 0.5) / width as f64 - 1.0) * tan * aspect;
        let sy = (1.0 - 2.0 * (y as f64 + 0.5) / height as f64) * tan;
        let view_dir = DVec3::new(sx, sy, -1.0).normalize();
        Ray::new(self.position, self.rotation.transpose() * view_dir)
    }
}

/// Deterministic orbit poses around the bbox center.
///
/// Azimuth is uniform in [0, 2pi), elevation uniform in [-15deg, 75deg];
/// cameras sit at `POSE_RADIUS_SCALE` bbox diagonals from the center.
pub fn sample_camera_poses(n: usize, seed: u64, bbox: &Aabb) -> Vec<Camera> {
    let mut r = rng::stream(seed, 0x706f_7365);
    let center = bbox.center();
    let diag = bbox.diagonal().max(1e-6);
    let radius = POSE_RADIUS_SCALE * diag;
    (0..n)
        .map(|_| {
            let azimuth = r.random_range(0.0..2.0 * PI);
            let elevation = r.random_range(POSE_ELEVATION_MIN..POSE_ELEVATION_MAX);
            let offset = DVec3::new(elevation.cos() * azimuth.sin(), elevation.sin(), elevation.cos() * azimuth.cos());
            Camera::look_at(center + offset * radius, center, DVec3::Y, POSE_FOV_Y, 0.01 * diag, radius + 2.0 * diag)
                .expect("orbit poses never align with the up axis")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_is_orthonormal_and_centered() {
        let cam = Camera::look_at(DVec3::new(0.0, 0.0, 5.0), DVec3::ZERO, DVec3::Y, 1.0, 0.1, 10.0).unwrap();
        assert!((cam.rotation.determinant() - 1.0).abs() < 1e-12);
        assert!((cam.forward() - DVec3::NEG_Z).length() < 1e-12);
        let ray = cam.primary_ray(1, 1, 3, 3);
        assert!((ray.dir - DVec3::NEG_Z).length() < 1e-12);
        assert!((cam.view_depth(DVec3::ZERO) - 5.0).abs() < 1e-12);
        // top-left pixel points up and left
        let corner = cam.primary_ray(0, 0, 3, 3);
        assert!(corner.dir.x < 0.0 && corner.dir.y > 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        let eye = DVec3::new(0.0, 0.0, 5.0);
        assert!(matches!(Camera::look_at(eye, DVec3::ZERO, DVec3::Y, 0.0, 0.1, 1.0), Err(CameraError::Fov(_))));
        assert!(matches!(Camera::look_at(eye, DVec3::ZERO, DVec3::Y, 1.0, 1.0, 0.5), Err(CameraError::Clip { .. })));
        assert!(Camera::new(eye, DMat3::from_diagonal(DVec3::new(1.0, 1.0, -1.0)), 1.0, 0.1, 1.0).is_err());
        assert!(Camera::look_at(eye, eye, DVec3::Y, 1.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn poses_are_deterministic_and_seed_dependent() {
        let bbox = Aabb::new(DVec3::splat(-1.0), DVec3::splat(1.0));
        assert_eq!(sample_camera_poses(1, 9, &bbox), sample_camera_poses(1, 9, &bbox));
        assert_ne!(sample_camera_poses(4, 9, &bbox), sample_camera_poses(4, 10, &bbox));
    }

    #[test]
    fn poses_lie_outside_bbox_and_look_at_it() {
        let bbox = Aabb::new(DVec3::new(-1.0, -0.5, -2.0), DVec3::new(3.0, 0.5, 1.0));
        let center = bbox.center();
        for cam in sample_camera_poses(128, 4, &bbox) {
            assert!(!bbox.contains(cam.position));
            let elevation = ((cam.position - center).normalize().y).asin();
            assert!((POSE_ELEVATION_MIN - 1e-9..=POSE_ELEVATION_MAX + 1e-9).contains(&elevation));
            let ray = Ray::new(cam.position, cam.forward());
            assert!(bbox.intersect(ray.origin, ray.dir.recip(), 0.0, f64::INFINITY).is_some());
        }
    }
}
