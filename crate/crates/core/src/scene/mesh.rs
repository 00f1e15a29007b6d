use std::f64::consts::PI;

use glam::{DVec2, DVec3};
use serde::{Deserialize, Serialize};

use super::MeshError;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: DVec3,
    pub max: DVec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb { min: DVec3::INFINITY, max: DVec3::NEG_INFINITY };

    pub fn new(min: DVec3, max: DVec3) -> Self {
        Self { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a DVec3>) -> Self {
        points.into_iter().fold(Self::EMPTY, |b, p| b.grown(*p))
    }

    pub fn grown(self, p: DVec3) -> Self {
        Self { min: self.min.min(p), max: self.max.max(p) }
    }

    pub fn union(self, other: Aabb) -> Self {
        Self { min: self.min.min(other.min), max: self.max.max(other.max) }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    /// True when every extent is strictly positive and finite.
    pub fn is_solid(&self) -> bool {
        let e = self.max - self.min;
        e.is_finite() && e.min_element() > 0.0
    }

    pub fn extent(&self) -> DVec3 {
        self.max - self.min
    }

    pub fn center(&self) -> DVec3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.extent().length()
        }
    }

    pub fn contains(&self, p: DVec3) -> bool {
        p.cmpge(self.min).all() && p.cmple(self.max).all()
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        other.is_empty() || (self.contains(other.min) && self.contains(other.max))
    }

    /// Expands every side by `fraction` of the diagonal, giving flat boxes volume.
    pub fn padded(&self, fraction: f64) -> Self {
        let pad = DVec3::splat(self.diagonal().max(1e-9) * fraction);
        Self { min: self.min - pad, max: self.max + pad }
    }

    pub fn centroid_axis_extent(&self) -> usize {
        let e = self.extent();
        if e.x >= e.y && e.x >= e.z {
            0
        } else if e.y >= e.z {
            1
        } else {
            2
        }
    }

    pub fn surface_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let e = self.extent();
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }

    /// Slab test; returns the entry distance when the ray overlaps `[t_min, t_max]`.
    #[inline]
    pub fn intersect(&self, origin: DVec3, inv_dir: DVec3, t_min: f64, t_max: f64) -> Option<f64> {
        let t0 = (self.min - origin) * inv_dir;
        let t1 = (self.max - origin) * inv_dir;
        // NaN (0 * inf) is discarded by min/max ordering
        let near = t0.min(t1);
        let far = t0.max(t1);
        let enter = near.x.max(near.y).max(near.z).max(t_min);
        let exit = far.x.min(far.y).min(far.z).min(t_max);
        (enter <= exit).then_some(enter)
    }
}

/// Indexed triangle mesh with per-vertex shading normals and optional UVs.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub positions: Vec<DVec3>,
    pub normals: Vec<DVec3>,
    pub uvs: Option<Vec<DVec2>>,
    pub triangles: Vec<[u32; 3]>,
    pub bbox: Aabb,
}

impl TriangleMesh {
    /// Validates indices and coordinates; computes area-weighted normals when none are given.
    pub fn new(
        positions: Vec<DVec3>,
        normals: Option<Vec<DVec3>>,
        uvs: Option<Vec<DVec2>>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self, MeshError> {
        let n = positions.len();
        if let Some(bad) = positions.iter().position(|p| !p.is_finite()) {
            return Err(MeshError::Invalid(format!("position {bad} is not finite")));
        }
        for (i, tri) in triangles.iter().enumerate() {
            if let Some(&idx) = tri.iter().find(|&&v| v as usize >= n) {
                return Err(MeshError::Invalid(format!(
                    "triangle {i} references vertex {idx} but only {n} exist"
                )));
            }
        }
        let normals = match normals {
            Some(given) => {
                if given.len() != n {
                    return Err(MeshError::Invalid(format!("{} normals for {n} vertices", given.len())));
                }
                given
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let len = v.length();
                        if !len.is_finite() || len < 1e-12 {
                            Err(MeshError::Invalid(format!("normal {i} has zero or non-finite length")))
                        } else {
                            Ok(v / len)
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
            None => area_weighted_normals(&positions, &triangles),
        };
        if let Some(uv) = &uvs {
            if uv.len() != n {
                return Err(MeshError::Invalid(format!("{} uvs for {n} vertices", uv.len())));
            }
            if uv.iter().any(|t| !t.is_finite()) {
                return Err(MeshError::Invalid("non-finite uv".into()));
            }
        }
        let bbox = Aabb::from_points(&positions);
        Ok(Self { positions, normals, uvs, triangles, bbox })
    }

    pub fn empty() -> Self {
        Self { positions: vec![], normals: vec![], uvs: None, triangles: vec![], bbox: Aabb::EMPTY }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn has_uvs(&self) -> bool {
        self.uvs.is_some()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    #[inline]
    pub fn corners(&self, tri: usize) -> [DVec3; 3] {
        let [a, b, c] = self.triangles[tri];
        [self.positions[a as usize], self.positions[b as usize], self.positions[c as usize]]
    }

    pub fn triangle_bounds(&self, tri: usize) -> Aabb {
        let [a, b, c] = self.corners(tri);
        Aabb::new(a.min(b).min(c), a.max(b).max(c))
    }

    /// Unit geometric normal following the winding order (zero for degenerate triangles).
    pub fn face_normal(&self, tri: usize) -> DVec3 {
        let [a, b, c] = self.corners(tri);
        (b - a).cross(c - a).normalize_or_zero()
    }

    pub fn uv_corners(&self, tri: usize) -> Option<[DVec2; 3]> {
        let uvs = self.uvs.as_ref()?;
        let [a, b, c] = self.triangles[tri];
        Some([uvs[a as usize], uvs[b as usize], uvs[c as usize]])
    }

    /// Interpolates position, shading normal and uv at barycentric `(u, v)` (weights of corners 1 and 2).
    pub fn interpolate(&self, tri: usize, u: f64, v: f64) -> (DVec3, DVec3, DVec2) {
        let [a, b, c] = self.triangles[tri].map(|i| i as usize);
        let w = 1.0 - u - v;
        let p = self.positions[a] * w + self.positions[b] * u + self.positions[c] * v;
        let n = (self.normals[a] * w + self.normals[b] * u + self.normals[c] * v).normalize_or_zero();
        let uv = match &self.uvs {
            Some(t) => t[a] * w + t[b] * u + t[c] * v,
            None => DVec2::ZERO,
        };
        (p, n, uv)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                0.5 * (b - a).cross(c - a).length()
            })
            .sum()
    }

    /// Concatenates two meshes. UVs survive only when both carry them.
    pub fn merged(&self, other: &TriangleMesh) -> TriangleMesh {
        let offset = self.positions.len() as u32;
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let mut normals = self.normals.clone();
        normals.extend_from_slice(&other.normals);
        let uvs = match (&self.uvs, &other.uvs) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        let mut triangles = self.triangles.clone();
        triangles.extend(other.triangles.iter().map(|t| t.map(|i| i + offset)));
        let bbox = self.bbox.union(other.bbox);
        TriangleMesh { positions, normals, uvs, triangles, bbox }
    }

    /// UV sphere with `segments` longitudinal and `rings` latitudinal divisions.
    pub fn uv_sphere(center: DVec3, radius: f64, segments: usize, rings: usize) -> Self {
        let segments = segments.max(3);
        let rings = rings.max(2);
        let mut positions = Vec::new();
        let mut normals = Vec::new();
        let mut uvs = Vec::new();
        for r in 0..=rings {
            let v = r as f64 / rings as f64;
            let theta = v * PI;
            for s in 0..=segments {
                let u = s as f64 / segments as f64;
                let phi = u * 2.0 * PI;
                let n = DVec3::new(theta.sin() * phi.sin(), theta.cos(), theta.sin() * phi.cos());
                positions.push(center + n * radius);
                normals.push(n);
                uvs.push(DVec2::new(u, 1.0 - v));
            }
        }
        let stride = (segments + 1) as u32;
        let mut triangles = Vec::new();
        for r in 0..rings as u32 {
            for s in 0..segments as u32 {
                let a = r * stride + s;
                let b = a + stride;
                if r != 0 {
                    triangles.push([a, b, a + 1]);
                }
                if r + 1 != rings as u32 {
                    triangles.push([a + 1, b, b + 1]);
                }
            }
        }
        Self::new(positions, Some(normals), Some(uvs), triangles).expect("sphere construction is valid")
    }

    /// Unit-UV quad spanning `center ± half_extent` in the xy-plane, facing +z.
    pub fn quad(center: DVec3, half_extent: f64) -> Self {
        let h = half_extent;
        let positions = vec![
            center + DVec3::new(-h, -h, 0.0),
            center + DVec3::new(h, -h, 0.0),
            center + DVec3::new(h, h, 0.0),
            center + DVec3::new(-h, h, 0.0),
        ];
        let uvs = vec![DVec2::new(0.0, 0.0), DVec2::new(1.0, 0.0), DVec2::new(1.0, 1.0), DVec2::new(0.0, 1.0)];
        Self::new(positions, Some(vec![DVec3::Z; 4]), Some(uvs), vec![[0, 1, 2], [0, 2, 3]])
            .expect("quad construction is valid")
    }

    /// Closed box with outward-facing triangles and flat normals.
    pub fn cuboid(min: DVec3, max: DVec3) -> Self {
        let mut positions = Vec::new();
        let mut normals = Vec::new();
        let mut triangles = Vec::new();
        let faces: [(DVec3, DVec3, DVec3); 6] = [
            (DVec3::X, DVec3::Y, DVec3::Z),
            (DVec3::NEG_X, DVec3::Z, DVec3::Y),
            (DVec3::Y, DVec3::Z, DVec3::X),
            (DVec3::NEG_Y, DVec3::X, DVec3::Z),
            (DVec3::Z, DVec3::X, DVec3::Y),
            (DVec3::NEG_Z, DVec3::Y, DVec3::X),
        ];
        let center = (min + max) * 0.5;
        let half = (max - min) * 0.5;
        for (n, a, b) in faces {
            let base = positions.len() as u32;
            for (sa, sb) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                positions.push(center + (n + a * sa + b * sb) * half);
                normals.push(n);
            }
            triangles.push([base, base + 1, base + 2]);
            triangles.push([base, base + 2, base + 3]);
        }
        Self::new(positions, Some(normals), None, triangles).expect("cuboid construction is valid")
    }
}

/// Per-vertex normals from the area-weighted sum of incident face normals.
pub fn area_weighted_normals(positions: &[DVec3], triangles: &[[u32; 3]]) -> Vec<DVec3> {
    let mut acc = vec![DVec3::ZERO; positions.len()];
    for tri in triangles {
        let [a, b, c] = tri.map(|i| i as usize);
        // cross product length is twice the area
        let n = (positions[b] - positions[a]).cross(positions[c] - positions[a]);
        acc[a] += n;
        acc[b] += n;
        acc[c] += n;
    }
    acc.into_iter()
        .map(|n| {
            let len = n.length();
            if len > 0.0 && len.is_finite() {
                n / len
            } else {
                DVec3::Z
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn computed_normal_is_perpendicular() {
        let mesh = TriangleMesh::new(
            vec![DVec3::ZERO, DVec3::new(1.0, 0.0, 0.5), DVec3::new(0.0, 1.0, 0.0)],
            None,
            None,
            vec![[0, 1, 2]],
        )
        .unwrap();
        let edge1 = mesh.positions[1] - mesh.positions[0];
        let edge2 = mesh.positions[2] - mesh.positions[0];
        for n in &mesh.normals {
            assert!((n.length() - 1.0).abs() < 1e-12);
            assert!(n.dot(edge1).abs() < 1e-12);
            assert!(n.dot(edge2).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_out_of_range_index() {
        let err = TriangleMesh::new(vec![DVec3::ZERO; 3], None, None, vec![[0, 1, 3]]);
        assert!(matches!(err, Err(MeshError::Invalid(_))));
    }

    #[test]
    fn sphere_satisfies_invariants() {
        let m = TriangleMesh::uv_sphere(DVec3::new(0.0, 1.0, 0.0), 2.0, 24, 12);
        for (p, n) in m.positions.iter().zip(&m.normals) {
            assert!(((p - DVec3::Y).length() - 2.0).abs() < 1e-12);
            assert!((n.length() - 1.0).abs() < 1e-4);
            assert!(m.bbox.contains(*p));
        }
        // outward winding
        for t in 0..m.triangle_count() {
            let [a, b, c] = m.corners(t);
            let centroid = (a + b + c) / 3.0 - DVec3::Y;
            assert!(m.face_normal(t).dot(centroid) > 0.0, "triangle {t} faces inward");
        }
        let area = m.total_area();
        assert!((area - 4.0 * PI * 4.0).abs() / (16.0 * PI) < 0.02);
    }

    #[test]
    fn cuboid_faces_point_outward() {
        let m = TriangleMesh::cuboid(DVec3::splat(-1.0), DVec3::splat(1.0));
        assert_eq!(m.triangle_count(), 12);
        for t in 0..12 {
            let [a, b, c] = m.corners(t);
            assert!(m.face_normal(t).dot((a + b + c) / 3.0) > 0.0);
        }
    }

    #[test]
    fn aabb_slab_test() {
        let b = Aabb::new(DVec3::splat(-1.0), DVec3::splat(1.0));
        let dir = DVec3::Z;
        let hit = b.intersect(DVec3::new(0.0, 0.0, -5.0), dir.recip(), 0.0, f64::INFINITY);
        assert_eq!(hit, Some(4.0));
        assert!(b.intersect(DVec3::new(3.0, 0.0, -5.0), dir.recip(), 0.0, f64::INFINITY).is_none());
    }
}
