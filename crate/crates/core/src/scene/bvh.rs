//! Binary BVH over triangles, built with binned SAH.

use glam::{DVec2, DVec3};

use super::mesh::{Aabb, TriangleMesh};
use super::{Hit, Ray};

const MAX_LEAF: usize = 4;
const BINS: usize = 12;
const STACK_DEPTH: usize = 128;

/// Flattened node. Interior nodes store their right child; the left child
/// immediately follows the parent. Leaves have `count > 0`.
#[derive(Debug, Clone, Copy)]
pub struct BvhNode {
    pub bounds: Aabb,
    pub start: u32,
    pub count: u32,
    pub right: u32,
}

impl BvhNode {
    pub fn is_leaf(&self) -> bool {
        self.count > 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct Bvh {
    pub nodes: Vec<BvhNode>,
    /// Triangle ids in leaf order.
    pub order: Vec<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TraversalStats {
    pub nodes_visited: usize,
    pub leaves_visited: usize,
}

struct BuildItem {
    bounds: Aabb,
    centroid: DVec3,
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let n = mesh.triangle_count();
        if n == 0 {
            return Self::default();
        }
        let items: Vec<BuildItem> = (0..n)
            .map(|t| {
                let bounds = mesh.triangle_bounds(t);
                BuildItem { bounds, centroid: bounds.center() }
            })
            .collect();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(2 * n);
        build_recursive(&items, &mut order, 0, n, &mut nodes);
        Self { nodes, order }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map_or(Aabb::EMPTY, |n| n.bounds)
    }

    /// Nearest hit with `t` in the open interval `(t_min, t_max)`.
    pub fn intersect(&self, mesh: &TriangleMesh, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
        self.intersect_with_stats(mesh, ray, t_min, t_max).0
    }

    pub fn intersect_with_stats(
        &self,
        mesh: &TriangleMesh,
        ray: &Ray,
        t_min: f64,
        t_max: f64,
    ) -> (Option<Hit>, TraversalStats) {
        let mut stats = TraversalStats::default();
        if self.nodes.is_empty() {
            return (None, stats);
        }
        let inv = ray.dir.recip();
        let mut best: Option<(f64, u32, f64, f64)> = None;
        let mut limit = t_max;
        let mut stack = [0u32; STACK_DEPTH];
        let mut top = 0;
        if self.nodes[0].bounds.intersect(ray.origin, inv, t_min, limit).is_some() {
            stack[0] = 0;
            top = 1;
        }
        while top > 0 {
            top -= 1;
            let idx = stack[top];
            let node = &self.nodes[idx as usize];
            stats.nodes_visited += 1;
            if node.bounds.intersect(ray.origin, inv, t_min, limit).is_none() {
                continue;
            }
            if node.is_leaf() {
                stats.leaves_visited += 1;
                for &tri in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    if let Some((t, u, v)) = intersect_triangle(mesh, tri as usize, ray) {
                        if t <= t_min || t > limit {
                            continue;
                        }
                        let better = match best {
                            None => t < t_max,
                            Some((bt, btri, _, _)) => t < bt || (t == bt && tri < btri),
                        };
                        if better {
                            best = Some((t, tri, u, v));
                            limit = t;
                        }
                    }
                }
            } else {
                let left = idx + 1;
                let right = node.right;
                let dl = self.nodes[left as usize].bounds.intersect(ray.origin, inv, t_min, limit);
                let dr = self.nodes[right as usize].bounds.intersect(ray.origin, inv, t_min, limit);
                // push the farther child first so the nearer one is popped next
                match (dl, dr) {
                    (Some(a), Some(b)) => {
                        let (near, far) = if a <= b { (left, right) } else { (right, left) };
                        stack[top] = far;
                        stack[top + 1] = near;
                        top += 2;
                    }
                    (Some(_), None) => {
                        stack[top] = left;
                        top += 1;
                    }
                    (None, Some(_)) => {
                        stack[top] = right;
                        top += 1;
                    }
                    (None, None) => {}
                }
            }
        }
        (best.map(|(t, tri, u, v)| make_hit(mesh, ray, t, tri as usize, u, v)), stats)
    }

    /// True iff any triangle is hit with `t` in `(0, t_max)`.
    pub fn occluded(&self, mesh: &TriangleMesh, ray: &Ray, t_max: f64) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let inv = ray.dir.recip();
        let mut stack = [0u32; STACK_DEPTH];
        stack[0] = 0;
        let mut top = 1;
        while top > 0 {
            top -= 1;
            let idx = stack[top];
            let node = &self.nodes[idx as usize];
            if node.bounds.intersect(ray.origin, inv, 0.0, t_max).is_none() {
                continue;
            }
            if node.is_leaf() {
                for &tri in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    if let Some((t, _, _)) = intersect_triangle(mesh, tri as usize, ray) {
                        if t > 0.0 && t < t_max {
                            return true;
                        }
                    }
                }
            } else {
                stack[top] = node.right;
                stack[top + 1] = idx + 1;
                top += 2;
            }
        }
        false
    }
}

/// Exhaustive nearest-hit search with the same tie-breaking as the BVH.
pub fn intersect_brute_force(mesh: &TriangleMesh, ray: &Ray, t_min: f64, t_max: f64) -> Option<Hit> {
    let mut best: Option<(f64, usize, f64, f64)> = None;
    for tri in 0..mesh.triangle_count() {
        if let Some((t, u, v)) = intersect_triangle(mesh, tri, ray) {
            if t > t_min && t < t_max && best.is_none_or(|(bt, _, _, _)| t < bt) {
                best = Some((t, tri, u, v));
            }
        }
    }
    best.map(|(t, tri, u, v)| make_hit(mesh, ray, t, tri, u, v))
}

/// Möller–Trumbore; returns `(t, u, v)` for any `t` along the infinite line.
#[inline]
pub fn intersect_triangle(mesh: &TriangleMesh, tri: usize, ray: &Ray) -> Option<(f64, f64, f64)> {
    let [a, b, c] = mesh.corners(tri);
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.dir.cross(e2);
    let det = e1.dot(p);
    if det * det <= 1e-28 * e1.length_squared() * e2.length_squared() {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = ray.dir.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some((e2.dot(q) * inv, u, v))
}

fn make_hit(mesh: &TriangleMesh, ray: &Ray, t: f64, tri: usize, u: f64, v: f64) -> Hit {
    let (point, mut shading, uv) = mesh.interpolate(tri, u, v);
    let mut geometric = mesh.face_normal(tri);
    if shading == DVec3::ZERO {
        shading = geometric;
    }
    if geometric.dot(ray.dir) > 0.0 {
        geometric = -geometric;
        shading = -shading;
    }
    Hit { t, point, geometric_normal: geometric, shading_normal: shading, uv, barycentric: DVec2::new(u, v), triangle: tri }
}

fn build_recursive(items: &[BuildItem], order: &mut [u32], start: usize, end: usize, nodes: &mut Vec<BvhNode>) -> u32 {
    let index = nodes.len() as u32;
    let slice = &order[start..end];
    let bounds = slice.iter().fold(Aabb::EMPTY, |b, &t| b.union(items[t as usize].bounds));
    nodes.push(BvhNode { bounds, start: start as u32, count: (end - start) as u32, right: 0 });
    let count = end - start;
    if count <= MAX_LEAF {
        return index;
    }
    let centroid_bounds = slice.iter().fold(Aabb::EMPTY, |b, &t| b.grown(items[t as usize].centroid));
    let axis = centroid_bounds.centroid_axis_extent();
    let lo = centroid_bounds.min[axis];
    let hi = centroid_bounds.max[axis];
    if hi - lo <= 0.0 {
        // all centroids coincide: split by count so leaves stay small
        let mid = start + count / 2;
        return split(items, order, start, mid, end, index, nodes);
    }

    let bin_of = |t: u32| -> usize {
        let c = items[t as usize].centroid[axis];
        (((c - lo) / (hi - lo)) * BINS as f64).min(BINS as f64 - 1.0) as usize
    };
    let mut bin_bounds = [Aabb::EMPTY; BINS];
    let mut bin_counts = [0usize; BINS];
    for &t in slice.iter() {
        let b = bin_of(t);
        bin_counts[b] += 1;
        bin_bounds[b] = bin_bounds[b].union(items[t as usize].bounds);
    }
    let mut best = (f64::INFINITY, 0usize);
    for split_at in 1..BINS {
        let (mut lb, mut lc) = (Aabb::EMPTY, 0);
        for i in 0..split_at {
            lb = lb.union(bin_bounds[i]);
            lc += bin_counts[i];
        }
        let (mut rb, mut rc) = (Aabb::EMPTY, 0);
        for i in split_at..BINS {
            rb = rb.union(bin_bounds[i]);
            rc += bin_counts[i];
        }
        if lc == 0 || rc == 0 {
            continue;
        }
        let cost = lb.surface_area() * lc as f64 + rb.surface_area() * rc as f64;
        if cost < best.0 {
            best = (cost, split_at);
        }
    }
    let mid = if best.0.is_finite() {
        let slice = &mut order[start..end];
        let mut left = 0;
        for i in 0..slice.len() {
            if bin_of(slice[i]) < best.1 {
                slice.swap(i, left);
                left += 1;
            }
        }
        start + left
    } else {
        start + count / 2
    };
    split(items, order, start, mid, end, index, nodes)
}

fn split(
    items: &[BuildItem],
    order: &mut [u32],
    start: usize,
    mid: usize,
    end: usize,
    index: u32,
    nodes: &mut Vec<BvhNode>,
) -> u32 {
    build_recursive(items, order, start, mid, nodes);
    let right = build_recursive(items, order, mid, end, nodes);
    let node = &mut nodes[index as usize];
    node.count = 0;
    node.right = right;
    index
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_soup(n: usize, seed: u64) -> TriangleMesh {
        let mut r = rng::stream(seed, 0);
        let mut positions = Vec::new();
        let mut triangles = Vec::new();
        for i in 0..n as u32 {
            let c = DVec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            for _ in 0..3 {
                positions.push(
                    c + DVec3::new(r.random_range(-0.1..0.1), r.random_range(-0.1..0.1), r.random_range(-0.1..0.1)),
                );
            }
            triangles.push([3 * i, 3 * i + 1, 3 * i + 2]);
        }
        TriangleMesh::new(positions, None, None, triangles).unwrap()
    }

    fn random_unit(r: &mut impl Rng) -> DVec3 {
        loop {
            let v = DVec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            let l = v.length();
            if l > 1e-3 && l <= 1.0 {
                return v / l;
            }
        }
    }

    #[test]
    fn single_triangle_is_one_leaf() {
        let mesh = TriangleMesh::new(vec![DVec3::ZERO, DVec3::X, DVec3::Y], None, None, vec![[0, 1, 2]]).unwrap();
        let bvh = Bvh::build(&mesh);
        assert_eq!(bvh.nodes.len(), 1);
        assert!(bvh.nodes[0].is_leaf());
    }

    #[test]
    fn each_triangle_referenced_once_and_children_nested() {
        let mesh = random_soup(500, 3);
        let bvh = Bvh::build(&mesh);
        let mut seen = vec![0; 500];
        for node in &bvh.nodes {
            if node.is_leaf() {
                for &t in &bvh.order[node.start as usize..(node.start + node.count) as usize] {
                    seen[t as usize] += 1;
                }
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        for (i, node) in bvh.nodes.iter().enumerate() {
            if !node.is_leaf() {
                assert!(node.bounds.contains_box(&bvh.nodes[i + 1].bounds));
                assert!(node.bounds.contains_box(&bvh.nodes[node.right as usize].bounds));
            }
        }
    }

    #[test]
    fn matches_brute_force_on_random_rays() {
        let mesh = random_soup(1000, 11);
        let bvh = Bvh::build(&mesh);
        let mut r = rng::stream(12, 0);
        let mut hits = 0;
        for _ in 0..1000 {
            let origin = random_unit(&mut r) * 2.5;
            let target = DVec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            let ray = Ray::new(origin, (target - origin).normalize());
            let a = bvh.intersect(&mesh, &ray, 1e-9, f64::INFINITY);
            let b = intersect_brute_force(&mesh, &ray, 1e-9, f64::INFINITY);
            match (a, b) {
                (Some(a), Some(b)) => {
                    hits += 1;
                    assert_eq!(a.triangle, b.triangle);
                    assert!((a.t - b.t).abs() <= 1e-6 * b.t.abs());
                }
                (None, None) => {}
                (a, b) => panic!("bvh {a:?} vs brute force {b:?}"),
            }
        }
        assert!(hits > 100, "too few hits to be meaningful: {hits}");
    }

    #[test]
    fn occluded_agrees_with_intersect() {
        let mesh = random_soup(300, 5);
        let bvh = Bvh::build(&mesh);
        let mut r = rng::stream(6, 0);
        for _ in 0..10_000 {
            let origin =
                DVec3::new(r.random_range(-1.5..1.5), r.random_range(-1.5..1.5), r.random_range(-1.5..1.5));
            let ray = Ray::new(origin, random_unit(&mut r));
            let t_max = r.random_range(0.1..3.0);
            let expect = intersect_brute_force(&mesh, &ray, 0.0, t_max).is_some();
            assert_eq!(bvh.occluded(&mesh, &ray, t_max), expect);
        }
    }

    #[test]
    fn miss_outside_bounds_visits_no_leaves() {
        let mesh = random_soup(200, 8);
        let bvh = Bvh::build(&mesh);
        let ray = Ray::new(DVec3::new(10.0, 10.0, 10.0), DVec3::X);
        let (hit, stats) = bvh.intersect_with_stats(&mesh, &ray, 0.0, f64::INFINITY);
        assert!(hit.is_none());
        assert_eq!(stats.leaves_visited, 0);
    }
}
