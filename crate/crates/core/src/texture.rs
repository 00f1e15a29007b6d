//! Baking a material into UV-space texture maps.
//!
//! Texel `(x, y)` of an `R`x`R` map has its center at
//! `u = (x + 0.5) / R`, `v = 1 - (y + 0.5) / R`; row 0 is the top of the
//! texture. A texel is covered by a triangle when its center lies inside the
//! triangle's UV footprint, with ties on shared edges broken by the top-left
//! rule so that every center is claimed at most once by an edge-sharing pair.

use std::path::{Path, PathBuf};

use glam::{DVec2, DVec3};
use rayon::prelude::*;

use crate::image::{quantize_u8, write_png, ImageError, Pfm};
use crate::material::{MaterialModel, UvMaps};
use crate::render::srgb_encode;
use crate::scene::{Hit, TriangleMesh};

pub const DEFAULT_RESOLUTION: usize = 2048;
pub const DEFAULT_SUPERSAMPLE: usize = 4;
pub const DEFAULT_PADDING: usize = 8;
const TILE_ROWS: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum TextureError {
    #[error("mesh has no UV coordinates; texture baking needs a UV layout")]
    NoUvs,
    #[error("invalid bake settings: {0}")]
    Config(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Square float texture with a coverage mask. `data` is interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    pub resolution: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
}

impl TextureMap {
    pub fn new(resolution: usize, channels: usize) -> Self {
        let n = resolution * resolution;
        Self { resolution, channels, data: vec![0.0; n * channels], mask: vec![false; n] }
    }

    pub fn texel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.resolution + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn covered(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn to_pfm(&self) -> Pfm {
        Pfm { width: self.resolution, height: self.resolution, channels: self.channels, data: self.data.clone() }
    }

    /// Reads a PFM; every texel counts as covered.
    pub fn from_pfm(pfm: &Pfm) -> Result<Self, TextureError> {
        if pfm.width != pfm.height {
            return Err(TextureError::Config(format!("texture is {}x{}, expected square", pfm.width, pfm.height)));
        }
        let n = pfm.width * pfm.height;
        Ok(Self { resolution: pfm.width, channels: pfm.channels, data: pfm.data.clone(), mask: vec![true; n] })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BakedMaps {
    pub albedo: TextureMap,
    pub roughness: TextureMap,
    pub metallic: TextureMap,
    /// Texels claimed by more than one triangle; the later triangle wins.
    pub overlaps: usize,
}

impl BakedMaps {
    pub fn resolution(&self) -> usize {
        self.albedo.resolution
    }

    pub fn padded(&self, iterations: usize) -> Self {
        Self {
            albedo: uv_edge_padding(&self.albedo, iterations),
            roughness: uv_edge_padding(&self.roughness, iterations),
            metallic: uv_edge_padding(&self.metallic, iterations),
            overlaps: self.overlaps,
        }
    }

    /// Bilinear lookup material over the maps.
    pub fn to_uv_maps(&self) -> UvMaps {
        let a = &self.albedo.data;
        UvMaps {
            resolution: self.resolution(),
            albedo: a.chunks_exact(3).map(|c| DVec3::new(c[0] as f64, c[1] as f64, c[2] as f64)).collect(),
            roughness: self.roughness.data.iter().map(|v| *v as f64).collect(),
            metallic: self.metallic.data.iter().map(|v| *v as f64).collect(),
        }
    }
}

/// A triangle in texel coordinates, wound so that its signed area is positive.
struct UvTriangle {
    tri: usize,
    p: [DVec2; 3],
    /// Original corner index of each oriented corner.
    corner: [usize; 3],
    area: f64,
}

fn cross(a: DVec2, b: DVec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn is_top_left(d: DVec2) -> bool {
    (d.y == 0.0 && d.x > 0.0) || d.y < 0.0
}

impl UvTriangle {
    fn new(tri: usize, uv: [DVec2; 3], r: usize) -> Option<Self> {
        let to_px = |t: DVec2| DVec2::new(t.x * r as f64, (1.0 - t.y) * r as f64);
        let mut p = uv.map(to_px);
        let mut corner = [0, 1, 2];
        let mut area = cross(p[1] - p[0], p[2] - p[0]);
        if area < 0.0 {
            p.swap(1, 2);
            corner.swap(1, 2);
            area = -area;
        }
        (area > 0.0 && area.is_finite()).then_some(Self { tri, p, corner, area })
    }

    fn covers(&self, q: DVec2) -> bool {
        (0..3).all(|k| {
            let (a, b) = (self.p[k], self.p[(k + 1) % 3]);
            let e = cross(b - a, q - a);
            e > 0.0 || (e == 0.0 && is_top_left(b - a))
        })
    }

    /// Weights of the original corners 1 and 2 at `q`, clamped onto the triangle.
    fn barycentric(&self, q: DVec2) -> (f64, f64) {
        let mut w = [0.0; 3];
        for k in 0..3 {
            let (a, b) = (self.p[(k + 1) % 3], self.p[(k + 2) % 3]);
            w[self.corner[k]] = (cross(b - a, q - a) / self.area).max(0.0);
        }
        let s = w[0] + w[1] + w[2];
        (w[1] / s, w[2] / s)
    }

    fn rows(&self, r: usize) -> (usize, usize) {
        let lo = self.p.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let hi = self.p.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let first = (lo - 0.5).ceil().max(0.0) as usize;
        let last = ((hi - 0.5).floor().min(r as f64 - 1.0)).max(-1.0);
        (first, (last + 1.0) as usize)
    }

    fn cols(&self, r: usize) -> (usize, usize) {
        let lo = self.p.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let hi = self.p.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let first = (lo - 0.5).ceil().max(0.0) as usize;
        let last = ((hi - 0.5).floor().min(r as f64 - 1.0)).max(-1.0);
        (first, (last + 1.0) as usize)
    }
}

/// Rasterizes every UV triangle and averages `supersample`^2 material
/// evaluations per covered texel.
pub fn bake_maps(
    model: &impl MaterialModel,
    mesh: &TriangleMesh,
    resolution: usize,
    supersample: usize,
) -> Result<BakedMaps, TextureError> {
    if !mesh.has_uvs() {
        return Err(TextureError::NoUvs);
    }
    if resolution == 0 || supersample == 0 {
        return Err(TextureError::Config("resolution and supersample must be positive".into()));
    }
    let r = resolution;
    let tris: Vec<UvTriangle> = (0..mesh.triangle_count())
        .filter_map(|t| UvTriangle::new(t, mesh.uv_corners(t).expect("mesh has uvs"), r))
        .collect();
    let tiles = r.div_ceil(TILE_ROWS);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); tiles];
    for (k, t) in tris.iter().enumerate() {
        let (a, b) = t.rows(r);
        if a < b {
            for bucket in &mut buckets[a / TILE_ROWS..=(b - 1) / TILE_ROWS] {
                bucket.push(k);
            }
        }
    }

    let results: Vec<(Vec<Option<[f32; 5]>>, usize)> = buckets
        .par_iter()
        .enumerate()
        .map(|(tile, bucket)| {
            let y0 = tile * TILE_ROWS;
            let y1 = (y0 + TILE_ROWS).min(r);
            let mut owner: Vec<Option<usize>> = vec![None; (y1 - y0) * r];
            let mut overlaps = 0;
            for &k in bucket {
                let t = &tris[k];
                let (ra, rb) = t.rows(r);
                let (ca, cb) = t.cols(r);
                for y in ra.max(y0)..rb.min(y1) {
                    for x in ca..cb {
                        if t.covers(DVec2::new(x as f64 + 0.5, y as f64 + 0.5)) {
                            let slot = &mut owner[(y - y0) * r + x];
                            if slot.is_some_and(|o| tris[o].tri != t.tri) {
                                overlaps += 1;
                            }
                            *slot = Some(k);
                        }
                    }
                }
            }
            let values = owner
                .iter()
                .enumerate()
                .map(|(i, o)| o.map(|k| texel_value(model, mesh, &tris[k], i % r, y0 + i / r, supersample)))
                .collect();
            (values, overlaps)
        })
        .collect();

    let mut maps =
        BakedMaps { albedo: TextureMap::new(r, 3), roughness: TextureMap::new(r, 1), metallic: TextureMap::new(r, 1), overlaps: 0 };
    let mut i = 0;
    for (values, overlaps) in results {
        maps.overlaps += overlaps;
        for v in values {
            if let Some(v) = v {
                maps.albedo.data[3 * i..3 * i + 3].copy_from_slice(&v[..3]);
                maps.roughness.data[i] = v[3];
                maps.metallic.data[i] = v[4];
                maps.albedo.mask[i] = true;
                maps.roughness.mask[i] = true;
                maps.metallic.mask[i] = true;
            }
            i += 1;
        }
    }
    if maps.overlaps > 0 {
        log::warn!("{} texels are covered by overlapping UV triangles; the later triangle wins", maps.overlaps);
    }
    Ok(maps)
}

fn texel_value(model: &impl MaterialModel, mesh: &TriangleMesh, t: &UvTriangle, x: usize, y: usize, s: usize) -> [f32; 5] {
    let normal = mesh.face_normal(t.tri);
    let mut sum = [0.0f64; 5];
    for b in 0..s {
        for a in 0..s {
            let q = DVec2::new(x as f64 + (a as f64 + 0.5) / s as f64, y as f64 + (b as f64 + 0.5) / s as f64);
            let (u, v) = t.barycentric(q);
            let (point, shading_normal, uv) = mesh.interpolate(t.tri, u, v);
            let hit = Hit {
                t: 0.0,
                point,
                geometric_normal: normal,
                shading_normal,
                uv,
                barycentric: DVec2::new(u, v),
                triangle: t.tri,
            };
            for (acc, m) in sum.iter_mut().zip(model.material_at(&hit).to_array()) {
                *acc += m;
            }
        }
    }
    let n = (s * s) as f64;
    sum.map(|v| (v / n) as f32)
}

/// Grows coverage by one ring per iteration: an uncovered texel with at least
/// one covered 8-neighbor takes their mean. Covered texels never change.
pub fn uv_edge_padding(map: &TextureMap, iterations: usize) -> TextureMap {
    let r = map.resolution;
    let c = map.channels;
    let mut cur = map.clone();
    for _ in 0..iterations {
        if cur.mask.iter().all(|m| *m) {
            break;
        }
        let mut next = cur.clone();
        for y in 0..r {
            for x in 0..r {
                let i = y * r + x;
                if cur.mask[i] {
                    continue;
                }
                let mut acc = vec![0.0f64; c];
                let mut count = 0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= r as i64 || ny >= r as i64 {
                            continue;
                        }
                        let j = ny as usize * r + nx as usize;
                        if cur.mask[j] {
                            count += 1;
                            for (a, v) in acc.iter_mut().zip(&cur.data[j * c..(j + 1) * c]) {
                                *a += *v as f64;
                            }
                        }
                    }
                }
                if count > 0 {
                    for (k, a) in acc.iter().enumerate() {
                        next.data[i * c + k] = (a / count as f64) as f32;
                    }
                    next.mask[i] = true;
                }
            }
        }
        cur = next;
    }
    cur
}

/// Writes `albedo.png` (sRGB), `roughness.png` and `metallic.png` (linear
/// grayscale) and, with `pfm`, the float maps as `albedo.pfm`,
/// `roughness.pfm` and `metallic.pfm`. Returns the written paths.
pub fn write_outputs(maps: &BakedMaps, dir: &Path, pfm: bool) -> Result<Vec<PathBuf>, TextureError> {
    std::fs::create_dir_all(dir).map_err(|source| TextureError::Io { path: dir.to_path_buf(), source })?;
    let r = maps.resolution();
    let mut written = Vec::new();
    let albedo: Vec<u8> = maps.albedo.data.iter().map(|v| quantize_u8(srgb_encode(*v as f64))).collect();
    let path = dir.join("albedo.png");
    write_png(&path, r, r, png::ColorType::Rgb, &albedo)?;
    written.push(path);
    for (name, map) in [("roughness", &maps.roughness), ("metallic", &maps.metallic)] {
        let bytes: Vec<u8> = map.data.iter().map(|v| quantize_u8(*v as f64)).collect();
        let path = dir.join(format!("{name}.png"));
        write_png(&path, r, r, png::ColorType::Grayscale, &bytes)?;
        written.push(path);
    }
    if pfm {
        for (name, map) in [("albedo", &maps.albedo), ("roughness", &maps.roughness), ("metallic", &maps.metallic)] {
            let path = dir.join(format!("{name}.pfm"));
            map.to_pfm().write(&path)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::MaterialSample;
    use proptest::prelude::*;

    fn single_triangle() -> TriangleMesh {
        let p = vec![DVec3::ZERO, DVec3::X, DVec3::Y];
        let uv = vec![DVec2::new(0.0, 0.0), DVec2::new(1.0, 0.0), DVec2::new(0.0, 1.0)];
        TriangleMesh::new(p, None, Some(uv), vec![[0, 1, 2]]).unwrap()
    }

    fn mask_rows(map: &TextureMap) -> Vec<String> {
        map.mask.chunks(map.resolution).map(|row| row.iter().map(|m| if *m { '#' } else { '.' }).collect()).collect()
    }

    #[test]
    fn half_square_triangle_4x4() {
        let c = MaterialSample::new(DVec3::new(0.2, 0.4, 0.6), 0.5, 0.25);
        let maps = bake_maps(&c, &single_triangle(), 4, 2).unwrap();
        // centers with u + v < 1 are inside; the hypotenuse is not a top-left edge
        assert_eq!(mask_rows(&maps.albedo), ["....", "#...", "##..", "###."]);
        for (i, m) in maps.albedo.mask.iter().enumerate() {
            if *m {
                assert_eq!(maps.albedo.texel(i % 4, i / 4), [0.2f32, 0.4, 0.6]);
                assert_eq!(maps.roughness.data[i], 0.5);
                assert_eq!(maps.metallic.data[i], 0.25);
            }
        }
        assert_eq!(maps.overlaps, 0);
    }

    #[test]
    fn quad_shared_diagonal_is_claimed_once() {
        let mesh = TriangleMesh::quad(DVec3::ZERO, 1.0);
        let maps = bake_maps(&MaterialSample::new(DVec3::ONE, 0.5, 0.0), &mesh, 4, 1).unwrap();
        assert_eq!(maps.albedo.covered(), 16);
        assert_eq!(maps.overlaps, 0);
    }

    #[test]
    fn overlapping_charts_are_counted() {
        let mesh = single_triangle();
        let doubled = mesh.merged(&mesh);
        let maps = bake_maps(&MaterialSample::new(DVec3::ONE, 0.5, 0.0), &doubled, 4, 1).unwrap();
        assert_eq!(maps.overlaps, 6);
        assert_eq!(maps.albedo.covered(), 6);
    }

    #[test]
    fn bake_requires_uvs() {
        let mesh = TriangleMesh::new(vec![DVec3::ZERO, DVec3::X, DVec3::Y], None, None, vec![[0, 1, 2]]).unwrap();
        assert!(matches!(bake_maps(&MaterialSample::new(DVec3::ONE, 0.5, 0.0), &mesh, 4, 1), Err(TextureError::NoUvs)));
    }

    #[test]
    fn padding_single_texel() {
        let mut map = TextureMap::new(5, 1);
        map.data[12] = 0.75;
        map.mask[12] = true;
        let once = uv_edge_padding(&map, 1);
        assert_eq!(once.covered(), 9);
        for y in 1..4 {
            for x in 1..4 {
                assert_eq!(once.texel(x, y), [0.75]);
            }
        }
        let full = uv_edge_padding(&map, 2);
        assert_eq!(full.covered(), 25);
        assert_eq!(uv_edge_padding(&full, 3), full);
        assert_eq!(uv_edge_padding(&once, 0), once);
    }

    #[test]
    fn output_quantization() {
        let mut maps = bake_maps(&MaterialSample::new(DVec3::splat(0.5), 1.0, 0.0), &TriangleMesh::quad(DVec3::ZERO, 1.0), 2, 1).unwrap();
        maps.metallic.data[0] = 0.5;
        let dir = tempfile::tempdir().unwrap();
        let files = write_outputs(&maps, dir.path(), true).unwrap();
        assert_eq!(files.len(), 6);
        let (_, _, ch, albedo) = crate::image::read_png(&dir.path().join("albedo.png")).unwrap();
        assert_eq!(ch, 3);
        assert!(albedo.iter().all(|b| *b == 188));
        let (_, _, ch, rough) = crate::image::read_png(&dir.path().join("roughness.png")).unwrap();
        assert_eq!(ch, 1);
        assert!(rough.iter().all(|b| *b == 255));
        let (_, _, _, metal) = crate::image::read_png(&dir.path().join("metallic.png")).unwrap();
        assert_eq!(metal, [128, 0, 0, 0]);
        let back = Pfm::read(&dir.path().join("metallic.pfm")).unwrap();
        assert_eq!(back.data, maps.metallic.data);
        let back = Pfm::read(&dir.path().join("albedo.pfm")).unwrap();
        assert_eq!(back.data, maps.albedo.data);
    }

    proptest! {
        #[test]
        fn padding_never_touches_covered_texels(
            bits in prop::collection::vec(any::<bool>(), 36),
            vals in prop::collection::vec(0.0f32..1.0, 36),
            iters in 0usize..6,
        ) {
            let map = TextureMap { resolution: 6, channels: 1, data: vals, mask: bits };
            let padded = uv_edge_padding(&map, iters);
            for i in 0..36 {
                if map.mask[i] {
                    prop_assert_eq!(padded.data[i], map.data[i]);
                }
                prop_assert!(padded.mask[i] || !map.mask[i]);
            }
        }

        #[test]
        fn random_triangles_stay_in_range(
            uvs in prop::array::uniform6(0.0f64..1.0),
            res in 1usize..24,
        ) {
            let p = vec![DVec3::ZERO, DVec3::X, DVec3::Y];
            let uv = vec![DVec2::new(uvs[0], uvs[1]), DVec2::new(uvs[2], uvs[3]), DVec2::new(uvs[4], uvs[5])];
            let mesh = TriangleMesh::new(p, None, Some(uv), vec![[0, 1, 2]]).unwrap();
            let field = crate::material::Checkerboard {
                cell_size: 0.3,
                albedo_a: DVec3::new(0.9, 0.1, 0.5),
                albedo_b: DVec3::new(0.1, 0.8, 0.3),
                roughness: 0.6,
                metallic: 1.0,
            };
            let maps = bake_maps(&field, &mesh, res, 2).unwrap();
            for (i, m) in maps.albedo.mask.iter().enumerate() {
                if *m {
                    prop_assert!(maps.albedo.texel(i % res, i / res).iter().all(|v| (0.0..=1.0).contains(v)));
                    prop_assert!((0.04..=1.0).contains(&maps.roughness.data[i]));
                    prop_assert!((0.0..=1.0).contains(&maps.metallic.data[i]));
                }
            }
        }
    }
}
