//! Monte Carlo image-based rendering with a replayable tape and a backward pass.
//!
//! Each pixel draws its random numbers from its own stream, keyed by the
//! render seed and pixel index. Sampled directions are recorded on the tape
//! and held fixed by the backward pass.

use std::ops::Range;

use glam::DVec3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brdf::{sample_cosine_hemisphere, sample_ggx, specular_weight, specular_weight_grad};
use crate::field::{FieldError, FieldGradient, MaterialField, OUTPUTS};
use crate::image::{LinearImage, RgbImage};
use crate::material::{MaterialModel, MaterialSample};
use crate::rng::{self, StreamRng};
use crate::scene::{Camera, EnvironmentMap, Hit, Scene};

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("invalid render configuration: {0}")]
    Config(String),
    #[error("tape was recorded at field version {tape:?}, field is at version {field}")]
    StaleTape { tape: Option<u64>, field: u64 },
    #[error("residual is {actual:?}, image is {expected:?}")]
    Shape { expected: (usize, usize), actual: (usize, usize) },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Which parts of the reflectance estimator contribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lobes {
    #[default]
    Both,
    Diffuse,
    Specular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub diffuse_samples: usize,
    pub specular_samples: usize,
    pub shadows: bool,
    pub seed: u64,
    pub lobes: Lobes,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { width: 512, height: 512, diffuse_samples: 64, specular_samples: 64, shadows: true, seed: 0, lobes: Lobes::Both }
    }
}

impl RenderConfig {
    pub fn new(width: usize, height: usize, samples: usize, seed: u64) -> Self {
        Self { width, height, diffuse_samples: samples, specular_samples: samples, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::Config("image size must be positive".into()));
        }
        if self.diffuse_samples == 0 || self.specular_samples == 0 {
            return Err(RenderError::Config("sample counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// One unoccluded, above-horizon GGX sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecularRecord {
    /// Environment radiance along the sampled direction.
    pub radiance: [f32; 3],
    pub n_dot_l: f32,
    pub n_dot_h: f32,
    pub o_dot_h: f32,
}

/// Everything needed to re-evaluate one shaded point for a different material.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadeRecord {
    pub n_dot_o: f64,
    /// Sum of visible environment radiance over the diffuse samples.
    pub diffuse_sum: DVec3,
    pub specular: Vec<SpecularRecord>,
}

/// Shading derivatives with respect to the material, per output channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadeGradient {
    pub value: DVec3,
    /// Channel i of the radiance depends only on albedo channel i.
    pub d_albedo: DVec3,
    pub d_roughness: DVec3,
    pub d_metallic: DVec3,
}

fn env_rgb(v: DVec3) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

fn rgb(v: [f32; 3]) -> DVec3 {
    DVec3::new(v[0] as f64, v[1] as f64, v[2] as f64)
}

/// Radiance from recorded samples. Forward rendering goes through this too,
/// so replays match bit for bit.
pub fn shade_from_record(
    mat: &MaterialSample,
    n_dot_o: f64,
    diffuse_sum: DVec3,
    specular: &[SpecularRecord],
    config: &RenderConfig,
) -> DVec3 {
    if n_dot_o <= 0.0 {
        return DVec3::ZERO;
    }
    let mut out = DVec3::ZERO;
    if config.lobes != Lobes::Specular {
        out += mat.albedo * (diffuse_sum / config.diffuse_samples as f64);
    }
    if config.lobes != Lobes::Diffuse {
        let mut spec = DVec3::ZERO;
        for s in specular {
            spec += specular_weight(mat, n_dot_o, s.n_dot_l as f64, s.n_dot_h as f64, s.o_dot_h as f64) * rgb(s.radiance);
        }
        out += spec / config.specular_samples as f64;
    }
    out
}

pub fn shade_gradient(
    mat: &MaterialSample,
    n_dot_o: f64,
    diffuse_sum: DVec3,
    specular: &[SpecularRecord],
    config: &RenderConfig,
) -> ShadeGradient {
    let mut g = ShadeGradient { value: DVec3::ZERO, d_albedo: DVec3::ZERO, d_roughness: DVec3::ZERO, d_metallic: DVec3::ZERO };
    if n_dot_o <= 0.0 {
        return g;
    }
    if config.lobes != Lobes::Specular {
        let mean = diffuse_sum / config.diffuse_samples as f64;
        g.value += mat.albedo * mean;
        g.d_albedo += mean;
    }
    if config.lobes != Lobes::Diffuse {
        let inv = 1.0 / config.specular_samples as f64;
        for s in specular {
            let w = specular_weight_grad(mat, n_dot_o, s.n_dot_l as f64, s.n_dot_h as f64, s.o_dot_h as f64);
            let l = rgb(s.radiance);
            g.value += w.value * l * inv;
            g.d_albedo += w.d_albedo * l * inv;
            g.d_roughness += w.d_roughness * l * inv;
            g.d_metallic += w.d_metallic * l * inv;
        }
    }
    g
}

/// Shades `hit` seen along `view` (unit, pointing back toward the viewer).
///
/// Directions under the geometric surface and occluded directions contribute
/// zero. If the shading normal faces away from `view`, the geometric normal is
/// used instead.
pub fn shade_point(
    scene: &Scene,
    hit: &Hit,
    view: DVec3,
    mat: &MaterialSample,
    env: &EnvironmentMap,
    config: &RenderConfig,
    rng: &mut StreamRng,
) -> (DVec3, ShadeRecord) {
    let ng = hit.geometric_normal;
    let n = if hit.shading_normal.dot(view) > 0.0 { hit.shading_normal } else { ng };
    let n_dot_o = n.dot(view);
    let visible = |dir: DVec3| {
        dir.dot(ng) > 0.0
            && !(config.shadows && scene.occluded(scene.offset_origin(hit.point, ng, dir), dir, f64::INFINITY))
    };

    let mut diffuse_sum = DVec3::ZERO;
    let mut specular = Vec::new();
    if n_dot_o > 0.0 {
        if config.lobes != Lobes::Specular {
            for _ in 0..config.diffuse_samples {
                let dir = sample_cosine_hemisphere(n, rng.random(), rng.random());
                if visible(dir) {
                    diffuse_sum += env.radiance(dir);
                }
            }
        }
        if config.lobes != Lobes::Diffuse {
            for _ in 0..config.specular_samples {
                let s = sample_ggx(mat.roughness, view, n, rng.random(), rng.random());
                if !s.below_horizon && visible(s.dir) {
                    specular.push(SpecularRecord {
                        radiance: env_rgb(env.radiance(s.dir)),
                        n_dot_l: n.dot(s.dir) as f32,
                        n_dot_h: n.dot(s.half) as f32,
                        o_dot_h: view.dot(s.half) as f32,
                    });
                }
            }
        }
    }
    let record = ShadeRecord { n_dot_o, diffuse_sum, specular };
    let color = shade_from_record(mat, record.n_dot_o, record.diffuse_sum, &record.specular, config);
    (color, record)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePixel {
    pub hit: Hit,
    pub material: MaterialSample,
    pub n_dot_o: f64,
    pub diffuse_sum: DVec3,
    pub specular: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TapePixel {
    /// Primary ray missed; the value is the environment radiance along it.
    Background(DVec3),
    Surface(SurfacePixel),
}

/// Per-pixel record of a forward render.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderTape {
    pub config: RenderConfig,
    /// Version of the material source at render time.
    pub version: Option<u64>,
    pub pixels: Vec<TapePixel>,
    pub specular: Vec<SpecularRecord>,
}

impl RenderTape {
    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    fn surface_color(&self, s: &SurfacePixel, mat: &MaterialSample) -> DVec3 {
        shade_from_record(mat, s.n_dot_o, s.diffuse_sum, &self.specular[s.specular.clone()], &self.config)
    }

    fn image_with(&self, material: impl Fn(&SurfacePixel) -> MaterialSample + Sync) -> LinearImage {
        let (pixels, mask): (Vec<DVec3>, Vec<bool>) = self
            .pixels
            .par_iter()
            .map(|p| match p {
                TapePixel::Background(c) => (*c, false),
                TapePixel::Surface(s) => (self.surface_color(s, &material(s)), true),
            })
            .unzip();
        LinearImage { rgb: RgbImage { width: self.width(), height: self.height(), pixels }, mask }
    }

    /// Re-shades the recorded samples with the recorded materials.
    pub fn replay(&self) -> LinearImage {
        self.image_with(|s| s.material)
    }

    /// Re-shades the recorded samples with materials from `model`.
    pub fn replay_with(&self, model: &impl MaterialModel) -> LinearImage {
        self.image_with(|s| model.material_at(&s.hit))
    }

    /// World-space primary hit points, in pixel order.
    pub fn hit_points(&self) -> Vec<DVec3> {
        self.pixels
            .iter()
            .filter_map(|p| match p {
                TapePixel::Surface(s) => Some(s.hit.point),
                TapePixel::Background(_) => None,
            })
            .collect()
    }
}

/// Renders one view. Miss pixels show the environment.
pub fn render_image(
    scene: &Scene,
    camera: &Camera,
    env: &EnvironmentMap,
    model: &impl MaterialModel,
    config: &RenderConfig,
) -> Result<(LinearImage, RenderTape), RenderError> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let shaded: Vec<(DVec3, Option<(SurfacePixel, Vec<SpecularRecord>)>)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray = camera.primary_ray(i % w, i / w, w, h);
            match scene.intersect(&ray, camera.near, camera.far) {
                None => (env.radiance(ray.dir), None),
                Some(hit) => {
                    let mat = model.material_at(&hit);
                    let mut r = rng::stream(config.seed, i as u64);
                    let (color, rec) = shade_point(scene, &hit, -ray.dir, &mat, env, config, &mut r);
                    let pixel = SurfacePixel {
                        hit,
                        material: mat,
                        n_dot_o: rec.n_dot_o,
                        diffuse_sum: rec.diffuse_sum,
                        specular: 0..0,
                    };
                    (color, Some((pixel, rec.specular)))
                }
            }
        })
        .collect();

    let mut pixels = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    let mut tape_pixels = Vec::with_capacity(w * h);
    let mut specular = Vec::new();
    for (color, surface) in shaded {
        pixels.push(color);
        mask.push(surface.is_some());
        tape_pixels.push(match surface {
            None => TapePixel::Background(color),
            Some((mut px, recs)) => {
                px.specular = specular.len()..specular.len() + recs.len();
                specular.extend(recs);
                TapePixel::Surface(px)
            }
        });
    }
    let image = LinearImage { rgb: RgbImage { width: w, height: h, pixels }, mask };
    let tape = RenderTape { config: *config, version: model.version(), pixels: tape_pixels, specular };
    Ok((image, tape))
}

/// Standard sRGB transfer after clamping to [0, 1].
pub fn srgb_encode(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x <= 0.003_130_8 {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

/// Derivative of [`srgb_encode`]; zero where the clamp is active.
pub fn srgb_encode_derivative(x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        0.0
    } else if x <= 0.003_130_8 {
        12.92
    } else {
        1.055 / 2.4 * x.powf(1.0 / 2.4 - 1.0)
    }
}

pub fn srgb_decode(y: f64) -> f64 {
    let y = y.clamp(0.0, 1.0);
    if y <= 0.040_45 {
        y / 12.92
    } else {
        ((y + 0.055) / 1.055).powf(2.4)
    }
}

pub fn encode_srgb(img: &LinearImage) -> RgbImage {
    let pixels = img.rgb.pixels.iter().map(|p| DVec3::new(srgb_encode(p.x), srgb_encode(p.y), srgb_encode(p.z))).collect();
    RgbImage { width: img.width(), height: img.height(), pixels }
}

fn check_backward(tape: &RenderTape, field: &MaterialField, residual: &RgbImage) -> Result<(), RenderError> {
    if tape.version != Some(field.version()) {
        return Err(RenderError::StaleTape { tape: tape.version, field: field.version() });
    }
    if residual.width != tape.width() || residual.height != tape.height() {
        return Err(RenderError::Shape {
            expected: (tape.width(), tape.height()),
            actual: (residual.width, residual.height),
        });
    }
    Ok(())
}

/// Accumulates the gradient of `sum(residual * I)` over pixels, where `I` is
/// the linear image recorded on the tape.
pub fn render_backward_linear(
    tape: &RenderTape,
    field: &MaterialField,
    residual: &RgbImage,
    grad: &mut FieldGradient,
) -> Result<(), RenderError> {
    backward_impl(tape, field, residual, false, grad)
}

/// Accumulates the gradient of `sum(residual * srgb(I))` over pixels.
pub fn render_backward(
    tape: &RenderTape,
    field: &MaterialField,
    residual: &RgbImage,
    grad: &mut FieldGradient,
) -> Result<(), RenderError> {
    backward_impl(tape, field, residual, true, grad)
}

fn backward_impl(
    tape: &RenderTape,
    field: &MaterialField,
    residual: &RgbImage,
    display: bool,
    grad: &mut FieldGradient,
) -> Result<(), RenderError> {
    check_backward(tape, field, residual)?;
    let items: Vec<(DVec3, [f64; OUTPUTS])> = tape
        .pixels
        .par_iter()
        .zip(&residual.pixels)
        .filter_map(|(p, r)| {
            let TapePixel::Surface(s) = p else { return None };
            let g = shade_gradient(&s.material, s.n_dot_o, s.diffuse_sum, &tape.specular[s.specular.clone()], &tape.config);
            let u = if display {
                *r * DVec3::new(
                    srgb_encode_derivative(g.value.x),
                    srgb_encode_derivative(g.value.y),
                    srgb_encode_derivative(g.value.z),
                )
            } else {
                *r
            };
            let da = u * g.d_albedo;
            let up = [da.x, da.y, da.z, u.dot(g.d_roughness), u.dot(g.d_metallic)];
            up.iter().any(|v| *v != 0.0).then_some((s.hit.point, up))
        })
        .collect();
    field.eval_backward_many(&items, field.version(), grad)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;
    use crate::scene::{Ray, TriangleMesh};

    fn plane_hit() -> Hit {
        let scene = Scene::new(TriangleMesh::quad(DVec3::ZERO, 1.0));
        scene.intersect(&Ray::new(DVec3::new(0.1, 0.2, 2.0), DVec3::NEG_Z), 0.0, f64::INFINITY).unwrap()
    }

    #[test]
    fn srgb_values() {
        assert_eq!(srgb_encode(0.0), 0.0);
        assert!((srgb_encode(1.0) - 1.0).abs() < 1e-15);
        assert!((srgb_encode(0.18) - 0.4613).abs() < 1e-4);
        assert_eq!(srgb_encode(2.0), srgb_encode(1.0));
        assert_eq!(srgb_encode_derivative(2.0), 0.0);
        for x in [0.001, 0.2, 0.5, 0.9] {
            assert!((srgb_decode(srgb_encode(x)) - x).abs() < 1e-12);
            let h = 1e-7;
            let fd = (srgb_encode(x + h) - srgb_encode(x - h)) / (2.0 * h);
            assert!((fd - srgb_encode_derivative(x)).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_env_diffuse_is_exact() {
        let scene = Scene::new(TriangleMesh::quad(DVec3::ZERO, 1.0));
        let env = EnvironmentMap::constant(DVec3::ONE, 8);
        let hit = plane_hit();
        let c = DVec3::new(0.2, 0.5, 0.9);
        let mat = MaterialSample::new(c, 0.5, 0.0);
        for n in [1, 3, 17, 64] {
            let config = RenderConfig { lobes: Lobes::Diffuse, ..RenderConfig::new(1, 1, n, 0) };
            let (color, _) = shade_point(&scene, &hit, DVec3::Z, &mat, &env, &config, &mut rng::stream(n as u64, 0));
            assert_eq!(color, c);
        }
    }

    #[test]
    fn closed_box_is_black() {
        let scene = Scene::new(TriangleMesh::cuboid(DVec3::splat(-1.0), DVec3::splat(1.0)));
        let hit = scene.intersect(&Ray::new(DVec3::ZERO, DVec3::X), 0.0, f64::INFINITY).unwrap();
        let env = EnvironmentMap::constant(DVec3::ONE, 8);
        let mat = MaterialSample::new(DVec3::ONE, 0.3, 0.5);
        let (color, rec) =
            shade_point(&scene, &hit, DVec3::NEG_X, &mat, &env, &RenderConfig::new(1, 1, 64, 0), &mut rng::stream(1, 0));
        assert_eq!(color, DVec3::ZERO);
        assert!(rec.specular.is_empty());
    }

    #[test]
    fn empty_scene_shows_environment() {
        let env = EnvironmentMap::preset(0, 16);
        let cam = Camera::look_at(DVec3::new(0.0, 0.0, 3.0), DVec3::ZERO, DVec3::Y, 0.8, 0.01, 10.0).unwrap();
        let config = RenderConfig::new(8, 6, 4, 0);
        let (img, _) = render_image(&Scene::empty(), &cam, &env, &MaterialSample::new(DVec3::ONE, 0.5, 0.0), &config).unwrap();
        for (i, p) in img.rgb.pixels.iter().enumerate() {
            assert_eq!(*p, env.radiance(cam.primary_ray(i % 8, i / 8, 8, 6).dir));
        }
        assert_eq!(img.hit_count(), 0);
    }

    fn sphere_setup() -> (Scene, Camera, EnvironmentMap, MaterialField) {
        let mesh = TriangleMesh::uv_sphere(DVec3::ZERO, 1.0, 24, 12);
        let bbox = mesh.bbox.padded(0.05);
        let scene = Scene::new(mesh);
        let cam = Camera::look_at(DVec3::new(0.0, 0.5, 3.0), DVec3::ZERO, DVec3::Y, 0.9, 0.01, 10.0).unwrap();
        let config = FieldConfig { levels: 4, features: 2, log2_table_size: 10, base_resolution: 4, max_resolution: 32, hidden: 8, seed: 2 };
        let mut field = MaterialField::new(bbox, config).unwrap();
        let mut r = rng::stream(2, 5);
        let params: Vec<f32> = field
            .params()
            .iter()
            .enumerate()
            .map(|(i, v)| if i < field.table_len() { r.random_range(-0.5..0.5) } else { *v })
            .collect();
        field.set_params(&params).unwrap();
        (scene, cam, EnvironmentMap::preset(1, 16), field)
    }

    #[test]
    fn rendering_is_deterministic_and_replayable() {
        let (scene, cam, env, field) = sphere_setup();
        let config = RenderConfig::new(12, 10, 8, 3);
        let (a, tape) = render_image(&scene, &cam, &env, &field, &config).unwrap();
        let (b, _) = render_image(&scene, &cam, &env, &field, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(tape.replay(), a);
        assert_eq!(tape.replay_with(&field), a);
        assert!(a.hit_count() > 0 && a.hit_count() < 120);
        assert!(a.rgb.pixels.iter().all(|p| p.cmpge(DVec3::ZERO).all() && p.is_finite()));
    }

    #[test]
    fn backward_is_linear_and_checks_version() {
        let (scene, cam, env, mut field) = sphere_setup();
        let config = RenderConfig::new(8, 8, 4, 1);
        let (img, tape) = render_image(&scene, &cam, &env, &field, &config).unwrap();
        let mut g0 = field.zero_gradient();
        render_backward(&tape, &field, &RgbImage::new(8, 8), &mut g0).unwrap();
        assert!(g0.values.iter().all(|v| *v == 0.0));

        let residual = RgbImage::from_pixels(8, 8, (0..64).map(|i| DVec3::new(1.0, -0.5, (i % 3) as f64)).collect()).unwrap();
        let doubled = RgbImage::from_pixels(8, 8, residual.pixels.iter().map(|p| *p * 2.0).collect()).unwrap();
        let (mut g1, mut g2) = (field.zero_gradient(), field.zero_gradient());
        render_backward(&tape, &field, &residual, &mut g1).unwrap();
        render_backward(&tape, &field, &doubled, &mut g2).unwrap();
        assert!(g1.norm() > 0.0);
        for (a, b) in g1.values.iter().zip(&g2.values) {
            assert_eq!(2.0 * a, *b);
        }
        assert!(img.hit_count() > 0);

        field.set_param(0, 1.0);
        let err = render_backward(&tape, &field, &residual, &mut g1);
        assert!(matches!(err, Err(RenderError::StaleTape { .. })));
    }

    #[test]
    fn shade_gradient_matches_central_differences() {
        let (scene, cam, env, _) = sphere_setup();
        let hit = scene.intersect(&cam.primary_ray(3, 3, 8, 8), cam.near, cam.far).unwrap();
        let mat = MaterialSample::new(DVec3::new(0.3, 0.6, 0.8), 0.35, 0.4);
        let config = RenderConfig::new(1, 1, 32, 0);
        let view = (cam.position - hit.point).normalize();
        let (_, rec) = shade_point(&scene, &hit, view, &mat, &env, &config, &mut rng::stream(5, 0));
        let g = shade_gradient(&mat, rec.n_dot_o, rec.diffuse_sum, &rec.specular, &config);
        let f = |m: MaterialSample| shade_from_record(&m, rec.n_dot_o, rec.diffuse_sum, &rec.specular, &config);
        let h = 1e-6;
        let fd_r = (f(MaterialSample { roughness: mat.roughness + h, ..mat }) - f(MaterialSample { roughness: mat.roughness - h, ..mat })) / (2.0 * h);
        let fd_m = (f(MaterialSample { metallic: mat.metallic + h, ..mat }) - f(MaterialSample { metallic: mat.metallic - h, ..mat })) / (2.0 * h);
        let fd_c = (f(MaterialSample { albedo: mat.albedo + DVec3::Y * h, ..mat }) - f(MaterialSample { albedo: mat.albedo - DVec3::Y * h, ..mat })) / (2.0 * h);
        assert!((fd_r - g.d_roughness).abs().max_element() < 1e-7);
        assert!((fd_m - g.d_metallic).abs().max_element() < 1e-7);
        assert!((fd_c.y - g.d_albedo.y).abs() < 1e-7);
    }
}
