//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use glam::{DVec2, DVec3};
use matforge::condition::{precompute_conditions, ConditionConfig, ConditionManifest};
use matforge::distill::{run_distillation, DistillConfig, DistillContext, DistillOutcome, SyntheticOracle};
use matforge::field::AdamState;
use matforge::material::Checkerboard;
use matforge::render::{encode_srgb, render_image, shade_point, Lobes};
use matforge::rng;
use matforge::scene::sample_camera_poses;
use matforge::texture::bake_maps;
use matforge::{Camera, EnvironmentMap, FieldConfig, Hit, MaterialField, MaterialModel, MaterialSample, RenderConfig, Scene, TriangleMesh};
use rand::Rng;

pub fn sphere_scene(segments: usize) -> Scene {
    Scene::new(TriangleMesh::uv_sphere(DVec3::ZERO, 1.0, segments, segments / 2))
}

/// Small hash-grid field whose table entries are large enough to matter.
pub fn busy_field(bbox: matforge::scene::Aabb, seed: u64) -> MaterialField {
    let config = FieldConfig { levels: 4, features: 2, log2_table_size: 10, base_resolution: 4, max_resolution: 32, hidden: 8, seed };
    let mut field = MaterialField::new(bbox, config).unwrap();
    let mut r = rng::stream(seed, 99);
    let table = field.table_len();
    let params: Vec<f32> =
        field.params().iter().enumerate().map(|(i, v)| if i < table { r.random_range(-1.0..1.0) } else { *v }).collect();
    field.set_params(&params).unwrap();
    field
}

// ---------------------------------------------------------------------------
// Reflectance written out independently of the library.

fn ndf(nh: f64, a: f64) -> f64 {
    let a2 = a * a;
    let d = nh * nh * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

fn g1(x: f64, a: f64) -> f64 {
    let a2 = a * a;
    2.0 * x / (x + (a2 + (1.0 - a2) * x * x).sqrt())
}

/// `f(o, l) * (n.l)` of the diffuse + GGX model.
pub fn brdf_cos(m: &MaterialSample, n: DVec3, o: DVec3, l: DVec3) -> DVec3 {
    let (no, nl) = (n.dot(o), n.dot(l));
    if no <= 0.0 || nl <= 0.0 {
        return DVec3::ZERO;
    }
    let h = (o + l).normalize();
    let (nh, oh) = (n.dot(h), o.dot(h));
    let f0 = DVec3::splat(0.04 * (1.0 - m.metallic)) + m.albedo * m.metallic;
    let f = f0 + (DVec3::ONE - f0) * (1.0 - oh).clamp(0.0, 1.0).powi(5);
    let spec = f * (ndf(nh, m.roughness) * g1(no, m.roughness) * g1(nl, m.roughness) / (4.0 * no * nl));
    (m.albedo / PI + spec) * nl
}

fn frame(n: DVec3) -> (DVec3, DVec3) {
    let helper = if n.x.abs() < 0.9 { DVec3::X } else { DVec3::Y };
    let t = n.cross(helper).normalize();
    (t, n.cross(t))
}

/// Midpoint rule over the hemisphere around `n`, `n_theta` x `2 n_theta` nodes.
pub fn hemisphere_quadrature(n: DVec3, n_theta: usize, f: impl Fn(DVec3) -> DVec3) -> DVec3 {
    let (t, b) = frame(n);
    let n_phi = 2 * n_theta;
    let (dt, dp) = (0.5 * PI / n_theta as f64, 2.0 * PI / n_phi as f64);
    let mut sum = DVec3::ZERO;
    for i in 0..n_theta {
        let th = (i as f64 + 0.5) * dt;
        let (st, ct) = th.sin_cos();
        let mut ring = DVec3::ZERO;
        for j in 0..n_phi {
            let ph = (j as f64 + 0.5) * dp;
            ring += f(t * (st * ph.cos()) + b * (st * ph.sin()) + n * ct);
        }
        sum += ring * (st * dt * dp);
    }
    sum
}

/// `int D(n.h)(n.h) dw` over the hemisphere.
pub fn ndf_normalization(alpha: f64, n_theta: usize) -> f64 {
    hemisphere_quadrature(DVec3::Z, n_theta, |h| DVec3::splat(ndf(h.z, alpha) * h.z)).x
}

fn flat_hit(n: DVec3) -> Hit {
    Hit { t: 1.0, point: DVec3::ZERO, geometric_normal: n, shading_normal: n, uv: DVec2::ZERO, barycentric: DVec2::ZERO, triangle: 0 }
}

pub struct ShadeCase {
    pub env: usize,
    pub material: MaterialSample,
    pub estimate: DVec3,
    pub reference: DVec3,
}

impl ShadeCase {
    pub fn rel_error(&self) -> f64 {
        ((self.estimate - self.reference).abs() / self.reference).max_element()
    }
}

/// Monte Carlo shading of random (material, normal, view) tuples against
/// dense quadrature of the same integral.
pub fn mc_vs_quadrature(samples: usize, cases_per_env: usize, n_theta: usize) -> Vec<ShadeCase> {
    mc_vs_quadrature_seeded(samples, cases_per_env, n_theta, 0)
}

/// As [`mc_vs_quadrature`] with the same tuples but a different sample stream
/// per `run`; `n_theta == 0` skips the quadrature.
pub fn mc_vs_quadrature_seeded(samples: usize, cases_per_env: usize, n_theta: usize, run: u64) -> Vec<ShadeCase> {
    let scene = Scene::empty();
    let envs = [EnvironmentMap::preset(0, 16), EnvironmentMap::preset(3, 16)];
    let mut r = rng::stream(2024, 0);
    let mut out = Vec::new();
    for (e, env) in envs.iter().enumerate() {
        assert_eq!((env.width(), env.height()), (32, 16));
        for k in 0..cases_per_env {
            let material = MaterialSample::new(
                DVec3::new(r.random_range(0.05..0.95), r.random_range(0.05..0.95), r.random_range(0.05..0.95)),
                r.random_range(0.2..1.0),
                r.random_range(0.0..1.0),
            );
            let n = random_unit(&mut r);
            let view = loop {
                let v = random_unit(&mut r);
                if v.dot(n) > 0.2 {
                    break v;
                }
            };
            let config = RenderConfig { diffuse_samples: samples, specular_samples: samples, shadows: false, ..RenderConfig::new(1, 1, 1, 0) };
            let mut stream = rng::stream(77 + run, (e * 100 + k) as u64);
            let (estimate, _) = shade_point(&scene, &flat_hit(n), view, &material, env, &config, &mut stream);
            let reference = match n_theta {
                0 => DVec3::ZERO,
                _ => hemisphere_quadrature(n, n_theta, |l| env.radiance(l) * brdf_cos(&material, n, view, l)),
            };
            out.push(ShadeCase { env: e, material, estimate, reference });
        }
    }
    out
}

fn random_unit(r: &mut impl Rng) -> DVec3 {
    loop {
        let v = DVec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let l = v.length();
        if l > 0.1 && l <= 1.0 {
            return v / l;
        }
    }
}

// ---------------------------------------------------------------------------
// Gradients against central differences.

pub struct FdPair {
    pub param: usize,
    pub analytic: f64,
    pub fd: f64,
}

impl FdPair {
    pub fn rel_error(&self) -> f64 {
        (self.fd - self.analytic).abs() / self.analytic.abs().max(self.fd.abs())
    }
}

/// Random parameters among those whose analytic derivative is at least
/// `1e-3` of the largest one.
fn pick_params(grad: &[f64], count: usize, seed: u64) -> Vec<usize> {
    let max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let live: Vec<usize> = (0..grad.len()).filter(|&i| grad[i].abs() >= 1e-3 * max && grad[i] != 0.0).collect();
    let mut r = rng::stream(seed, 3);
    (0..count.min(live.len())).map(|_| live[r.random_range(0..live.len())]).collect()
}

fn central_difference(field: &mut MaterialField, i: usize, step: f32, objective: impl Fn(&MaterialField) -> f64) -> f64 {
    let orig = field.params()[i];
    let (hi, lo) = (orig + step, orig - step);
    field.set_param(i, hi);
    let fp = objective(field);
    field.set_param(i, lo);
    let fm = objective(field);
    field.set_param(i, orig);
    (fp - fm) / (hi as f64 - lo as f64)
}

/// `eval_backward` on a weighted sum of outputs at a few points.
pub fn eval_backward_fd(count: usize, seed: u64) -> Vec<FdPair> {
    let bbox = matforge::scene::Aabb::new(DVec3::splat(-1.0), DVec3::splat(1.0));
    let mut field = busy_field(bbox, seed);
    let mut r = rng::stream(seed, 4);
    let points: Vec<DVec3> = (0..3).map(|_| random_unit(&mut r) * 0.8).collect();
    let weights: Vec<[f64; 5]> = points.iter().map(|_| std::array::from_fn(|_| r.random_range(-1.0..1.0))).collect();
    let mut grad = field.zero_gradient();
    for (p, w) in points.iter().zip(&weights) {
        field.eval_backward(*p, field.version(), w, &mut grad).unwrap();
    }
    let objective = |f: &MaterialField| -> f64 {
        points.iter().zip(&weights).map(|(p, w)| f.eval(*p).to_array().iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum()
    };
    pick_params(&grad.values, count, seed)
        .into_iter()
        .map(|i| FdPair { param: i, analytic: grad.values[i], fd: central_difference(&mut field, i, 1e-3, objective) })
        .collect()
}

/// `render_backward` of `sum(residual * srgb(I))` at `size`x`size`. The
/// finite differences re-shade the recorded samples with the perturbed field.
pub fn render_backward_fd(size: usize, count: usize, seed: u64) -> Vec<FdPair> {
    let scene = sphere_scene(24);
    let mut field = busy_field(scene.mesh.bbox.padded(0.05), seed);
    let cam = Camera::look_at(DVec3::new(0.3, 0.6, 3.0), DVec3::ZERO, DVec3::Y, 0.8, 0.01, 10.0).unwrap();
    let env = EnvironmentMap::preset(2, 16);
    let config = RenderConfig::new(size, size, 8, seed);
    let (_, tape) = render_image(&scene, &cam, &env, &field, &config).unwrap();
    let mut r = rng::stream(seed, 5);
    let residual = matforge::RgbImage::from_pixels(
        size,
        size,
        (0..size * size).map(|_| DVec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect(),
    )
    .unwrap();
    let mut grad = field.zero_gradient();
    matforge::render::render_backward(&tape, &field, &residual, &mut grad).unwrap();
    let objective = |f: &MaterialField| -> f64 {
        let img = encode_srgb(&tape.replay_with(f));
        img.pixels.iter().zip(&residual.pixels).map(|(a, b)| a.dot(*b)).sum()
    };
    pick_params(&grad.values, count, seed)
        .into_iter()
        .map(|i| FdPair { param: i, analytic: grad.values[i], fd: central_difference(&mut field, i, 1e-3, objective) })
        .collect()
}

// ---------------------------------------------------------------------------
// Furnace.

/// Mean over surface pixels of a sphere lit by a unit environment.
pub fn furnace_mean(roughness: f64, metallic: f64, lobes: Lobes, samples: usize) -> f64 {
    let scene = sphere_scene(32);
    let cam = Camera::look_at(DVec3::new(0.0, 0.0, 3.5), DVec3::ZERO, DVec3::Y, 0.7, 0.01, 10.0).unwrap();
    let env = EnvironmentMap::constant(DVec3::ONE, 8);
    let white = MaterialSample::new(DVec3::ONE, roughness, metallic);
    let config = RenderConfig { diffuse_samples: samples, specular_samples: samples, lobes, ..RenderConfig::new(16, 16, 1, 5) };
    let (img, _) = render_image(&scene, &cam, &env, &white, &config).unwrap();
    let pixels: Vec<DVec3> = img.rgb.pixels.iter().zip(&img.mask).filter(|(_, h)| **h).map(|(p, _)| *p).collect();
    assert!(!pixels.is_empty());
    pixels.iter().map(|p| p.element_sum() / 3.0).sum::<f64>() / pixels.len() as f64
}

// ---------------------------------------------------------------------------
// Bake / render consistency.

/// Field fitted with Adam to a checkerboard on the unit quad.
pub fn trained_quad_field(seed: u64, steps: usize) -> MaterialField {
    let mesh = TriangleMesh::quad(DVec3::ZERO, 1.0);
    let mut field = MaterialField::new(mesh.bbox.padded(0.05), FieldConfig::compact().with_seed(seed)).unwrap();
    let mut r = rng::stream(seed, 6);
    let target = Checkerboard {
        cell_size: r.random_range(0.3..0.8),
        albedo_a: DVec3::new(r.random_range(0.1..0.9), r.random_range(0.1..0.9), r.random_range(0.1..0.9)),
        albedo_b: DVec3::new(r.random_range(0.1..0.9), r.random_range(0.1..0.9), r.random_range(0.1..0.9)),
        roughness: r.random_range(0.2..0.9),
        metallic: r.random_range(0.0..1.0),
    };
    let mut adam = AdamState::new(field.param_count(), 0.01);
    for _ in 0..steps {
        let mut grad = field.zero_gradient();
        for _ in 0..64 {
            let p = DVec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), 0.0);
            let (have, want) = (field.eval(p).to_array(), target.at_point(p).to_array());
            let up: [f64; 5] = std::array::from_fn(|k| 2.0 * (have[k] - want[k]) / 64.0);
            field.eval_backward(p, field.version(), &up, &mut grad).unwrap();
        }
        field.apply_adam(&grad, &mut adam).unwrap();
    }
    field
}

/// Display-image MAE between rendering a field directly and rendering its
/// baked maps on a quad that fills a `res`x`res` view, baked at `res`.
pub fn bake_render_mae(field: &MaterialField, res: usize) -> f64 {
    let scene = Scene::new(TriangleMesh::quad(DVec3::ZERO, 1.0));
    let fov = 2.0 * (1.0f64 / 2.0).atan();
    let cam = Camera::look_at(DVec3::new(0.0, 0.0, 2.0), DVec3::ZERO, DVec3::Y, fov, 0.01, 10.0).unwrap();
    let env = EnvironmentMap::preset(1, 32);
    let config = RenderConfig::new(res, res, 16, 11);
    let maps = bake_maps(field, &scene.mesh, res, 4).unwrap().padded(8);
    let (direct, _) = render_image(&scene, &cam, &env, field, &config).unwrap();
    let (baked, _) = render_image(&scene, &cam, &env, &maps.to_uv_maps(), &config).unwrap();
    assert_eq!(direct.hit_count(), res * res);
    encode_srgb(&direct).mean_abs_diff(&encode_srgb(&baked))
}

// ---------------------------------------------------------------------------
// Distillation fixtures.

pub struct TinySetup {
    pub scene: Scene,
    pub envs: Vec<EnvironmentMap>,
    pub manifest: ConditionManifest,
    pub cond_dir: PathBuf,
}

impl TinySetup {
    pub fn new(dir: &Path, size: usize) -> Self {
        let scene = sphere_scene(24);
        let envs = vec![EnvironmentMap::preset(0, 16), EnvironmentMap::preset(2, 16)];
        let labeled: Vec<(String, EnvironmentMap)> = envs.iter().enumerate().map(|(i, e)| (format!("preset:{i}"), e.clone())).collect();
        let cams = sample_camera_poses(3, 5, &scene.mesh.bbox);
        let cond_dir = dir.join("conditions");
        let cfg = ConditionConfig { width: size, height: size, samples: 2, shadows: true, seed: 5 };
        let manifest = precompute_conditions(&scene, &cams, &labeled, &cond_dir, &cfg).unwrap().manifest;
        Self { scene, envs, manifest, cond_dir }
    }

    pub fn ctx(&self) -> DistillContext<'_> {
        DistillContext { scene: &self.scene, envs: &self.envs, manifest: &self.manifest, condition_dir: &self.cond_dir }
    }

    pub fn oracle(&self, size: usize) -> SyntheticOracle {
        let gt = Checkerboard {
            cell_size: 0.5,
            albedo_a: DVec3::new(0.8, 0.3, 0.2),
            albedo_b: DVec3::new(0.2, 0.4, 0.7),
            roughness: 0.4,
            metallic: 0.0,
        };
        SyntheticOracle::render_targets(&self.scene, &self.manifest, &self.envs, &gt, &RenderConfig::new(size, size, 32, 9)).unwrap()
    }

    pub fn config(&self, size: usize, steps: usize) -> DistillConfig {
        DistillConfig {
            steps,
            width: size,
            height: size,
            samples: 4,
            checkpoint_every: 10,
            seed: 3,
            field: FieldConfig::compact().with_seed(3),
            ..DistillConfig::default()
        }
    }

    pub fn run(&self, config: &DistillConfig, oracle: &SyntheticOracle, out: &Path, resume: bool) -> DistillOutcome {
        run_distillation(config, &self.ctx(), oracle, Some(out), resume).unwrap()
    }
}

/// Every file below `dir`, keyed by relative path.
pub fn tree_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn model_mean(model: &impl MaterialModel, hits: &[Hit]) -> [f64; 5] {
    let mut sum = [0.0; 5];
    for h in hits {
        for (s, v) in sum.iter_mut().zip(model.material_at(h).to_array()) {
            *s += v / hits.len() as f64;
        }
    }
    sum
}
