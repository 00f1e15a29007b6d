//! Comparing a recovered material against a reference.

use std::path::Path;

use glam::DVec3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::condition::{precompute_conditions, ConditionConfig};
use crate::distill::{run_distillation, DistillConfig, DistillContext, DistillError, DistillOutcome, DistillState, SyntheticOracle};
use crate::field::{FieldConfig, MaterialField};
use crate::image::RgbImage;
use crate::material::{Checkerboard, MaterialModel};
use crate::render::{encode_srgb, render_image, RenderConfig, RenderError};
use crate::rng;
use crate::scene::{sample_camera_poses, Camera, EnvironmentMap, Hit, Scene, TriangleMesh};

/// Reported instead of an infinite PSNR when the images are identical.
pub const PSNR_IDENTICAL: f64 = 999.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Mean absolute albedo error over visible points and the three channels.
    pub albedo_l1: f64,
    pub roughness_l1: f64,
    pub metallic_l1: f64,
    /// PSNR of display renders, peak 1.0, over all pixels of all views.
    pub psnr: f64,
    pub points: usize,
    pub views: usize,
}

/// Primary hits of every camera at `width`x`height`.
pub fn visible_hits(scene: &Scene, cameras: &[Camera], width: usize, height: usize) -> Vec<Hit> {
    cameras
        .iter()
        .flat_map(|cam| {
            (0..width * height)
                .into_par_iter()
                .filter_map(|i| scene.intersect(&cam.primary_ray(i % width, i / width, width, height), cam.near, cam.far))
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_IDENTICAL
    } else {
        -10.0 * mse.log10()
    }
}

/// Per-channel L1 on the visible surface plus image PSNR under `env`.
/// Both models are rendered with the same sample seed.
pub fn evaluate_recovery(
    scene: &Scene,
    cameras: &[Camera],
    env: &EnvironmentMap,
    reference: &impl MaterialModel,
    recovered: &impl MaterialModel,
    config: &RenderConfig,
) -> Result<RecoveryReport, RenderError> {
    config.validate()?;
    let hits = visible_hits(scene, cameras, config.width, config.height);
    let (a, r, m) = hits
        .par_iter()
        .map(|h| {
            let (x, y) = (reference.material_at(h), recovered.material_at(h));
            ((x.albedo - y.albedo).abs().element_sum(), (x.roughness - y.roughness).abs(), (x.metallic - y.metallic).abs())
        })
        .reduce(|| (0.0, 0.0, 0.0), |p, q| (p.0 + q.0, p.1 + q.1, p.2 + q.2));
    let n = hits.len().max(1) as f64;

    let mut sq = 0.0;
    let mut count = 0usize;
    for (k, cam) in cameras.iter().enumerate() {
        let cfg = RenderConfig { seed: config.seed.wrapping_add(k as u64), ..*config };
        let x = encode_srgb(&render_image(scene, cam, env, reference, &cfg)?.0);
        let y = encode_srgb(&render_image(scene, cam, env, recovered, &cfg)?.0);
        sq += x.pixels.iter().zip(&y.pixels).map(|(p, q)| (*p - *q).length_squared()).sum::<f64>();
        count += 3 * x.len();
    }
    Ok(RecoveryReport {
        albedo_l1: a / (3.0 * n),
        roughness_l1: r / n,
        metallic_l1: m / n,
        psnr: psnr(sq / count.max(1) as f64),
        points: hits.len(),
        views: cameras.len(),
    })
}

/// Mean squared display-image distance.
pub fn image_mse(a: &RgbImage, b: &RgbImage) -> f64 {
    a.pixels.iter().zip(&b.pixels).map(|(p, q)| (*p - *q).length_squared()).sum::<f64>() / (3 * a.len().max(1)) as f64
}

/// Sun direction, sun color, sky color, ground color.
type Light = ([f64; 3], [f64; 3], [f64; 3], [f64; 3]);

const LIGHTS: [Light; 5] = [
    ([0.6, 0.7, 0.4], [3.0, 2.8, 2.5], [0.45, 0.6, 0.85], [0.25, 0.22, 0.2]),
    ([-0.8, 0.3, -0.5], [3.5, 2.2, 1.2], [0.5, 0.4, 0.35], [0.15, 0.12, 0.1]),
    ([0.0, 1.0, 0.1], [2.0, 2.0, 2.0], [0.7, 0.7, 0.7], [0.3, 0.3, 0.3]),
    ([0.3, 0.2, 0.9], [1.5, 2.5, 3.5], [0.3, 0.35, 0.5], [0.2, 0.25, 0.2]),
    ([-0.4, 0.8, 0.6], [2.5, 2.5, 2.2], [0.6, 0.65, 0.6], [0.35, 0.3, 0.25]),
];

/// The desk-scale recovery experiment: a checkerboard sphere rendered under
/// several environment maps is recovered by distillation with the target oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryScenario {
    pub envs: usize,
    pub views: usize,
    pub size: usize,
    pub steps: usize,
    /// Samples per pixel of the distillation renders.
    pub samples: usize,
    pub target_samples: usize,
    pub condition_samples: usize,
    /// Multipliers on the sky and sun radiance of the lighting presets.
    pub sky_scale: f64,
    pub sun_scale: f64,
    /// Sun lobe sharpness; larger is a smaller, harder sun.
    pub sun_sharpness: f64,
    pub env_height: usize,
    pub seed: u64,
    pub ground_truth: Checkerboard,
}

impl Default for RecoveryScenario {
    fn default() -> Self {
        Self {
            envs: 5,
            views: 16,
            size: 64,
            steps: 1500,
            samples: 64,
            target_samples: 512,
            condition_samples: 2,
            sky_scale: 0.5,
            sun_scale: 0.5,
            sun_sharpness: 10.0,
            env_height: 32,
            seed: 7,
            ground_truth: Checkerboard {
                cell_size: 0.5,
                albedo_a: DVec3::new(0.75, 0.3, 0.2),
                albedo_b: DVec3::new(0.2, 0.45, 0.7),
                roughness: 0.4,
                metallic: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: RecoveryReport,
    pub outcome: DistillOutcome,
    /// View-averaged display MSE to the targets before and after optimization.
    pub initial_image_mse: f64,
    pub final_image_mse: f64,
}

impl RecoveryScenario {
    pub fn scene(&self) -> Scene {
        Scene::new(TriangleMesh::uv_sphere(DVec3::ZERO, 1.0, 48, 24))
    }

    pub fn environments(&self) -> Vec<EnvironmentMap> {
        (0..self.envs)
            .map(|i| {
                let (sun_dir, sun, sky, ground) = LIGHTS[i % LIGHTS.len()];
                EnvironmentMap::procedural_sky(
                    self.env_height,
                    DVec3::from(sun_dir),
                    DVec3::from(sun) * self.sun_scale,
                    DVec3::from(sky) * self.sky_scale,
                    DVec3::from(ground) * self.sky_scale,
                    self.sun_sharpness,
                )
            })
            .collect()
    }

    /// Defaults of the full loop except for the scaled-down size, step
    /// count and a doubled learning rate.
    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            steps: self.steps,
            lr: 0.02,
            width: self.size,
            height: self.size,
            samples: self.samples,
            seed: self.seed,
            checkpoint_every: 0,
            field: FieldConfig::compact().with_seed(self.seed),
            ..DistillConfig::default()
        }
    }

    /// Precomputes conditions into `work_dir`, distills, and scores the result.
    pub fn run(&self, work_dir: &Path, config: &DistillConfig) -> Result<ScenarioRun, DistillError> {
        let scene = self.scene();
        let envs = self.environments();
        let cameras = sample_camera_poses(self.views, self.seed, &scene.mesh.bbox);
        let labeled: Vec<(String, EnvironmentMap)> =
            envs.iter().enumerate().map(|(i, e)| (format!("preset:{i}"), e.clone())).collect();
        let cond = ConditionConfig {
            width: self.size,
            height: self.size,
            samples: self.condition_samples,
            shadows: true,
            seed: self.seed,
        };
        let manifest = precompute_conditions(&scene, &cameras, &labeled, work_dir, &cond)?.manifest;
        let target_cfg = RenderConfig::new(self.size, self.size, self.target_samples, rng::derive_seed(self.seed, 2));
        let oracle = SyntheticOracle::render_targets(&scene, &manifest, &envs, &self.ground_truth, &target_cfg)?;
        let ctx = DistillContext { scene: &scene, envs: &envs, manifest: &manifest, condition_dir: work_dir };

        let mse_to_targets = |field: &MaterialField| -> Result<f64, DistillError> {
            let mut total = 0.0;
            for e in &manifest.entries {
                let cfg = RenderConfig { seed: target_cfg.seed ^ e.seed, ..target_cfg };
                let (img, _) = render_image(&scene, &e.camera, &envs[e.env], field, &cfg)?;
                let target = oracle.target(e.view, e.env).expect("targets cover the manifest");
                total += image_mse(&encode_srgb(&img), target);
            }
            Ok(total / manifest.entries.len() as f64)
        };
        let initial_image_mse = mse_to_targets(&DistillState::new(&scene, config)?.field)?;
        let outcome = run_distillation(config, &ctx, &oracle, None, false)?;
        let final_image_mse = mse_to_targets(&outcome.state.field)?;
        let eval_cfg = RenderConfig::new(self.size, self.size, 16, rng::derive_seed(self.seed, 3));
        let report =
            evaluate_recovery(&scene, &cameras, &envs[0], &self.ground_truth, &outcome.state.field, &eval_cfg)?;
        Ok(ScenarioRun { report, outcome, initial_image_mse, final_image_mse })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_perturbed_fields() {
        let scene = Scene::new(TriangleMesh::uv_sphere(DVec3::ZERO, 1.0, 16, 8));
        let cams = sample_camera_poses(2, 1, &scene.mesh.bbox);
        let env = EnvironmentMap::preset(1, 16);
        let field = MaterialField::new(scene.mesh.bbox.padded(0.05), FieldConfig::compact()).unwrap();
        let cfg = RenderConfig::new(12, 12, 4, 3);
        let same = evaluate_recovery(&scene, &cams, &env, &field, &field, &cfg).unwrap();
        assert_eq!((same.albedo_l1, same.roughness_l1, same.metallic_l1), (0.0, 0.0, 0.0));
        assert_eq!(same.psnr, PSNR_IDENTICAL);
        assert!(same.points > 0);

        let mut other = field.clone();
        let i = other.output_bias_range().start;
        other.set_param(i, other.params()[i] + 1e-3);
        let diff = evaluate_recovery(&scene, &cams, &env, &field, &other, &cfg).unwrap();
        assert!(diff.albedo_l1 > 0.0 && diff.albedo_l1 < 1e-3);
        assert!(diff.psnr < PSNR_IDENTICAL && diff.psnr > 40.0);
    }
}
