//! Distills a checkerboard sphere from rendered target images through the
//! full step loop: conditions, noising, three guidance calls, residual,
//! backward pass, smoothness term, Adam, checkpoints.
//!
//! cargo run --release --example distill_oracle -- [out_dir] [steps]

use std::path::PathBuf;

use glam::DVec3;
use matforge::condition::{precompute_conditions, ConditionConfig};
use matforge::distill::{run_distillation, DistillConfig, DistillContext, DistillState, SyntheticOracle};
use matforge::recovery::evaluate_recovery;
use matforge::material::Checkerboard;
use matforge::scene::sample_camera_poses;
use matforge::{EnvironmentMap, FieldConfig, RenderConfig, Scene, TriangleMesh};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("matforge-distill"));
    let steps: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(600);

    let scene = Scene::new(TriangleMesh::uv_sphere(DVec3::ZERO, 1.0, 32, 16));
    let size = 32;
    let cameras = sample_camera_poses(6, 1, &scene.mesh.bbox);
    let labeled: Vec<(String, EnvironmentMap)> = [0, 2].iter().map(|&i| (format!("preset:{i}"), EnvironmentMap::preset(i, 32))).collect();
    let envs: Vec<EnvironmentMap> = labeled.iter().map(|(_, e)| e.clone()).collect();

    let cond_dir = out.join("conditions");
    let cond = ConditionConfig { width: size, height: size, samples: 4, shadows: true, seed: 1 };
    let manifest = precompute_conditions(&scene, &cameras, &labeled, &cond_dir, &cond)?.manifest;

    let truth = Checkerboard {
        cell_size: 0.5,
        albedo_a: DVec3::new(0.7, 0.3, 0.2),
        albedo_b: DVec3::new(0.2, 0.4, 0.7),
        roughness: 0.4,
        metallic: 0.0,
    };
    let oracle = SyntheticOracle::render_targets(&scene, &manifest, &envs, &truth, &RenderConfig::new(size, size, 128, 9))?;

    let config = DistillConfig {
        steps,
        lr: 0.02,
        width: size,
        height: size,
        samples: 32,
        checkpoint_every: 100,
        field: FieldConfig::compact(),
        ..DistillConfig::default()
    };
    let ctx = DistillContext { scene: &scene, envs: &envs, manifest: &manifest, condition_dir: &cond_dir };
    let outcome = run_distillation(&config, &ctx, &oracle, Some(&out.join("run")), false)?;

    for m in outcome.metrics.iter().step_by((steps / 10).max(1)) {
        println!(
            "step {:4}  view {} env {}  t {:3}  eta2 {:.3}  mean |delta| {:.4}  smooth {:.5}  |grad| {:.3}",
            m.step, m.view, m.env, m.t, m.eta2, m.delta_abs_mean, m.smooth_loss, m.grad_norm
        );
    }
    let initial = DistillState::new(&scene, &config)?.field;
    let eval = RenderConfig::new(size, size, 16, 0);
    for (label, field) in [("initial", &initial), ("distilled", &outcome.state.field)] {
        let r = evaluate_recovery(&scene, &cameras, &envs[0], &truth, field, &eval)?;
        println!("{label:>9}: L1 albedo {:.3} roughness {:.3} metallic {:.3} over {} points, PSNR {:.1} dB", r.albedo_l1, r.roughness_l1, r.metallic_l1, r.points, r.psnr);
    }
    println!("field, metrics and checkpoints in {}", out.join("run").display());
    Ok(())
}
