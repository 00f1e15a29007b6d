//! Precomputes light/normal/depth condition stacks for a few views and
//! exports each channel group as a PNG.
//!
//! cargo run --release --example condition_maps -- [out_dir]

use std::path::PathBuf;

use glam::DVec3;
use matforge::condition::{precompute_conditions, predefined_materials, ConditionConfig, DEPTH_CHANNEL, NORMAL_CHANNEL};
use matforge::render::srgb_encode;
use matforge::scene::sample_camera_poses;
use matforge::{ConditionStack, EnvironmentMap, RgbImage, Scene, TriangleMesh};

fn channel_image(stack: &ConditionStack, f: impl Fn(&[f32]) -> DVec3) -> RgbImage {
    let (w, h) = (stack.width(), stack.height());
    let pixels = (0..w * h).map(|i| f(stack.pixel(i % w, i / w))).collect();
    RgbImage::from_pixels(w, h, pixels).expect("sizes match")
}

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("matforge-conditions"));
    let mesh = TriangleMesh::merged(
        &TriangleMesh::uv_sphere(DVec3::new(0.0, 0.6, 0.0), 0.6, 48, 24),
        &TriangleMesh::cuboid(DVec3::new(-1.2, -0.2, -1.2), DVec3::new(1.2, 0.0, 1.2)),
    );
    let scene = Scene::new(mesh);
    let cameras = sample_camera_poses(3, 11, &scene.mesh.bbox);
    let envs: Vec<(String, EnvironmentMap)> = (0..2).map(|i| (format!("preset:{i}"), EnvironmentMap::preset(i, 64))).collect();
    let config = ConditionConfig { width: 128, height: 128, samples: 32, shadows: true, seed: 3 };

    let report = precompute_conditions(&scene, &cameras, &envs, &out, &config)?;
    println!("{} stacks rendered, {} reused", report.rendered, report.skipped);

    let materials = predefined_materials();
    for entry in &report.manifest.entries {
        let stack = ConditionStack::read(&out.join(&entry.file))?;
        let stem = entry.file.trim_end_matches(".cmap");
        for (k, m) in materials.iter().enumerate() {
            let img = channel_image(&stack, |p| DVec3::new(p[3 * k] as f64, p[3 * k + 1] as f64, p[3 * k + 2] as f64).map(srgb_encode));
            img.write_png(&out.join(format!("{stem}_light_m{}_r{}.png", m.metallic, m.roughness)))?;
        }
        let n = NORMAL_CHANNEL;
        channel_image(&stack, |p| DVec3::new(p[n] as f64, p[n + 1] as f64, p[n + 2] as f64) * 0.5 + 0.5).write_png(&out.join(format!("{stem}_normal.png")))?;
        channel_image(&stack, |p| DVec3::splat(p[DEPTH_CHANNEL] as f64)).write_png(&out.join(format!("{stem}_depth.png")))?;
        let covered = (0..stack.width() * stack.height()).filter(|i| stack.pixel(i % stack.width(), i / stack.width())[DEPTH_CHANNEL] > 0.0).count();
        println!("{}: view {} env {} seed {:#x}, {covered} covered pixels", entry.file, entry.view, entry.env, entry.seed);
    }
    println!("stacks and previews in {}", out.display());
    Ok(())
}
