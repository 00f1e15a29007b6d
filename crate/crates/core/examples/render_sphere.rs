//! Renders a sphere under each built-in sky, once with a freshly initialized
//! field and once with a procedural checkerboard.
//!
//! cargo run --release --example render_sphere -- [out_dir]

use std::path::PathBuf;

use glam::DVec3;
use matforge::material::Checkerboard;
use matforge::render::{encode_srgb, render_image};
use matforge::{Camera, EnvironmentMap, FieldConfig, MaterialField, RenderConfig, Scene, TriangleMesh};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("matforge-render"));
    std::fs::create_dir_all(&out)?;

    let scene = Scene::new(TriangleMesh::uv_sphere(DVec3::ZERO, 1.0, 64, 32));
    let camera = Camera::look_at(DVec3::new(0.0, 0.8, 3.2), DVec3::ZERO, DVec3::Y, 0.75, 0.01, 10.0)?;
    let field = MaterialField::new(scene.mesh.bbox.padded(0.05), FieldConfig::compact())?;
    let checker = Checkerboard {
        cell_size: 0.4,
        albedo_a: DVec3::new(0.8, 0.75, 0.7),
        albedo_b: DVec3::new(0.9, 0.55, 0.2),
        roughness: 0.3,
        metallic: 1.0,
    };
    let config = RenderConfig::new(160, 160, 64, 1);

    for preset in 0..5 {
        let env = EnvironmentMap::preset(preset, 64);
        let (fresh, _) = render_image(&scene, &camera, &env, &field, &config)?;
        let (metal, _) = render_image(&scene, &camera, &env, &checker, &config)?;
        encode_srgb(&fresh).write_png(&out.join(format!("fresh_env{preset}.png")))?;
        encode_srgb(&metal).write_png(&out.join(format!("checker_env{preset}.png")))?;
        metal.rgb.write_pfm(&out.join(format!("checker_env{preset}.pfm")))?;
        let mean = fresh.rgb.mean();
        println!("env {preset}: fresh field mean radiance ({:.3}, {:.3}, {:.3}), {} surface pixels", mean.x, mean.y, mean.z, fresh.hit_count());
    }
    println!("images in {}", out.display());
    Ok(())
}
