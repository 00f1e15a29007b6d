//! Fits a field to a checkerboard on a sphere's surface, bakes it into UV
//! textures and compares renders of the field and of the baked maps.
//!
//! cargo run --release --example bake_textures -- [out_dir] [resolution]

use std::path::PathBuf;

use glam::DVec3;
use matforge::field::AdamState;
use matforge::material::Checkerboard;
use matforge::render::{encode_srgb, render_image};
use matforge::scene::write_obj;
use matforge::texture::{bake_maps, write_outputs};
use matforge::{rng, Camera, EnvironmentMap, FieldConfig, MaterialField, RenderConfig, Scene, TriangleMesh};
use rand::Rng;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = args.first().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("matforge-bake"));
    let res: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(512);
    std::fs::create_dir_all(&out)?;

    let mesh = TriangleMesh::uv_sphere(DVec3::ZERO, 1.0, 48, 24);
    let truth = Checkerboard {
        cell_size: 0.4,
        albedo_a: DVec3::new(0.85, 0.8, 0.7),
        albedo_b: DVec3::new(0.25, 0.2, 0.6),
        roughness: 0.35,
        metallic: 0.8,
    };
    let mut field = MaterialField::new(mesh.bbox.padded(0.05), FieldConfig::compact())?;
    let mut adam = AdamState::new(field.param_count(), 0.01);
    let mut r = rng::stream(0, 0);
    for _ in 0..400 {
        let mut grad = field.zero_gradient();
        for _ in 0..128 {
            let tri = r.random_range(0..mesh.triangle_count());
            let (u, v) = (r.random::<f64>(), r.random::<f64>());
            let (u, v) = if u + v > 1.0 { (1.0 - u, 1.0 - v) } else { (u, v) };
            let (p, _, _) = mesh.interpolate(tri, u, v);
            let (have, want) = (field.eval(p).to_array(), truth.at_point(p).to_array());
            let up: [f64; 5] = std::array::from_fn(|k| 2.0 * (have[k] - want[k]) / 128.0);
            field.eval_backward(p, field.version(), &up, &mut grad)?;
        }
        field.apply_adam(&grad, &mut adam)?;
    }

    let maps = bake_maps(&field, &mesh, res, 4)?.padded(8);
    for path in write_outputs(&maps, &out, true)? {
        println!("wrote {}", path.display());
    }
    write_obj(&mesh, &out.join("sphere.obj"))?;
    println!("{} of {} texels covered, {} overlapping", maps.albedo.covered(), res * res, maps.overlaps);

    let scene = Scene::new(mesh);
    let camera = Camera::look_at(DVec3::new(0.0, 0.5, 3.0), DVec3::ZERO, DVec3::Y, 0.8, 0.01, 10.0)?;
    let env = EnvironmentMap::preset(1, 64);
    let config = RenderConfig::new(256, 256, 32, 2);
    let direct = encode_srgb(&render_image(&scene, &camera, &env, &field, &config)?.0);
    let baked = encode_srgb(&render_image(&scene, &camera, &env, &maps.to_uv_maps(), &config)?.0);
    direct.write_png(&out.join("render_field.png"))?;
    baked.write_png(&out.join("render_baked.png"))?;
    println!("display MAE between field and baked renders: {:.4}", direct.mean_abs_diff(&baked));
    Ok(())
}
