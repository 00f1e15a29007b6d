//! Loads an OBJ (or builds a small scene), reports BVH traversal cost
//! against brute force, and writes normal and depth G-buffer previews.
//!
//! cargo run --release --example mesh_gbuffer -- [mesh.obj] [out_dir]

use std::path::PathBuf;
use std::time::Instant;

use glam::DVec3;
use matforge::scene::{intersect_brute_force, load_obj, render_gbuffer, sample_camera_poses};
use matforge::{RgbImage, Scene, TriangleMesh};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mesh = match args.first() {
        Some(path) => load_obj(path.as_ref())?,
        None => TriangleMesh::merged(
            &TriangleMesh::uv_sphere(DVec3::new(-0.6, 0.5, 0.0), 0.5, 64, 32),
            &TriangleMesh::cuboid(DVec3::new(0.2, 0.0, -0.4), DVec3::new(1.0, 0.8, 0.4)),
        ),
    };
    let out = args.get(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("matforge-gbuffer"));
    std::fs::create_dir_all(&out)?;

    let start = Instant::now();
    let scene = Scene::new(mesh);
    println!("{} triangles, BVH of {} nodes built in {:.1} ms", scene.mesh.triangle_count(), scene.bvh.nodes.len(), start.elapsed().as_secs_f64() * 1e3);

    let cameras = sample_camera_poses(4, 2, &scene.mesh.bbox);
    let size = 128;
    let (mut nodes, mut rays, mut agree) = (0, 0, 0);
    for cam in &cameras {
        for y in (0..size).step_by(8) {
            for x in (0..size).step_by(8) {
                let ray = cam.primary_ray(x, y, size, size);
                let (hit, stats) = scene.bvh.intersect_with_stats(&scene.mesh, &ray, cam.near, cam.far);
                let brute = intersect_brute_force(&scene.mesh, &ray, cam.near, cam.far);
                agree += usize::from(hit.map(|h| (h.triangle, h.t)) == brute.map(|h| (h.triangle, h.t)));
                nodes += stats.nodes_visited;
                rays += 1;
            }
        }
    }
    println!("{rays} probe rays: {agree} agree with brute force, {:.1} nodes visited per ray", nodes as f64 / rays as f64);

    for (i, cam) in cameras.iter().enumerate() {
        let gb = render_gbuffer(&scene, cam, size, size);
        let normal = gb.normal.iter().zip(&gb.mask).map(|(n, m)| if *m { DVec3::new(n[0] as f64, n[1] as f64, n[2] as f64) * 0.5 + 0.5 } else { DVec3::ZERO });
        RgbImage::from_pixels(size, size, normal.collect())?.write_png(&out.join(format!("view{i}_normal.png")))?;
        RgbImage::from_pixels(size, size, gb.depth.iter().map(|d| DVec3::splat(*d as f64)).collect())?.write_png(&out.join(format!("view{i}_depth.png")))?;
        std::fs::write(out.join(format!("view{i}.gbuf")), gb.encode())?;
        println!("view {i}: {} of {} pixels hit", gb.mask.iter().filter(|m| **m).count(), size * size);
    }
    println!("previews in {}", out.display());
    Ok(())
}
