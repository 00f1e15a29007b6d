//! Compares the analytic backward pass of a render against central
//! differences of the same recorded samples, parameter by parameter.
//!
//! cargo run --release --example gradient_check -- [count]

use glam::DVec3;
use matforge::render::{encode_srgb, render_backward, render_image};
use matforge::rng;
use matforge::{Camera, EnvironmentMap, FieldConfig, MaterialField, RenderConfig, RgbImage, Scene, TriangleMesh};
use rand::Rng;

fn main() -> anyhow::Result<()> {
    let count: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(12);
    let scene = Scene::new(TriangleMesh::uv_sphere(DVec3::ZERO, 1.0, 24, 12));
    let mut field = MaterialField::new(scene.mesh.bbox.padded(0.05), FieldConfig::compact().with_seed(3))?;
    let mut r = rng::stream(3, 0);
    for i in 0..field.table_len() {
        field.set_param(i, r.random_range(-1.0..1.0));
    }
    let camera = Camera::look_at(DVec3::new(0.3, 0.6, 3.0), DVec3::ZERO, DVec3::Y, 0.8, 0.01, 10.0)?;
    let env = EnvironmentMap::preset(2, 32);
    let size = 32;
    let (_, tape) = render_image(&scene, &camera, &env, &field, &RenderConfig::new(size, size, 8, 1))?;

    let weights = RgbImage::from_pixels(
        size,
        size,
        (0..size * size).map(|_| DVec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect(),
    )?;
    let mut grad = field.zero_gradient();
    render_backward(&tape, &field, &weights, &mut grad)?;
    let loss = |f: &MaterialField| -> f64 { encode_srgb(&tape.replay_with(f)).pixels.iter().zip(&weights.pixels).map(|(a, b)| a.dot(*b)).sum() };

    let largest = grad.values.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let live: Vec<usize> = (0..grad.len()).filter(|&i| grad.values[i].abs() >= 1e-3 * largest).collect();
    println!("{} parameters, {} with a gradient above 1e-3 of the largest", grad.len(), live.len());
    println!("{:>8}  {:>13}  {:>13}  {:>9}", "param", "analytic", "central diff", "rel err");
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let i = live[r.random_range(0..live.len())];
        let orig = field.params()[i];
        let (hi, lo) = (orig + 1e-3, orig - 1e-3);
        field.set_param(i, hi);
        let up = loss(&field);
        field.set_param(i, lo);
        let down = loss(&field);
        field.set_param(i, orig);
        let fd = (up - down) / (hi as f64 - lo as f64);
        let rel = (grad.values[i] - fd).abs() / grad.values[i].abs().max(fd.abs());
        worst = worst.max(rel);
        println!("{i:>8}  {:>13.6e}  {fd:>13.6e}  {rel:>9.2e}", grad.values[i]);
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
