//! Talks to a guidance service over HTTP. Without an argument a local
//! conformance stub is started; pass a base URL to use a real service.
//!
//! cargo run --release --example http_guidance -- [http://host:port]

use std::time::Duration;

use glam::DVec3;
use matforge::condition::{precompute_conditions, ConditionConfig};
use matforge::distill::http::{decode_f32, WireRequest};
use matforge::distill::stub::StubServer;
use matforge::distill::{run_distillation, DistillConfig, DistillContext, GuidanceRequest, HttpProvider, PromptSlot};
use matforge::scene::sample_camera_poses;
use matforge::{ConditionStack, EnvironmentMap, FieldConfig, RgbImage, Scene, TriangleMesh};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let stub = match std::env::args().nth(1) {
        Some(_) => None,
        None => Some(StubServer::spawn("127.0.0.1:0", true)?),
    };
    let url = std::env::args().nth(1).unwrap_or_else(|| stub.as_ref().map(StubServer::url).unwrap_or_default());
    let provider = HttpProvider::new(&url, Duration::from_secs(120));
    let health = provider.wait_ready(Duration::from_secs(30))?;
    println!("{url}: model {}", health.model_id);

    let size = 16;
    let noisy = RgbImage::filled(size, size, DVec3::splat(0.5));
    let condition = ConditionStack::new(size, size, vec![0.0; size * size * 22])?;
    let request = GuidanceRequest {
        noisy: &noisy,
        clean: &noisy,
        t: 500,
        alpha_bar: 0.28,
        slot: PromptSlot::Positive,
        prompt: "weathered bronze",
        negative_prompt: "",
        condition: &condition,
        control_scale: 1.0,
        view: 0,
        env: 0,
    };
    let wire = WireRequest::from_request(&request);
    println!("request: {} bytes of JSON", serde_json::to_string(&wire)?.len());
    let reply = provider.predict(&wire)?;
    let eps = decode_f32(&reply.noise).map_err(anyhow::Error::msg)?;
    let mean = eps.iter().map(|v| *v as f64).sum::<f64>() / eps.len() as f64;
    println!("reply from {} in {:.1} ms: {} noise values, mean {mean:.4}", reply.model_id, reply.latency_ms, eps.len());

    let scene = Scene::new(TriangleMesh::uv_sphere(DVec3::ZERO, 1.0, 24, 12));
    let cameras = sample_camera_poses(2, 4, &scene.mesh.bbox);
    let labeled = vec![("preset:1".to_string(), EnvironmentMap::preset(1, 16))];
    let envs = vec![labeled[0].1.clone()];
    let dir = tempfile::tempdir()?;
    let cond = ConditionConfig { width: size, height: size, samples: 2, shadows: true, seed: 0 };
    let manifest = precompute_conditions(&scene, &cameras, &labeled, dir.path(), &cond)?.manifest;
    let config = DistillConfig {
        steps: 20,
        width: size,
        height: size,
        samples: 4,
        prompt: "weathered bronze".into(),
        field: FieldConfig::compact(),
        ..DistillConfig::default()
    };
    let ctx = DistillContext { scene: &scene, envs: &envs, manifest: &manifest, condition_dir: dir.path() };
    let outcome = run_distillation(&config, &ctx, &provider, None, false)?;
    let last = outcome.metrics.last().expect("at least one step");
    println!("{} steps, last step t {} mean |delta| {:.4}", outcome.metrics.len(), last.t, last.delta_abs_mean);
    if let Some(stub) = &stub {
        println!("stub served {} predictions", stub.served());
    }
    Ok(())
}
