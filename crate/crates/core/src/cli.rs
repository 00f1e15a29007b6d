//! The `matforge` command line.
//!
//! Exit codes: 0 on success, 2 for invalid arguments (with usage on standard
//! error), 1 for runtime failures. Logs go to standard error; machine output
//! goes to files only.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::condition::{precompute_conditions, ConditionConfig, ConditionManifest};
use crate::distill::{run_distillation, FIELD_PADDING, DistillConfig, DistillContext, HttpProvider, SyntheticOracle};
use crate::field::{write_atomic, FieldConfig, MaterialField};
use crate::material::{MaterialModel, MaterialSample};
use crate::recovery::{evaluate_recovery, RecoveryScenario};
use crate::render::{encode_srgb, render_image, RenderConfig};
use crate::scene::{load_obj, sample_camera_poses, Camera, EnvironmentMap, Scene};
use crate::texture::{bake_maps, write_outputs, BakedMaps, TextureMap};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
/// Height of environment maps created from `preset:<i>` labels.
pub const PRESET_ENV_HEIGHT: usize = 64;

#[derive(Debug, Parser)]
#[command(name = "matforge", version, about = "Guidance-driven PBR material generation")]
pub struct Cli {
    /// Worker threads (defaults to MATFORGE_THREADS, then all cores).
    #[arg(long, global = true, env = "MATFORGE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Precompute light/normal/depth condition stacks for sampled views.
    Condmaps(CondmapsArgs),
    /// Render a material field to PFM and PNG.
    Render(RenderArgs),
    /// Optimize a material field with a guidance provider.
    Distill(DistillArgs),
    /// Bake a field into UV texture maps.
    Bake(BakeArgs),
    /// Compare a recovered field against a reference material.
    EvalRecovery(EvalArgs),
}

#[derive(Debug, Args)]
pub struct CondmapsArgs {
    /// Wavefront OBJ mesh.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Directory of equirectangular `.pfm` environment maps.
    #[arg(long, required_unless_present = "preset_envs", conflicts_with = "preset_envs")]
    pub env_dir: Option<PathBuf>,
    /// Use this many built-in procedural environments instead of files.
    #[arg(long)]
    pub preset_envs: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub views: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Square image size of each stack.
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value_t = 64)]
    pub spp: usize,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// A `.pfm` environment map or `preset:<i>`.
    #[arg(long)]
    pub env: String,
    /// MATF field checkpoint; a freshly initialized field when absent.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Camera as JSON; a sampled orbit pose when absent.
    #[arg(long)]
    pub camera_json: Option<PathBuf>,
    /// Output directory for `render.pfm` and `render.png`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub spp: usize,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// DistillConfig JSON; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `oracle:<field.matf>`, `oracle:checker` or `http:<url>`.
    #[arg(long)]
    pub provider: String,
    #[arg(long)]
    pub mesh: PathBuf,
    /// Directory holding the condition manifest.
    #[arg(long)]
    pub conditions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the latest checkpoint in `--out`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-request timeout of the http provider, in seconds.
    #[arg(long, default_value_t = 120)]
    pub timeout: u64,
}

#[derive(Debug, Args)]
pub struct BakeArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, default_value_t = crate::texture::DEFAULT_RESOLUTION)]
    pub res: usize,
    /// Edge-padding iterations.
    #[arg(long, default_value_t = crate::texture::DEFAULT_PADDING)]
    pub pad: usize,
    #[arg(long, default_value_t = crate::texture::DEFAULT_SUPERSAMPLE)]
    pub supersample: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the float PFM variants.
    #[arg(long)]
    pub no_pfm: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, group = "reference")]
    pub gt_field: Option<PathBuf>,
    /// Directory with albedo.pfm, roughness.pfm and metallic.pfm.
    #[arg(long, group = "reference")]
    pub gt_maps: Option<PathBuf>,
    /// The built-in checkerboard reference.
    #[arg(long, group = "reference")]
    pub gt_checker: bool,
    #[arg(long)]
    pub recovered_field: PathBuf,
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub views: usize,
    /// Environment for the PSNR renders: a `.pfm` or `preset:<i>`.
    #[arg(long, default_value = "preset:0")]
    pub env: String,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 16)]
    pub spp: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON report path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub name: String,
    pub ok: bool,
    pub ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Record of one command invocation, written atomically when it ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Hex SHA-256 of `config` serialized as compact JSON.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub total_ms: f64,
    pub stages: Vec<StageStatus>,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

struct Run {
    manifest: RunManifest,
    start: Instant,
}

impl Run {
    fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        let manifest = RunManifest {
            command: command.into(),
            config_hash: config_hash(&config),
            config,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            total_ms: 0.0,
            stages: Vec::new(),
        };
        Self { manifest, start: Instant::now() }
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        self.manifest.stages.push(StageStatus {
            name: name.into(),
            ok: out.is_ok(),
            ms: t.elapsed().as_secs_f64() * 1e3,
            error: out.as_ref().err().map(|e| format!("{e:#}")),
        });
        out
    }

    fn finish(mut self, dir: &Path) -> Result<()> {
        self.manifest.total_ms = self.start.elapsed().as_secs_f64() * 1e3;
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RUN_MANIFEST_FILE);
        write_atomic(&path, serde_json::to_string_pretty(&self.manifest)?.as_bytes())
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Condmaps(a) => condmaps(a),
        Command::Render(a) => render(a),
        Command::Distill(a) => distill(a),
        Command::Bake(a) => bake(a),
        Command::EvalRecovery(a) => eval_recovery(a),
    }
}

fn load_scene(path: &Path) -> Result<Scene> {
    let mesh = load_obj(path).with_context(|| format!("loading mesh {}", path.display()))?;
    Ok(Scene::new(mesh))
}

/// Loads `preset:<i>` or a PFM environment map.
pub fn load_env(label: &str) -> Result<EnvironmentMap> {
    if let Some(i) = label.strip_prefix("preset:") {
        let i: usize = i.parse().map_err(|_| anyhow!("bad preset index in {label:?}"))?;
        return Ok(EnvironmentMap::preset(i, PRESET_ENV_HEIGHT));
    }
    EnvironmentMap::read_pfm(Path::new(label)).with_context(|| format!("loading environment map {label}"))
}

fn load_field(path: &Path) -> Result<MaterialField> {
    MaterialField::load(path).with_context(|| format!("loading field {}", path.display()))
}

fn condmaps(a: &CondmapsArgs) -> Result<()> {
    let config = ConditionConfig { width: a.size, height: a.size, samples: a.spp, shadows: true, seed: a.seed };
    let mut run = Run::new("condmaps", serde_json::to_value(config)?, vec![a.seed]);
    run.manifest.inputs.push(a.mesh.clone());
    let result = (|| {
        if a.views == 0 || a.size == 0 || a.spp == 0 {
            bail!("--views, --size and --spp must be positive");
        }
        let scene = run.stage("load", || load_scene(&a.mesh))?;
        let envs = run.stage("environments", || -> Result<Vec<(String, EnvironmentMap)>> {
            match (&a.env_dir, a.preset_envs) {
                (_, Some(n)) => (0..n).map(|i| Ok((format!("preset:{i}"), load_env(&format!("preset:{i}"))?))).collect(),
                (Some(dir), None) => {
                    let mut files: Vec<PathBuf> = fs::read_dir(dir)
                        .with_context(|| format!("reading {}", dir.display()))?
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pfm")))
                        .collect();
                    files.sort();
                    if files.is_empty() {
                        bail!("no .pfm environment maps in {}", dir.display());
                    }
                    files
                        .iter()
                        .map(|p| {
                            let label = fs::canonicalize(p)?.to_string_lossy().into_owned();
                            Ok((label.clone(), load_env(&label)?))
                        })
                        .collect()
                }
                (None, None) => bail!("one of --env-dir or --preset-envs is required"),
            }
        })?;
        let cameras = sample_camera_poses(a.views, a.seed, &scene.mesh.bbox);
        let report = run.stage("precompute", || Ok(precompute_conditions(&scene, &cameras, &envs, &a.out, &config)?))?;
        log::info!(
            "{} condition stacks: {} rendered, {} skipped existing",
            report.manifest.entries.len(),
            report.rendered,
            report.skipped
        );
        run.manifest.outputs.push(a.out.join(crate::condition::MANIFEST_FILE));
        run.manifest.outputs.extend(report.manifest.entries.iter().map(|e| a.out.join(&e.file)));
        Ok(())
    })();
    run.finish(&a.out)?;
    result
}

fn render(a: &RenderArgs) -> Result<()> {
    let config = RenderConfig::new(a.size, a.size, a.spp, a.seed);
    let mut run = Run::new("render", serde_json::to_value(config)?, vec![a.seed]);
    run.manifest.inputs.push(a.mesh.clone());
    let result = (|| {
        config.validate()?;
        let scene = run.stage("load", || load_scene(&a.mesh))?;
        let env = run.stage("environment", || load_env(&a.env))?;
        let field = match &a.field {
            Some(p) => load_field(p)?,
            None => MaterialField::new(scene.mesh.bbox.padded(FIELD_PADDING), FieldConfig::default().with_seed(a.seed))?,
        };
        let camera = match &a.camera_json {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let cam: Camera = serde_json::from_str(&text).context("parsing camera JSON")?;
                cam.validate()?;
                cam
            }
            None => sample_camera_poses(1, a.seed, &scene.mesh.bbox).remove(0),
        };
        let (img, _) = run.stage("render", || Ok(render_image(&scene, &camera, &env, &field, &config)?))?;
        fs::create_dir_all(&a.out)?;
        let (pfm, png) = (a.out.join("render.pfm"), a.out.join("render.png"));
        img.rgb.write_pfm(&pfm)?;
        encode_srgb(&img).write_png(&png)?;
        log::info!("mean linear radiance {:?}", img.rgb.mean().to_array());
        run.manifest.outputs.extend([pfm, png]);
        Ok(())
    })();
    run.finish(&a.out)?;
    result
}

enum Provider {
    Oracle(SyntheticOracle),
    Http(HttpProvider),
}

fn distill(a: &DistillArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            DistillConfig::from_json(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => DistillConfig::default(),
    };
    if let Some(s) = a.steps {
        config.steps = s;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let mut run = Run::new("distill", serde_json::to_value(&config)?, vec![config.seed, config.field.seed]);
    run.manifest.inputs.extend([a.mesh.clone(), a.conditions.clone()]);
    let result = (|| {
        config.validate()?;
        let scene = run.stage("load", || load_scene(&a.mesh))?;
        let manifest = ConditionManifest::read(&a.conditions).context("reading condition manifest")?;
        if (manifest.width, manifest.height) != (config.width, config.height) {
            bail!(
                "condition stacks are {}x{} but the config renders {}x{}",
                manifest.width,
                manifest.height,
                config.width,
                config.height
            );
        }
        let envs: Vec<EnvironmentMap> = manifest.envs.iter().map(|l| load_env(l)).collect::<Result<_>>()?;
        let provider = run.stage("provider", || -> Result<Provider> {
            if let Some(url) = a.provider.strip_prefix("http:") {
                return Ok(Provider::Http(HttpProvider::new(url, Duration::from_secs(a.timeout))));
            }
            let Some(target) = a.provider.strip_prefix("oracle:") else {
                bail!("--provider must be oracle:<path>, oracle:checker or http:<url>");
            };
            let cfg = RenderConfig::new(config.width, config.height, config.samples * 4, config.seed ^ 0x7461_7267);
            let oracle = if target == "checker" {
                SyntheticOracle::render_targets(&scene, &manifest, &envs, &RecoveryScenario::default().ground_truth, &cfg)?
            } else {
                let gt = load_field(Path::new(target))?;
                SyntheticOracle::render_targets(&scene, &manifest, &envs, &gt, &cfg)?
            };
            Ok(Provider::Oracle(oracle))
        })?;
        let ctx = DistillContext { scene: &scene, envs: &envs, manifest: &manifest, condition_dir: &a.conditions };
        let outcome = run.stage("distill", || {
            Ok(match &provider {
                Provider::Oracle(p) => run_distillation(&config, &ctx, p, Some(&a.out), a.resume)?,
                Provider::Http(p) => run_distillation(&config, &ctx, p, Some(&a.out), a.resume)?,
            })
        })?;
        if let Some(s) = outcome.resumed_from {
            log::info!("resumed from step {s}");
        }
        let tail = &outcome.metrics[outcome.metrics.len().saturating_sub(50)..];
        let mean = |f: fn(&crate::distill::StepMetrics) -> f64| tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64;
        eprintln!(
            "distilled {} steps; last {} steps: mean |delta| {:.4e}, mean smoothness loss {:.4e}",
            outcome.metrics.len(),
            tail.len(),
            mean(|m| m.delta_abs_mean),
            mean(|m| m.smooth_loss)
        );
        run.manifest.outputs.extend([
            a.out.join(crate::distill::FIELD_FILE),
            a.out.join(crate::distill::METRICS_FILE),
            a.out.join(crate::distill::CHECKPOINT_DIR),
        ]);
        Ok(())
    })();
    run.finish(&a.out)?;
    result
}

fn bake(a: &BakeArgs) -> Result<()> {
    let config = serde_json::json!({ "res": a.res, "pad": a.pad, "supersample": a.supersample, "pfm": !a.no_pfm });
    let mut run = Run::new("bake", config, Vec::new());
    run.manifest.inputs.extend([a.mesh.clone(), a.field.clone()]);
    let result = (|| {
        let scene = run.stage("load", || load_scene(&a.mesh))?;
        let field = load_field(&a.field)?;
        let maps = run.stage("bake", || Ok(bake_maps(&field, &scene.mesh, a.res, a.supersample)?))?;
        log::info!("{} of {} texels covered", maps.albedo.covered(), a.res * a.res);
        let padded = run.stage("pad", || Ok(maps.padded(a.pad)))?;
        let files = run.stage("write", || Ok(write_outputs(&padded, &a.out, !a.no_pfm)?))?;
        run.manifest.outputs.extend(files);
        Ok(())
    })();
    run.finish(&a.out)?;
    result
}

enum Reference {
    Field(MaterialField),
    Maps(crate::material::UvMaps),
    Checker(crate::material::Checkerboard),
}

impl MaterialModel for Reference {
    fn material_at(&self, hit: &crate::scene::Hit) -> MaterialSample {
        match self {
            Reference::Field(f) => f.material_at(hit),
            Reference::Maps(m) => m.material_at(hit),
            Reference::Checker(c) => c.material_at(hit),
        }
    }
}

fn eval_recovery(a: &EvalArgs) -> Result<()> {
    let config = RenderConfig::new(a.size, a.size, a.spp, a.seed);
    let settings = serde_json::json!({ "render": config, "views": a.views, "env": a.env });
    let mut run = Run::new("eval-recovery", settings, vec![a.seed]);
    run.manifest.inputs.extend([a.mesh.clone(), a.recovered_field.clone()]);
    let out_dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let result = (|| {
        let scene = run.stage("load", || load_scene(&a.mesh))?;
        let recovered = load_field(&a.recovered_field)?;
        let reference = match (&a.gt_field, &a.gt_maps, a.gt_checker) {
            (Some(p), _, _) => Reference::Field(load_field(p)?),
            (_, Some(dir), _) => {
                if !scene.mesh.has_uvs() {
                    bail!("--gt-maps needs a mesh with UV coordinates");
                }
                let read = |name: &str| -> Result<TextureMap> {
                    let path = dir.join(format!("{name}.pfm"));
                    let pfm = crate::image::Pfm::read(&path).with_context(|| format!("reading {}", path.display()))?;
                    Ok(TextureMap::from_pfm(&pfm)?)
                };
                let maps = BakedMaps { albedo: read("albedo")?, roughness: read("roughness")?, metallic: read("metallic")?, overlaps: 0 };
                if maps.albedo.channels != 3 || maps.roughness.channels != 1 || maps.metallic.channels != 1 {
                    bail!("reference maps have unexpected channel counts");
                }
                Reference::Maps(maps.to_uv_maps())
            }
            (_, _, true) => Reference::Checker(RecoveryScenario::default().ground_truth),
            _ => bail!("one of --gt-field, --gt-maps or --gt-checker is required"),
        };
        let expected = scene.mesh.bbox.padded(FIELD_PADDING);
        let fits = |f: &MaterialField| {
            let b = f.bbox();
            (b.min - expected.min).abs().max_element() < 1e-9 && (b.max - expected.max).abs().max_element() < 1e-9
        };
        if !fits(&recovered) || matches!(&reference, Reference::Field(f) if !fits(f)) {
            bail!("mismatched meshes: a field was not built for {}", a.mesh.display());
        }
        let env = load_env(&a.env)?;
        let cameras = sample_camera_poses(a.views, a.seed, &scene.mesh.bbox);
        let report = run.stage("evaluate", || Ok(evaluate_recovery(&scene, &cameras, &env, &reference, &recovered, &config)?))?;
        if !out_dir.as_os_str().is_empty() {
            fs::create_dir_all(&out_dir)?;
        }
        write_atomic(&a.out, serde_json::to_string_pretty(&report)?.as_bytes())
            .with_context(|| format!("writing {}", a.out.display()))?;
        log::info!(
            "albedo L1 {:.4}, roughness L1 {:.4}, metallic L1 {:.4}, PSNR {:.2} dB",
            report.albedo_l1,
            report.roughness_l1,
            report.metallic_l1,
            report.psnr
        );
        run.manifest.outputs.push(a.out.clone());
        Ok(())
    })();
    run.finish(if out_dir.as_os_str().is_empty() { Path::new(".") } else { &out_dir })?;
    result
}
