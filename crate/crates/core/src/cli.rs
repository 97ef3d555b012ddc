//! Command-line front end. Each subcommand wraps one library module and
//! echoes its resolved arguments to `run_config.json` in the output directory.
//!
//! Exit codes: 0 success, 1 runtime failure (a JSON object with `error` and
//! `message` is printed to stderr), 2 usage error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::anatomy::LandmarkSchema;
use crate::conformance::{check_protocol_vector, describe_response, protocol_vectors, ProtocolVector};
use crate::datasetgen::{
    build_phantom_dataset, nearest_k, read_manifest, DatasetConfig, DatasetError, SplitAssignment,
};
use crate::gateway::{GatewayError, RemoteAgent};
use crate::geometry::{sample_isocenters_with_diagnostics, CArmGeometry, CArmPose, GeometryError, SamplerConfig};
use crate::metrics::{read_predictions, score_corpus, summarize_navigation, write_report, MetricsError};
use crate::navloop::{
    random_episodes, run_episode_with_images, write_trace, Agent, Environment, EpisodeConfig, EpisodeTrace, NavError,
    OracleAgent, Start, ZeroMoveAgent,
};
use crate::phantom::{generate_phantom, load_volume, save_volume, LandmarkSet, PhantomConfig, PhantomError, Volume};
use crate::projector::{Projector, ProjectorConfig, ProjectorError};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser, Serialize)]
#[command(name = "carmsim", version, about = "Deterministic C-arm imaging and navigation simulator")]
pub struct Cli {
    /// Root seed; required by every command that generates data.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a procedural phantom volume and its landmarks.
    GenPhantom(PhantomArgs),
    /// Draw isocenters with the training-set sampler.
    Sample(SampleArgs),
    /// Render one radiograph.
    Render(RenderArgs),
    /// Build train/test manifests and images from procedural phantoms.
    BuildDataset(DatasetArgs),
    /// Run navigation episodes.
    Navigate(NavigateArgs),
    /// Score predictions against a manifest.
    Evaluate(EvaluateArgs),
    /// Run the protocol conformance vectors and optionally parse a response file.
    ProtocolCheck(ProtocolCheckArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PhantomArgs {
    /// Voxel size in mm.
    #[arg(long, default_value_t = 4.0)]
    pub spacing: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VolumeArgs {
    /// Directory written by `gen-phantom`; otherwise a phantom is generated from the seed.
    #[arg(long)]
    pub phantom_dir: Option<PathBuf>,
    /// Voxel size in mm for a generated phantom.
    #[arg(long, default_value_t = 4.0)]
    pub spacing: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    #[command(flatten)]
    pub volume: VolumeArgs,
    /// Number of isocenters.
    #[arg(long, short = 'n', default_value_t = 1024)]
    pub count: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RenderArgs {
    #[command(flatten)]
    pub volume: VolumeArgs,
    /// Isocenter as `x,y,z` in mm.
    #[arg(long, value_parser = parse_point, conflicts_with = "landmark")]
    pub iso: Option<[f64; 3]>,
    /// Centre on a landmark (`skull`, `right_scapula`, `4`, ...). Default: volume centre.
    #[arg(long)]
    pub landmark: Option<String>,
    /// Detector resolution in pixels.
    #[arg(long, default_value_t = 256)]
    pub resolution: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DatasetArgs {
    /// Total number of phantom volumes.
    #[arg(long)]
    pub volumes: usize,
    /// Volumes held out for testing (default: one in six, at least one).
    #[arg(long)]
    pub test_volumes: Option<usize>,
    #[arg(long, default_value_t = 1024)]
    pub per_volume: usize,
    #[arg(long, default_value_t = 4.0)]
    pub spacing: f64,
    /// Detector resolution in pixels.
    #[arg(long, default_value_t = 256)]
    pub resolution: usize,
    /// Write manifests only.
    #[arg(long)]
    pub no_images: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    /// Scripted policy with ground-truth access.
    Oracle,
    /// Never moves.
    Zero,
    /// Child process speaking frames on stdin/stdout (command after `--`).
    Subprocess,
    /// Frames over TCP (`--connect host:port`).
    Tcp,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NavigateArgs {
    #[command(flatten)]
    pub volume: VolumeArgs,
    #[arg(long, value_enum, default_value_t = AgentKind::Oracle)]
    pub agent: AgentKind,
    /// Start landmark.
    #[arg(long, required_unless_present = "episodes")]
    pub start: Option<String>,
    /// Target landmark.
    #[arg(long, required_unless_present = "episodes")]
    pub target: Option<String>,
    /// Run this many episodes with sampled starts and random targets instead.
    #[arg(long, conflicts_with_all = ["start", "target"])]
    pub episodes: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 25.0)]
    pub success_radius: f64,
    /// Detector resolution in pixels.
    #[arg(long, default_value_t = 256)]
    pub resolution: usize,
    /// Address for `--agent tcp`.
    #[arg(long)]
    pub connect: Option<String>,
    /// Seconds to wait for each reply.
    #[arg(long, default_value_t = 120.0)]
    pub timeout: f64,
    /// Agent command for `--agent subprocess`.
    #[arg(last = true)]
    pub agent_cmd: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Cut-offs, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub k: Vec<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProtocolCheckArgs {
    /// Response text to parse.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Vector file to use instead of the built-in one.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> =
        s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|p| format!("expected three coordinates, got {}", p.len()))
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Projector(#[from] ProjectorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Navigation(#[from] NavError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Check(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Phantom(_) => "phantom",
            Self::Geometry(_) => "geometry",
            Self::Projector(_) => "projector",
            Self::Dataset(_) => "dataset",
            Self::Navigation(_) => "navigation",
            Self::Gateway(_) => "gateway",
            Self::Metrics(MetricsError::Alignment { .. }) => "alignment",
            Self::Metrics(_) => "metrics",
            Self::Io { .. } => "io",
            Self::Check(_) => "conformance",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let report = serde_json::json!({ "error": e.category(), "message": e.to_string() });
            eprintln!("{report}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = &cli.out;
    match &cli.command {
        Command::GenPhantom(a) => gen_phantom(cli, a, out),
        Command::Sample(a) => sample(cli, a, out),
        Command::Render(a) => render(cli, a, out),
        Command::BuildDataset(a) => build_dataset(cli, a, out),
        Command::Navigate(a) => navigate(cli, a, out),
        Command::Evaluate(a) => evaluate(cli, a, out),
        Command::ProtocolCheck(a) => protocol_check(cli, a, out),
    }
}

fn require_seed(cli: &Cli) -> Result<u64, CliError> {
    cli.seed.ok_or_else(|| CliError::Usage("this command needs --seed".into()))
}

fn prepare_out(cli: &Cli, out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let config = serde_json::json!({
        "tool": "carmsim",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cli.seed,
        "threads": cli.threads,
        "command": &cli.command,
    });
    write_json(&out.join("run_config.json"), &config)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("values serialize") + "\n";
    fs::write(path, text).map_err(io_err(path))
}

fn phantom_config(spacing: f64) -> PhantomConfig {
    PhantomConfig { spacing_mm: spacing, ..PhantomConfig::default() }
}

fn load_world(cli: &Cli, v: &VolumeArgs) -> Result<(Volume, LandmarkSet), CliError> {
    match &v.phantom_dir {
        Some(dir) => {
            let volume = load_volume(&dir.join("volume.json"), &dir.join("volume.raw"))?;
            let landmarks = LandmarkSet::load(&dir.join("landmarks.json"))?;
            Ok((volume, landmarks))
        }
        None => Ok(generate_phantom(require_seed(cli)?, &phantom_config(v.spacing))?),
    }
}

fn resolve_landmark(schema: &LandmarkSchema, key: &str) -> Result<u8, CliError> {
    schema.resolve_key(key).ok_or_else(|| CliError::Usage(format!("unknown landmark {key:?}")))
}

fn geometry(resolution: usize) -> CArmGeometry {
    CArmGeometry { detector_res: [resolution, resolution], ..CArmGeometry::default() }
}

fn gen_phantom(cli: &Cli, a: &PhantomArgs, out: &Path) -> Result<(), CliError> {
    let seed = require_seed(cli)?;
    prepare_out(cli, out)?;
    let (volume, landmarks) = generate_phantom(seed, &phantom_config(a.spacing))?;
    save_volume(&volume, &out.join("volume.json"), &out.join("volume.raw"))?;
    landmarks.save(&out.join("landmarks.json"))?;
    println!("{}", serde_json::json!({ "dims": volume.dims(), "landmarks": landmarks.as_slice().len() }));
    Ok(())
}

#[derive(Serialize)]
struct PoseLine {
    sample_id: usize,
    isocenter_mm: [f64; 3],
    nearest: Vec<u8>,
}

fn sample(cli: &Cli, a: &SampleArgs, out: &Path) -> Result<(), CliError> {
    let seed = require_seed(cli)?;
    let (volume, landmarks) = load_world(cli, &a.volume)?;
    prepare_out(cli, out)?;
    let config = SamplerConfig { seed, ..SamplerConfig::default() };
    let (poses, diag) = sample_isocenters_with_diagnostics(&volume, a.count, &config, &CArmGeometry::default())?;
    let mut text = String::new();
    for (i, p) in poses.iter().enumerate() {
        let line = PoseLine {
            sample_id: i,
            isocenter_mm: [p.isocenter.x, p.isocenter.y, p.isocenter.z],
            nearest: nearest_k(p, &landmarks, 3).indices(),
        };
        text.push_str(&serde_json::to_string(&line).expect("pose serializes"));
        text.push('\n');
    }
    let path = out.join("poses.jsonl");
    fs::write(&path, text).map_err(io_err(&path))?;
    let summary = serde_json::json!({
        "count": poses.len(),
        "si_band_mm": diag.si_band,
        "lr_raw_sd_mm": diag.lr_raw.std_dev(),
        "ap_raw_sd_mm": diag.ap_raw.std_dev(),
        "lr_rejected": diag.lr_rejected,
        "ap_rejected": diag.ap_rejected,
    });
    write_json(&out.join("sampler_diagnostics.json"), &summary)?;
    println!("{summary}");
    Ok(())
}

fn render(cli: &Cli, a: &RenderArgs, out: &Path) -> Result<(), CliError> {
    let (volume, landmarks) = load_world(cli, &a.volume)?;
    let schema = LandmarkSchema::standard();
    let iso = match (&a.iso, &a.landmark) {
        (Some(p), _) => nalgebra::Point3::new(p[0], p[1], p[2]),
        (None, Some(key)) => {
            let i = resolve_landmark(&schema, key)?;
            landmarks.get(i).expect("schema index exists in landmark set").position
        }
        (None, None) => volume.center(),
    };
    prepare_out(cli, out)?;
    let pose = CArmPose::new(iso, geometry(a.resolution))?;
    let image = Projector::new(ProjectorConfig::default())?.render(&volume, &pose)?;
    image.save_png(&out.join("view.png"))?;
    let path = out.join("view.f32");
    fs::write(&path, image.to_raw_le()).map_err(io_err(&path))?;
    Ok(())
}

fn build_dataset(cli: &Cli, a: &DatasetArgs, out: &Path) -> Result<(), CliError> {
    let seed = require_seed(cli)?;
    if a.volumes < 2 {
        return Err(CliError::Usage("--volumes must be at least 2 so both splits are populated".into()));
    }
    let test = a.test_volumes.unwrap_or((a.volumes / 6).max(1));
    if test == 0 || test >= a.volumes {
        return Err(CliError::Usage(format!("--test-volumes must be between 1 and {}", a.volumes - 1)));
    }
    prepare_out(cli, out)?;
    let split = SplitAssignment::phantoms(a.volumes - test, test);
    let config = DatasetConfig {
        per_volume: a.per_volume,
        seed,
        geometry: geometry(a.resolution),
        write_images: !a.no_images,
        ..DatasetConfig::default()
    };
    write_json(&out.join("split.json"), &split)?;
    let summary = build_phantom_dataset(&split, &config, &phantom_config(a.spacing), out)?;
    println!("{}", serde_json::json!({ "train": summary.train_records, "test": summary.test_records }));
    Ok(())
}

fn navigate(cli: &Cli, a: &NavigateArgs, out: &Path) -> Result<(), CliError> {
    let schema = LandmarkSchema::standard();
    let (volume, landmarks) = load_world(cli, &a.volume)?;
    let geometry = geometry(a.resolution);
    let mut configs = match a.episodes {
        Some(n) => random_episodes(require_seed(cli)?, n, &volume, &landmarks, geometry)?,
        None => {
            let (s, t) = (a.start.as_deref().unwrap_or_default(), a.target.as_deref().unwrap_or_default());
            let start = resolve_landmark(&schema, s)?;
            let target = resolve_landmark(&schema, t)?;
            let id = format!("{}-to-{}", schema.get(start).unwrap().key(), schema.get(target).unwrap().key());
            let mut c = EpisodeConfig::new(id, Start::Landmark(start), target);
            c.geometry = geometry;
            vec![c]
        }
    };
    for c in &mut configs {
        c.max_steps = a.max_steps;
        c.success_radius_mm = a.success_radius;
        c.seed = cli.seed.unwrap_or_default();
    }
    if matches!(a.agent, AgentKind::Subprocess) && a.agent_cmd.is_empty() {
        return Err(CliError::Usage("--agent subprocess needs a command after `--`".into()));
    }
    if matches!(a.agent, AgentKind::Tcp) && a.connect.is_none() {
        return Err(CliError::Usage("--agent tcp needs --connect host:port".into()));
    }
    if !(a.timeout.is_finite() && a.timeout > 0.0) {
        return Err(CliError::Usage("--timeout must be positive".into()));
    }
    prepare_out(cli, out)?;
    let trace_dir = out.join("traces");
    fs::create_dir_all(&trace_dir).map_err(io_err(&trace_dir))?;
    let env = Environment { volume: &volume, landmarks: &landmarks, schema: &schema };
    let timeout = Duration::from_secs_f64(a.timeout);

    let run_all = |agent: &mut dyn Agent| -> Result<Vec<EpisodeTrace>, CliError> {
        configs.iter().map(|c| Ok(run_episode_with_images(env, agent, c.clone(), &trace_dir)?)).collect()
    };
    let traces: Vec<EpisodeTrace> = match a.agent {
        AgentKind::Oracle => configs
            .par_iter()
            .map(|c| Ok(run_episode_with_images(env, &mut OracleAgent, c.clone(), &trace_dir)?))
            .collect::<Result<_, CliError>>()?,
        AgentKind::Zero => configs
            .par_iter()
            .map(|c| Ok(run_episode_with_images(env, &mut ZeroMoveAgent, c.clone(), &trace_dir)?))
            .collect::<Result<_, CliError>>()?,
        AgentKind::Subprocess => run_all(&mut RemoteAgent::spawn(&a.agent_cmd, timeout)?)?,
        AgentKind::Tcp => run_all(&mut RemoteAgent::connect_tcp(a.connect.as_deref().unwrap_or_default(), timeout)?)?,
    };
    for t in &traces {
        write_trace(&trace_dir.join(format!("{}.jsonl", t.config.episode_id)), t)?;
    }
    let summary = summarize_navigation(&traces)?;
    write_json(&out.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
    Ok(())
}

fn evaluate(cli: &Cli, a: &EvaluateArgs, out: &Path) -> Result<(), CliError> {
    let manifest = read_manifest(&a.manifest)?;
    let predictions = read_predictions(&a.predictions)?;
    let score = score_corpus(&manifest, &predictions, &a.k)?;
    prepare_out(cli, out)?;
    write_report(&score, out)?;
    println!("{}", serde_json::to_string_pretty(&score.report()).expect("report serializes"));
    Ok(())
}

fn protocol_check(cli: &Cli, a: &ProtocolCheckArgs, out: &Path) -> Result<(), CliError> {
    let vectors: Vec<ProtocolVector> = match &a.vectors {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            #[derive(serde::Deserialize)]
            struct File {
                vectors: Vec<ProtocolVector>,
            }
            serde_json::from_str::<File>(&text)
                .map_err(|e| CliError::Check(format!("{}: {e}", path.display())))?
                .vectors
        }
        None => protocol_vectors(),
    };
    let failures: Vec<String> = vectors.iter().filter_map(|v| check_protocol_vector(v).err()).collect();
    let input = match &a.input {
        Some(path) => {
            let bytes = fs::read(path).map_err(io_err(path))?;
            Some(describe_response(&String::from_utf8_lossy(&bytes)))
        }
        None => None,
    };
    let report = serde_json::json!({
        "vectors": vectors.len(),
        "failures": failures,
        "input": input,
    });
    prepare_out(cli, out)?;
    write_json(&out.join("protocol_check.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if !failures.is_empty() {
        return Err(CliError::Check(format!("{} conformance vector(s) failed", failures.len())));
    }
    if let Some(crate::conformance::ProtocolExpectation::Rejected { error, offset }) = input {
        return Err(CliError::Check(format!("input rejected: {error} at byte {offset}")));
    }
    Ok(())
}
