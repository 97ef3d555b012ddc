//! Perception–action episodes: render, ask the agent, parse, move.
//!
//! Each step renders the current view, hands it with the previous parsed
//! response to the agent, parses the reply and applies its motion command.
//! Success is checked before the first action and after every move, in the
//! LR–SI plane only. A reply that fails to parse leaves the pose unchanged
//! and counts as a strike; three consecutive strikes end the episode.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anatomy::LandmarkSchema;
use crate::geometry::{
    apply_action, magnitude_mm, sample_isocenters, Aabb, CArmGeometry, CArmPose, GeometryError, SamplerConfig,
};
use crate::phantom::{LandmarkSet, Volume};
use crate::projector::{Projector, ProjectorConfig, ProjectorError, RadiographImage};
use crate::protocol::{
    parse_with_schema, serialize, AgentResponse, HorizontalDirection, Magnitude, MotionCommand, ParseError,
    ParseWarning, VerticalDirection,
};
use crate::rng::{derive_seed, stream_rng, Stream};

/// Consecutive parse failures tolerated before the episode is abandoned.
pub const MAX_STRIKES: usize = 3;

#[derive(Debug, Error)]
pub enum NavError {
    #[error("invalid episode configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Projector(#[from] ProjectorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Trace { path: PathBuf, line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NavError + '_ {
    move |source| NavError::Io { path: path.to_path_buf(), source }
}

/// Where an episode begins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Landmark(u8),
    Isocenter([f64; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub episode_id: String,
    pub start: Start,
    /// Target landmark index.
    pub target: u8,
    pub max_steps: usize,
    pub success_radius_mm: f64,
    pub seed: u64,
    pub geometry: CArmGeometry,
    pub projector: ProjectorConfig,
    pub prompt_template_id: String,
}

impl EpisodeConfig {
    pub fn new(episode_id: impl Into<String>, start: Start, target: u8) -> Self {
        Self {
            episode_id: episode_id.into(),
            start,
            target,
            max_steps: 20,
            success_radius_mm: 25.0,
            seed: 0,
            geometry: CArmGeometry::default(),
            projector: ProjectorConfig::default(),
            prompt_template_id: "navigate-v1".into(),
        }
    }

    pub fn validate(&self) -> Result<(), NavError> {
        if self.max_steps == 0 {
            return Err(NavError::Config("max_steps must be at least 1".into()));
        }
        if !(self.success_radius_mm.is_finite() && self.success_radius_mm > 0.0) {
            return Err(NavError::Config(format!("success_radius_mm {} must be positive", self.success_radius_mm)));
        }
        if self.episode_id.is_empty() || self.episode_id.contains(['/', '\\']) || self.episode_id.starts_with('.') {
            return Err(NavError::Config(format!("episode_id {:?} is not a plain name", self.episode_id)));
        }
        self.geometry.validate()?;
        self.projector.validate()?;
        Ok(())
    }
}

/// Volume, landmarks and the name table an episode runs against.
#[derive(Debug, Clone, Copy)]
pub struct Environment<'a> {
    pub volume: &'a Volume,
    pub landmarks: &'a LandmarkSet,
    pub schema: &'a LandmarkSchema,
}

/// Simulator state an oracle may consult. Never sent to remote agents.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth<'a> {
    pub pose: CArmPose,
    pub target: Point3<f64>,
    pub landmarks: &'a LandmarkSet,
}

/// Everything an agent sees for one step.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub episode_id: &'a str,
    pub step: usize,
    pub image: &'a RadiographImage,
    /// Canonical text of the last successfully parsed response; `None` before the first.
    pub prior_response: Option<&'a str>,
    pub feedback: Option<&'a str>,
    pub prompt_template_id: &'a str,
    pub truth: GroundTruth<'a>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentFailure {
    /// The transport is gone; the episode ends with `AGENT_ERROR`.
    #[error("agent transport failed: {0}")]
    Fatal(String),
    /// The agent reported a problem for this step only; counts as a strike.
    #[error("agent reported an error: {0}")]
    Recoverable(String),
}

pub trait Agent {
    fn respond(&mut self, obs: &Observation<'_>) -> Result<String, AgentFailure>;
}

impl<A: Agent + ?Sized> Agent for &mut A {
    fn respond(&mut self, obs: &Observation<'_>) -> Result<String, AgentFailure> {
        (**self).respond(obs)
    }
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn respond(&mut self, obs: &Observation<'_>) -> Result<String, AgentFailure> {
        (**self).respond(obs)
    }
}

// ---------------------------------------------------------------------------
// Oracle policy
// ---------------------------------------------------------------------------

/// Magnitude closest to `|residual|`, the smaller one on ties.
pub fn nearest_magnitude(residual: f64) -> Magnitude {
    let r = residual.abs();
    let mut best = Magnitude::None;
    for m in Magnitude::ALL {
        if (r - magnitude_mm(m)).abs() < (r - magnitude_mm(best)).abs() {
            best = m;
        }
    }
    best
}

/// Per-axis command toward a residual of `(lr, si)` mm.
pub fn oracle_command(lr: f64, si: f64) -> MotionCommand {
    let x_mag = nearest_magnitude(lr);
    let y_mag = nearest_magnitude(si);
    MotionCommand {
        x_dir: match x_mag {
            Magnitude::None => HorizontalDirection::Center,
            _ if lr > 0.0 => HorizontalDirection::Right,
            _ => HorizontalDirection::Left,
        },
        x_mag,
        y_dir: match y_mag {
            Magnitude::None => VerticalDirection::Center,
            _ if si > 0.0 => VerticalDirection::Up,
            _ => VerticalDirection::Down,
        },
        y_mag,
    }
}

/// Oracle reply for an isocenter at `pose` aiming for `target`.
pub fn oracle_response(pose: &Point3<f64>, target: &Point3<f64>, landmarks: &LandmarkSet) -> AgentResponse {
    let lr = target.x - pose.x;
    let si = target.z - pose.z;
    let nearest = landmarks
        .iter()
        .min_by(|a, b| (a.position - pose).norm().total_cmp(&(b.position - pose).norm()).then(a.index.cmp(&b.index)))
        .expect("landmark set is never empty");
    AgentResponse {
        landmark_index: nearest.index,
        landmark_name: nearest.canonical_name.clone(),
        reasoning: format!("residual LR {lr:+.1} mm, SI {si:+.1} mm"),
        command: oracle_command(lr, si),
    }
}

/// Scripted policy with access to the true pose and target.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleAgent;

impl Agent for OracleAgent {
    fn respond(&mut self, obs: &Observation<'_>) -> Result<String, AgentFailure> {
        let t = obs.truth;
        Ok(serialize(&oracle_response(&t.pose.isocenter, &t.target, t.landmarks)))
    }
}

/// Always stays put, reporting the true nearest landmark.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroMoveAgent;

impl Agent for ZeroMoveAgent {
    fn respond(&mut self, obs: &Observation<'_>) -> Result<String, AgentFailure> {
        let t = obs.truth;
        let mut r = oracle_response(&t.pose.isocenter, &t.target, t.landmarks);
        r.command = MotionCommand::zero();
        r.reasoning = "hold".into();
        Ok(serialize(&r))
    }
}

/// Replies `first` until feedback arrives, then `revised`.
#[derive(Debug, Clone)]
pub struct ReconsiderAgent {
    pub first: AgentResponse,
    pub revised: AgentResponse,
}

impl Agent for ReconsiderAgent {
    fn respond(&mut self, obs: &Observation<'_>) -> Result<String, AgentFailure> {
        Ok(serialize(if obs.feedback.is_some() { &self.revised } else { &self.first }))
    }
}

/// Replays fixed replies in order, then repeats the last.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    replies: Vec<Result<String, AgentFailure>>,
    next: usize,
}

impl ScriptedAgent {
    pub fn new(replies: Vec<Result<String, AgentFailure>>) -> Self {
        assert!(!replies.is_empty(), "script needs at least one reply");
        Self { replies, next: 0 }
    }
}

impl Agent for ScriptedAgent {
    fn respond(&mut self, _: &Observation<'_>) -> Result<String, AgentFailure> {
        let r = self.replies[self.next.min(self.replies.len() - 1)].clone();
        self.next += 1;
        r
    }
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Success,
    MaxSteps,
    AgentError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub step: usize,
    pub pose_before: [f64; 3],
    /// Rendered view, relative to the trace file.
    pub image_ref: String,
    pub prior_response: Option<String>,
    pub feedback: Option<String>,
    pub raw_text: Option<String>,
    pub response: Option<AgentResponse>,
    pub warnings: Vec<ParseWarning>,
    pub parse_error: Option<ParseError>,
    pub agent_error: Option<String>,
    pub pose_after: [f64; 3],
    pub distance_to_target_mm: f64,
}

impl EpisodeStep {
    /// Command actually applied: the parsed one, or no motion.
    pub fn applied_command(&self) -> MotionCommand {
        self.response.as_ref().map_or(MotionCommand::zero(), |r| r.command)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub config: EpisodeConfig,
    pub start_pose: [f64; 3],
    pub target_position: [f64; 3],
    pub region_min: [f64; 3],
    pub region_max: [f64; 3],
    pub initial_distance_mm: f64,
    pub steps: Vec<EpisodeStep>,
    pub outcome: Outcome,
    pub final_distance_mm: f64,
    pub error: Option<String>,
}

fn arr(p: &Point3<f64>) -> [f64; 3] {
    [p.x, p.y, p.z]
}

fn pt(a: [f64; 3]) -> Point3<f64> {
    Point3::new(a[0], a[1], a[2])
}

fn in_plane(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    (b.x - a.x).hypot(b.z - a.z)
}

impl EpisodeTrace {
    pub fn region(&self) -> Aabb {
        Aabb::new(pt(self.region_min), pt(self.region_max))
    }

    /// Re-apply the recorded commands from the recorded start and compare every pose exactly.
    pub fn replay(&self) -> Result<(), String> {
        let region = self.region();
        let mut pose = CArmPose { isocenter: pt(self.start_pose), geometry: self.config.geometry };
        for s in &self.steps {
            if s.pose_before != arr(&pose.isocenter) {
                return Err(format!("step {}: recorded pose_before differs from replay", s.step));
            }
            pose = apply_action(&pose, &s.applied_command(), &region);
            if s.pose_after != arr(&pose.isocenter) {
                return Err(format!("step {}: recorded pose_after differs from replay", s.step));
            }
        }
        Ok(())
    }

    /// Number of commands applied.
    pub fn moves(&self) -> usize {
        self.steps.len()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TraceLine {
    Step(EpisodeStep),
    Summary(TraceSummary),
}

#[derive(Serialize, Deserialize)]
struct TraceSummary {
    config: EpisodeConfig,
    start_pose: [f64; 3],
    target_position: [f64; 3],
    region_min: [f64; 3],
    region_max: [f64; 3],
    initial_distance_mm: f64,
    steps: usize,
    outcome: Outcome,
    final_distance_mm: f64,
    error: Option<String>,
}

/// One JSON object per step followed by a summary object.
pub fn write_trace(path: &Path, trace: &EpisodeTrace) -> Result<(), NavError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut put = |line: &TraceLine| -> Result<(), NavError> {
        let text = serde_json::to_string(line).expect("trace serializes");
        writeln!(w, "{text}").map_err(io_err(path))
    };
    for s in &trace.steps {
        put(&TraceLine::Step(s.clone()))?;
    }
    put(&TraceLine::Summary(TraceSummary {
        config: trace.config.clone(),
        start_pose: trace.start_pose,
        target_position: trace.target_position,
        region_min: trace.region_min,
        region_max: trace.region_max,
        initial_distance_mm: trace.initial_distance_mm,
        steps: trace.steps.len(),
        outcome: trace.outcome,
        final_distance_mm: trace.final_distance_mm,
        error: trace.error.clone(),
    }))?;
    w.flush().map_err(io_err(path))
}

pub fn read_trace(path: &Path) -> Result<EpisodeTrace, NavError> {
    let file = File::open(path).map_err(io_err(path))?;
    let bad = |line: usize, reason: String| NavError::Trace { path: path.to_path_buf(), line, reason };
    let mut steps = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TraceLine>(&line).map_err(|e| bad(i + 1, e.to_string()))? {
            TraceLine::Step(s) => steps.push(s),
            TraceLine::Summary(s) => {
                if s.steps != steps.len() {
                    return Err(bad(i + 1, format!("summary counts {} steps, file has {}", s.steps, steps.len())));
                }
                return Ok(EpisodeTrace {
                    config: s.config,
                    start_pose: s.start_pose,
                    target_position: s.target_position,
                    region_min: s.region_min,
                    region_max: s.region_max,
                    initial_distance_mm: s.initial_distance_mm,
                    steps,
                    outcome: s.outcome,
                    final_distance_mm: s.final_distance_mm,
                    error: s.error,
                });
            }
        }
    }
    Err(bad(0, "no summary record".into()))
}

// ---------------------------------------------------------------------------
// Episode driver
// ---------------------------------------------------------------------------

/// An episode in progress. Drive it with [`Episode::step`] or [`run_episode`].
pub struct Episode<'a> {
    env: Environment<'a>,
    config: EpisodeConfig,
    projector: Projector,
    region: Aabb,
    target: Point3<f64>,
    start: CArmPose,
    pose: CArmPose,
    prior: Option<String>,
    feedback: Option<String>,
    strikes: usize,
    steps: Vec<EpisodeStep>,
    outcome: Option<Outcome>,
    error: Option<String>,
    image_dir: Option<PathBuf>,
}

impl<'a> Episode<'a> {
    pub fn new(env: Environment<'a>, config: EpisodeConfig) -> Result<Self, NavError> {
        config.validate()?;
        let target = env
            .landmarks
            .get(config.target)
            .ok_or_else(|| NavError::Config(format!("target landmark {} does not exist", config.target)))?
            .position;
        let start = match config.start {
            Start::Landmark(i) => {
                env.landmarks
                    .get(i)
                    .ok_or_else(|| NavError::Config(format!("start landmark {i} does not exist")))?
                    .position
            }
            Start::Isocenter(p) => pt(p),
        };
        let start = CArmPose::new(start, config.geometry)?;
        start.require_inside(env.volume)?;
        let projector = Projector::new(config.projector)?;
        let done = in_plane(&start.isocenter, &target) <= config.success_radius_mm;
        Ok(Self {
            env,
            projector,
            region: env.volume.bounds(),
            target,
            start,
            pose: start,
            prior: None,
            feedback: None,
            strikes: 0,
            steps: Vec::new(),
            outcome: done.then_some(Outcome::Success),
            error: None,
            image_dir: None,
            config,
        })
    }

    /// Save each step's view as `<dir>/<episode_id>/step_NNN.png`.
    pub fn with_image_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.image_dir = Some(dir.into());
        self
    }

    pub fn pose(&self) -> &CArmPose {
        &self.pose
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn distance(&self) -> f64 {
        in_plane(&self.pose.isocenter, &self.target)
    }

    /// Queue a message for the next agent call. Repeated calls before that call are joined by newlines.
    pub fn inject_feedback(&mut self, message: impl Into<String>) {
        let message = message.into();
        self.feedback = Some(match self.feedback.take() {
            Some(prev) => format!("{prev}\n{message}"),
            None => message,
        });
    }

    /// Run one render → respond → parse → move cycle. Returns the outcome once the episode ends.
    pub fn step<A: Agent + ?Sized>(&mut self, agent: &mut A) -> Result<Option<Outcome>, NavError> {
        if self.outcome.is_some() {
            return Ok(self.outcome);
        }
        let t = self.steps.len() + 1;
        let image = self.projector.render(self.env.volume, &self.pose)?;
        let image_ref = format!("{}/step_{t:03}.png", self.config.episode_id);
        if let Some(dir) = &self.image_dir {
            let path = dir.join(&image_ref);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            image.save_png(&path)?;
        }
        let feedback = self.feedback.take();
        let reply = agent.respond(&Observation {
            episode_id: &self.config.episode_id,
            step: t,
            image: &image,
            prior_response: self.prior.as_deref(),
            feedback: feedback.as_deref(),
            prompt_template_id: &self.config.prompt_template_id,
            truth: GroundTruth { pose: self.pose, target: self.target, landmarks: self.env.landmarks },
        });
        let mut record = EpisodeStep {
            step: t,
            pose_before: arr(&self.pose.isocenter),
            image_ref,
            prior_response: self.prior.clone(),
            feedback,
            raw_text: None,
            response: None,
            warnings: Vec::new(),
            parse_error: None,
            agent_error: None,
            pose_after: arr(&self.pose.isocenter),
            distance_to_target_mm: self.distance(),
        };
        match reply {
            Err(AgentFailure::Fatal(cause)) => {
                record.agent_error = Some(cause.clone());
                self.steps.push(record);
                self.error = Some(cause);
                self.outcome = Some(Outcome::AgentError);
                return Ok(self.outcome);
            }
            Err(AgentFailure::Recoverable(cause)) => {
                record.agent_error = Some(cause);
                self.strikes += 1;
            }
            Ok(text) => {
                match parse_with_schema(&text, self.env.schema) {
                    Ok(parsed) => {
                        self.strikes = 0;
                        self.pose = apply_action(&self.pose, &parsed.response.command, &self.region);
                        self.prior = Some(serialize(&parsed.response));
                        record.response = Some(parsed.response);
                        record.warnings = parsed.warnings;
                    }
                    Err(e) => {
                        record.parse_error = Some(e);
                        self.strikes += 1;
                    }
                }
                record.raw_text = Some(text);
            }
        }
        record.pose_after = arr(&self.pose.isocenter);
        record.distance_to_target_mm = self.distance();
        self.steps.push(record);
        if self.strikes >= MAX_STRIKES {
            self.error = Some(format!("{MAX_STRIKES} consecutive unusable replies"));
            self.outcome = Some(Outcome::AgentError);
        } else if self.distance() <= self.config.success_radius_mm {
            self.outcome = Some(Outcome::Success);
        } else if t >= self.config.max_steps {
            self.outcome = Some(Outcome::MaxSteps);
        }
        Ok(self.outcome)
    }

    /// Close the episode. Unfinished episodes are recorded as `MAX_STEPS`.
    pub fn finish(self) -> EpisodeTrace {
        let final_distance_mm = self.distance();
        EpisodeTrace {
            start_pose: arr(&self.start.isocenter),
            target_position: arr(&self.target),
            region_min: arr(&self.region.min),
            region_max: arr(&self.region.max),
            initial_distance_mm: in_plane(&self.start.isocenter, &self.target),
            steps: self.steps,
            outcome: self.outcome.unwrap_or(Outcome::MaxSteps),
            final_distance_mm,
            error: self.error,
            config: self.config,
        }
    }
}

pub fn run_episode<A: Agent + ?Sized>(
    env: Environment<'_>,
    agent: &mut A,
    config: EpisodeConfig,
) -> Result<EpisodeTrace, NavError> {
    drive(Episode::new(env, config)?, agent)
}

/// Like [`run_episode`] but writes every view under `image_dir`.
pub fn run_episode_with_images<A: Agent + ?Sized>(
    env: Environment<'_>,
    agent: &mut A,
    config: EpisodeConfig,
    image_dir: &Path,
) -> Result<EpisodeTrace, NavError> {
    drive(Episode::new(env, config)?.with_image_dir(image_dir), agent)
}

fn drive<A: Agent + ?Sized>(mut ep: Episode<'_>, agent: &mut A) -> Result<EpisodeTrace, NavError> {
    while ep.step(agent)?.is_none() {}
    Ok(ep.finish())
}

/// `n` episodes with starts drawn by the isocenter sampler and uniformly random target landmarks.
pub fn random_episodes(
    seed: u64,
    n: usize,
    volume: &Volume,
    landmarks: &LandmarkSet,
    geometry: CArmGeometry,
) -> Result<Vec<EpisodeConfig>, NavError> {
    let sampler = SamplerConfig { seed: derive_seed(seed, Stream::Episodes, 0), ..SamplerConfig::default() };
    let starts = sample_isocenters(volume, n, &sampler, &geometry)?;
    let mut rng = stream_rng(seed, Stream::Episodes, 1);
    let indices: Vec<u8> = landmarks.iter().map(|l| l.index).collect();
    Ok(starts
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let target = indices[rng.random_range(0..indices.len())];
            let mut c = EpisodeConfig::new(format!("episode-{i:04}"), Start::Isocenter(arr(&pose.isocenter)), target);
            c.seed = seed;
            c.geometry = geometry;
            c
        })
        .collect())
}

/// Oracle replay driven only by what crosses the wire: the start pose, the
/// target, and each request's prior response.
#[derive(Debug, Clone)]
pub struct OracleTracker {
    pub start: Point3<f64>,
    pub target: Point3<f64>,
    pub region: Aabb,
    pub geometry: CArmGeometry,
    pose: Point3<f64>,
}

impl OracleTracker {
    pub fn new(start: Point3<f64>, target: Point3<f64>, region: Aabb, geometry: CArmGeometry) -> Self {
        Self { start, target, region, geometry, pose: start }
    }

    pub fn from_trace_header(trace: &EpisodeTrace) -> Self {
        Self::new(pt(trace.start_pose), pt(trace.target_position), trace.region(), trace.config.geometry)
    }

    /// Advance to the pose implied by `prior_response` and reply from there.
    pub fn reply(&mut self, prior_response: Option<&str>, landmarks: &LandmarkSet) -> Result<String, ParseError> {
        match prior_response {
            None => self.pose = self.start,
            Some(text) => {
                let parsed = crate::protocol::parse(text)?;
                let pose = CArmPose { isocenter: self.pose, geometry: self.geometry };
                self.pose = apply_action(&pose, &parsed.response.command, &self.region).isocenter;
            }
        }
        Ok(serialize(&oracle_response(&self.pose, &self.target, landmarks)))
    }
}
