//! Line-delimited JSON frames for agents running outside the process.
//!
//! Every frame is one JSON object on one line with a mandatory `version`
//! and a `type` of `request`, `reply` or `error`. The harness sends one
//! request and waits for exactly one reply before sending the next, over a
//! child process's stdio or a TCP connection.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::navloop::{Agent, AgentFailure, Observation, OracleTracker};
use crate::phantom::LandmarkSet;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub episode_id: String,
    pub step: usize,
    pub image_png_base64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    pub prompt_template_id: String,
}

impl AgentRequest {
    pub fn image_png(&self) -> Result<Vec<u8>, base64::DecodeError> {
        BASE64.decode(&self.image_png_base64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentReply {
    pub episode_id: String,
    pub step: usize,
    pub raw_text: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorFrame {
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Frame {
    Request(AgentRequest),
    Reply(AgentReply),
    Error(ErrorFrame),
}

#[derive(Serialize)]
struct Envelope<'a> {
    version: u32,
    #[serde(flatten)]
    frame: &'a Frame,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame is not UTF-8")]
    Utf8,
    #[error("frame is not a JSON object: {0}")]
    Json(String),
    #[error("frame lacks a version field")]
    MissingVersion,
    #[error("unsupported protocol version {0}, expected 1")]
    Version(u64),
    #[error("invalid frame: {0}")]
    Invalid(String),
    #[error("stream ends inside a frame")]
    Truncated,
}

impl FrameError {
    pub fn category(&self) -> &'static str {
        match self {
            Self::Utf8 => "utf8",
            Self::Json(_) => "json",
            Self::MissingVersion => "missing_version",
            Self::Version(_) => "version",
            Self::Invalid(_) => "invalid",
            Self::Truncated => "truncated",
        }
    }
}

/// One frame as a single line, without the trailing newline.
pub fn encode_frame(frame: &Frame) -> String {
    serde_json::to_string(&Envelope { version: PROTOCOL_VERSION, frame }).expect("frames serialize")
}

/// Decode one line (a trailing `\r` is ignored).
pub fn decode_frame(line: &str) -> Result<Frame, FrameError> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| FrameError::Json(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| FrameError::Json("top level is not an object".into()))?;
    match obj.get("version") {
        None => return Err(FrameError::MissingVersion),
        Some(v) => match v.as_u64() {
            Some(1) => {}
            Some(other) => return Err(FrameError::Version(other)),
            None => return Err(FrameError::Invalid(format!("version {v} is not an integer"))),
        },
    }
    let frame: Frame = serde_json::from_value(value).map_err(|e| FrameError::Invalid(e.to_string()))?;
    if let Frame::Reply(r) = &frame {
        if r.raw_text.is_empty() {
            return Err(FrameError::Invalid("raw_text is empty".into()));
        }
    }
    Ok(frame)
}

/// Split a byte stream into frames. Decoding stops at the first bad line,
/// which is returned with its 1-based line number.
pub fn decode_stream(bytes: &[u8]) -> (Vec<Frame>, Option<(usize, FrameError)>) {
    let mut frames = Vec::new();
    let mut rest = bytes;
    let mut line_no = 0;
    while !rest.is_empty() {
        line_no += 1;
        let Some(end) = rest.iter().position(|&b| b == b'\n') else {
            return (frames, Some((line_no, FrameError::Truncated)));
        };
        let line = &rest[..end];
        rest = &rest[end + 1..];
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let decoded = std::str::from_utf8(line).map_err(|_| FrameError::Utf8).and_then(decode_frame);
        match decoded {
            Ok(f) => frames.push(f),
            Err(e) => return (frames, Some((line_no, e))),
        }
    }
    (frames, None)
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("could not start agent {command:?}: {source}")]
    Spawn {
        command: String,
        #[source]
        source: io::Error,
    },
    #[error("could not connect to {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("agent command is empty")]
    EmptyCommand,
}

/// Lines read on a background thread so waits can time out.
struct LineReader {
    rx: Receiver<io::Result<String>>,
}

impl LineReader {
    fn spawn<R: Read + Send + 'static>(reader: R) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                let mut buf = Vec::new();
                let msg = match reader.read_until(b'\n', &mut buf) {
                    Ok(0) => break,
                    Ok(_) if buf.last() != Some(&b'\n') => {
                        Err(io::Error::new(io::ErrorKind::UnexpectedEof, "stream ends inside a frame"))
                    }
                    Ok(_) => String::from_utf8(buf)
                        .map(|mut s| {
                            s.pop();
                            s
                        })
                        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "frame is not UTF-8")),
                    Err(e) => Err(e),
                };
                let stop = msg.is_err();
                if tx.send(msg).is_err() || stop {
                    break;
                }
            }
        });
        Self { rx }
    }

    fn next(&self, timeout: Duration) -> Result<String, AgentFailure> {
        match self.rx.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(AgentFailure::Fatal(format!("broken stream: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                Err(AgentFailure::Fatal(format!("no reply within {:.1} s", timeout.as_secs_f64())))
            }
            Err(RecvTimeoutError::Disconnected) => Err(AgentFailure::Fatal("agent closed the stream".into())),
        }
    }
}

enum Sink {
    Child(ChildStdin),
    Tcp(TcpStream),
}

impl Write for Sink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Sink::Child(w) => w.write(buf),
            Sink::Tcp(w) => w.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Sink::Child(w) => w.flush(),
            Sink::Tcp(w) => w.flush(),
        }
    }
}

/// An agent on the other end of a frame stream.
pub struct RemoteAgent {
    sink: Option<Sink>,
    lines: LineReader,
    child: Option<Child>,
    timeout: Duration,
    last_latency_ms: Option<u64>,
}

impl RemoteAgent {
    /// Start `command[0]` with the remaining arguments and talk over its stdin/stdout.
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self, GatewayError> {
        let (program, args) = command.split_first().ok_or(GatewayError::EmptyCommand)?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| GatewayError::Spawn { command: command.join(" "), source })?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        Ok(Self {
            sink: Some(Sink::Child(stdin)),
            lines: LineReader::spawn(stdout),
            child: Some(child),
            timeout,
            last_latency_ms: None,
        })
    }

    pub fn connect_tcp(addr: impl ToSocketAddrs + std::fmt::Debug, timeout: Duration) -> Result<Self, GatewayError> {
        let label = format!("{addr:?}");
        let err = |source| GatewayError::Connect { addr: label.clone(), source };
        let stream = TcpStream::connect(addr).map_err(err)?;
        stream.set_nodelay(true).map_err(err)?;
        let reader = stream.try_clone().map_err(err)?;
        Ok(Self {
            sink: Some(Sink::Tcp(stream)),
            lines: LineReader::spawn(reader),
            child: None,
            timeout,
            last_latency_ms: None,
        })
    }

    /// Latency reported with the most recent reply.
    pub fn last_latency_ms(&self) -> Option<u64> {
        self.last_latency_ms
    }

    /// Send `request` and wait for the matching reply.
    pub fn exchange(&mut self, request: AgentRequest) -> Result<String, AgentFailure> {
        let sink = self.sink.as_mut().ok_or_else(|| AgentFailure::Fatal("connection closed".into()))?;
        let (episode_id, step) = (request.episode_id.clone(), request.step);
        let line = encode_frame(&Frame::Request(request));
        let sent = sink.write_all(line.as_bytes()).and_then(|_| sink.write_all(b"\n")).and_then(|_| sink.flush());
        if let Err(e) = sent {
            self.sink = None;
            return Err(AgentFailure::Fatal(format!("broken stream: {e}")));
        }
        let line = self.lines.next(self.timeout).inspect_err(|_| self.sink = None)?;
        match decode_frame(&line) {
            Ok(Frame::Reply(r)) if r.episode_id == episode_id && r.step == step => {
                self.last_latency_ms = Some(r.latency_ms);
                Ok(r.raw_text)
            }
            Ok(Frame::Reply(r)) => Err(AgentFailure::Fatal(format!(
                "reply for {}#{} while waiting for {episode_id}#{step}",
                r.episode_id, r.step
            ))),
            Ok(Frame::Error(e)) => Err(AgentFailure::Recoverable(e.message)),
            Ok(Frame::Request(_)) => Err(AgentFailure::Fatal("agent sent a request frame".into())),
            Err(e) => Err(AgentFailure::Fatal(format!("malformed reply frame: {e}; line: {}", preview(&line)))),
        }
    }
}

fn preview(line: &str) -> String {
    let cut: String = line.chars().take(120).collect();
    if cut.len() < line.len() {
        format!("{cut}…")
    } else {
        cut
    }
}

impl Agent for RemoteAgent {
    fn respond(&mut self, obs: &Observation<'_>) -> Result<String, AgentFailure> {
        let png = obs.image.to_png().map_err(|e| AgentFailure::Fatal(format!("could not encode view: {e}")))?;
        self.exchange(AgentRequest {
            episode_id: obs.episode_id.to_string(),
            step: obs.step,
            image_png_base64: BASE64.encode(png),
            prior_response: obs.prior_response.map(str::to_string),
            feedback: obs.feedback.map(str::to_string),
            prompt_template_id: obs.prompt_template_id.to_string(),
        })
    }
}

impl Drop for RemoteAgent {
    fn drop(&mut self) {
        if let Some(Sink::Tcp(s)) = &self.sink {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        self.sink = None;
        if let Some(mut child) = self.child.take() {
            let deadline = Instant::now() + Duration::from_secs(2);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Answer requests from `reader` on `writer` until EOF. Undecodable lines get
/// an error frame and the session continues.
pub fn serve<R, W, F>(reader: R, mut writer: W, mut handler: F) -> io::Result<()>
where
    R: BufRead,
    W: Write,
    F: FnMut(&AgentRequest) -> Result<String, String>,
{
    for line in reader.split(b'\n') {
        let line = line?;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let decoded = std::str::from_utf8(&line).map_err(|_| FrameError::Utf8).and_then(decode_frame);
        let out = match decoded {
            Ok(Frame::Request(req)) => {
                let started = Instant::now();
                match handler(&req) {
                    Ok(raw_text) if !raw_text.is_empty() => Frame::Reply(AgentReply {
                        episode_id: req.episode_id.clone(),
                        step: req.step,
                        raw_text,
                        latency_ms: started.elapsed().as_millis() as u64,
                    }),
                    Ok(_) => error_frame("agent produced empty text", Some(&req)),
                    Err(message) => error_frame(&message, Some(&req)),
                }
            }
            Ok(_) => error_frame("expected a request frame", None),
            Err(e) => error_frame(&e.to_string(), None),
        };
        writer.write_all(encode_frame(&out).as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

fn error_frame(message: &str, req: Option<&AgentRequest>) -> Frame {
    Frame::Error(ErrorFrame {
        message: message.to_string(),
        episode_id: req.map(|r| r.episode_id.clone()),
        step: req.map(|r| r.step),
    })
}

/// Oracle reachable over the wire. Each episode must be registered with its
/// ground truth first; the pose is then tracked from the requests alone.
pub struct WireOracle {
    landmarks: LandmarkSet,
    episodes: HashMap<String, OracleTracker>,
}

impl WireOracle {
    pub fn new(landmarks: LandmarkSet) -> Self {
        Self { landmarks, episodes: HashMap::new() }
    }

    pub fn register(&mut self, episode_id: impl Into<String>, tracker: OracleTracker) {
        self.episodes.insert(episode_id.into(), tracker);
    }

    pub fn handle(&mut self, req: &AgentRequest) -> Result<String, String> {
        let tracker = self
            .episodes
            .get_mut(&req.episode_id)
            .ok_or_else(|| format!("no ground truth for episode {:?}", req.episode_id))?;
        tracker.reply(req.prior_response.as_deref(), &self.landmarks).map_err(|e| e.to_string())
    }
}
