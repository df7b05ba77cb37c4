//! Backends that live in another process.
//!
//! A [`Connection`] carries one request at a time over a byte stream: the
//! stdin/stdout of a spawned process or a Unix stream socket. A
//! [`ConnectionPool`] hands connections to workers, and [`RemoteBackend`]
//! implements every role trait on top of a pool. [`serve`] is the matching
//! server loop, used by the mock adapter and by tests.
//!
//! Ops per role (request → response):
//!
//! | role | op | request payload | response |
//! |------|----|-----------------|----------|
//! | any | `capabilities` | empty | `aux`: `sample_rates`, `embedding_dim`, `frame_hop_s` |
//! | enhancer | `enhance` | audio | audio of equal length |
//! | voice_activity_detector | `detect` | audio | probabilities as samples, `aux.frame_hop_s` |
//! | speaker_embedder | `embed` | audio | `dim` vector |
//! | target_extractor | `extract` | audio + enrollment (`dim`) | audio |
//! | quality_scorer | `score` | audio | `aux.ovrl`, `aux.pdnsmos` |
//! | transcriber | `transcribe` | audio | `aux.text` |
//!
//! Requests carry `aux.recording_id` and `aux.start_s`. Failures come back
//! as op `error` with `aux.message`.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::os::unix::net::UnixStream;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::json;

use super::protocol::{read_frame, write_frame, AdapterFrame, FrameHeader, ProtocolError};
use super::{
    BackendError, BackendRole, BackendSet, Capabilities, Clip, Enhancer, QualityScorer,
    QualityScores, SpeakerEmbedder, TargetExtractor, Transcriber, VoiceActivityDetector,
};
use crate::segmenter::FrameTrack;

pub struct Connection {
    reader: Box<dyn Read + Send>,
    writer: Option<Box<dyn Write + Send>>,
    child: Option<Child>,
}

impl Connection {
    pub fn new(reader: impl Read + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Self {
            reader: Box::new(BufReader::new(reader)),
            writer: Some(Box::new(BufWriter::new(writer))),
            child: None,
        }
    }

    /// Spawns `command` and talks to it over stdin/stdout.
    pub fn spawn(command: &[String]) -> io::Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut conn = Self::new(stdout, stdin);
        conn.child = Some(child);
        Ok(conn)
    }

    pub fn connect_unix(path: &Path) -> io::Result<Self> {
        let stream = UnixStream::connect(path)?;
        let reader = stream.try_clone()?;
        Ok(Self::new(reader, stream))
    }

    /// Sends one request and waits for its response.
    pub fn call(&mut self, request: &AdapterFrame) -> Result<AdapterFrame, BackendError> {
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| BackendError::Failed("connection closed".into()))?;
        write_frame(writer, request)?;
        let response = read_frame(&mut self.reader)?.ok_or(ProtocolError::Truncated {
            needed: 4,
            available: 0,
        })?;
        if response.header.op == "error" {
            let message = response
                .header
                .aux_field("message")
                .and_then(|m| m.as_str())
                .unwrap_or("unspecified adapter error");
            return Err(BackendError::Failed(message.to_string()));
        }
        if response.header.role != request.header.role || response.header.op != request.header.op {
            return Err(ProtocolError::MalformedHeader(format!(
                "expected {}/{} response, got {}/{}",
                request.header.role, request.header.op, response.header.role, response.header.op
            ))
            .into());
        }
        Ok(response)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        // Closing stdin asks the child to exit.
        self.writer.take();
        if let Some(child) = self.child.as_mut() {
            for _ in 0..50 {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

type ConnectionFactory = Box<dyn Fn() -> io::Result<Connection> + Send + Sync>;

/// At most `size` connections, each serving one request at a time.
pub struct ConnectionPool {
    factory: ConnectionFactory,
    size: usize,
    state: Mutex<PoolState>,
    returned: Condvar,
}

struct PoolState {
    idle: Vec<Connection>,
    open: usize,
}

impl ConnectionPool {
    pub fn new(size: usize, factory: impl Fn() -> io::Result<Connection> + Send + Sync + 'static) -> Self {
        Self {
            factory: Box::new(factory),
            size: size.max(1),
            state: Mutex::new(PoolState {
                idle: Vec::new(),
                open: 0,
            }),
            returned: Condvar::new(),
        }
    }

    pub fn spawning(command: Vec<String>, size: usize) -> Self {
        Self::new(size, move || Connection::spawn(&command))
    }

    pub fn unix(path: impl Into<std::path::PathBuf>, size: usize) -> Self {
        let path = path.into();
        Self::new(size, move || Connection::connect_unix(&path))
    }

    fn checkout(&self) -> Result<Connection, BackendError> {
        let mut state = self.state.lock().unwrap();
        loop {
            if let Some(conn) = state.idle.pop() {
                return Ok(conn);
            }
            if state.open < self.size {
                state.open += 1;
                drop(state);
                return (self.factory)().map_err(|e| {
                    self.state.lock().unwrap().open -= 1;
                    self.returned.notify_one();
                    BackendError::Io(e)
                });
            }
            state = self.returned.wait(state).unwrap();
        }
    }

    /// Runs one request on a pooled connection. A connection that fails at the
    /// transport level is discarded rather than returned.
    pub fn call(&self, request: &AdapterFrame) -> Result<AdapterFrame, BackendError> {
        let mut conn = self.checkout()?;
        let result = conn.call(request);
        let mut state = self.state.lock().unwrap();
        match &result {
            Err(BackendError::Io(_)) | Err(BackendError::Protocol(_)) => state.open -= 1,
            _ => state.idle.push(conn),
        }
        drop(state);
        self.returned.notify_one();
        result
    }
}

fn clip_frame(role: BackendRole, op: &str, clip: &Clip<'_>, extra: &[f32]) -> AdapterFrame {
    let mut header = FrameHeader::new(role, op);
    header.sample_rate = clip.sample_rate;
    header.num_samples = clip.samples.len() as u64;
    if !extra.is_empty() {
        header.dim = Some(extra.len() as u64);
    }
    header.aux = Some(json!({
        "recording_id": clip.recording_id,
        "start_s": clip.start_s,
    }));
    let mut payload = Vec::with_capacity(clip.samples.len() + extra.len());
    payload.extend_from_slice(clip.samples);
    payload.extend_from_slice(extra);
    AdapterFrame::new(header, payload)
}

fn aux_f64(frame: &AdapterFrame, key: &str) -> Option<f64> {
    frame.header.aux_field(key).and_then(|v| v.as_f64())
}

/// A role served by an external adapter. Capabilities are negotiated once,
/// when the backend is opened.
pub struct RemoteBackend {
    role: BackendRole,
    pool: ConnectionPool,
    caps: Capabilities,
}

impl RemoteBackend {
    pub fn open(role: BackendRole, pool: ConnectionPool) -> Result<Self, BackendError> {
        let response = pool.call(&AdapterFrame::new(
            FrameHeader::new(role, "capabilities"),
            Vec::new(),
        ))?;
        let caps = match response.header.aux {
            Some(aux) => serde_json::from_value(aux)
                .map_err(|e| ProtocolError::MalformedHeader(format!("capabilities: {e}")))?,
            None => Capabilities::default(),
        };
        Ok(Self { role, pool, caps })
    }

    pub fn role(&self) -> BackendRole {
        self.role
    }

    fn request(&self, op: &str, clip: &Clip<'_>, extra: &[f32]) -> Result<AdapterFrame, BackendError> {
        if !self.caps.supports(clip.sample_rate) {
            return Err(BackendError::UnsupportedRate {
                role: self.role,
                rate: clip.sample_rate,
            });
        }
        self.pool.call(&clip_frame(self.role, op, clip, extra))
    }

    fn audio_response(&self, response: AdapterFrame, expected: usize) -> Result<Vec<f32>, BackendError> {
        let samples = response.samples().to_vec();
        if samples.len() != expected {
            return Err(BackendError::Failed(format!(
                "{} returned {} samples, expected {expected}",
                self.role,
                samples.len()
            )));
        }
        Ok(samples)
    }
}

impl Enhancer for RemoteBackend {
    fn capabilities(&self) -> Capabilities {
        self.caps.clone()
    }

    fn enhance(&self, clip: Clip<'_>) -> Result<Vec<f32>, BackendError> {
        let response = self.request("enhance", &clip, &[])?;
        self.audio_response(response, clip.samples.len())
    }
}

impl VoiceActivityDetector for RemoteBackend {
    fn capabilities(&self) -> Capabilities {
        self.caps.clone()
    }

    fn detect(&self, clip: Clip<'_>) -> Result<FrameTrack, BackendError> {
        let response = self.request("detect", &clip, &[])?;
        let hop = aux_f64(&response, "frame_hop_s")
            .or(self.caps.frame_hop_s)
            .ok_or_else(|| BackendError::Failed("VAD response lacks frame_hop_s".into()))?;
        FrameTrack::new(response.samples().to_vec(), hop)
            .map_err(|e| BackendError::Failed(e.to_string()))
    }
}

impl SpeakerEmbedder for RemoteBackend {
    fn capabilities(&self) -> Capabilities {
        self.caps.clone()
    }

    fn embed(&self, clip: Clip<'_>) -> Result<Vec<f32>, BackendError> {
        let response = self.request("embed", &clip, &[])?;
        let v = response.vector().to_vec();
        if let Some(dim) = self.caps.embedding_dim {
            if v.len() != dim {
                return Err(BackendError::Failed(format!(
                    "embedding has dimension {}, declared {dim}",
                    v.len()
                )));
            }
        }
        Ok(v)
    }
}

impl TargetExtractor for RemoteBackend {
    fn capabilities(&self) -> Capabilities {
        self.caps.clone()
    }

    fn extract(&self, clip: Clip<'_>, enrollment: &[f32]) -> Result<Vec<f32>, BackendError> {
        let response = self.request("extract", &clip, enrollment)?;
        self.audio_response(response, clip.samples.len())
    }
}

impl QualityScorer for RemoteBackend {
    fn capabilities(&self) -> Capabilities {
        self.caps.clone()
    }

    fn score(&self, clip: Clip<'_>) -> Result<QualityScores, BackendError> {
        let response = self.request("score", &clip, &[])?;
        let ovrl = aux_f64(&response, "ovrl")
            .ok_or_else(|| BackendError::Failed("score response lacks ovrl".into()))?;
        Ok(QualityScores {
            ovrl,
            pdnsmos: aux_f64(&response, "pdnsmos"),
        })
    }
}

impl Transcriber for RemoteBackend {
    fn capabilities(&self) -> Capabilities {
        self.caps.clone()
    }

    fn transcribe(&self, clip: Clip<'_>) -> Result<String, BackendError> {
        let response = self.request("transcribe", &clip, &[])?;
        response
            .header
            .aux_field("text")
            .and_then(|t| t.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::Failed("transcribe response lacks text".into()))
    }
}

fn error_frame(role: BackendRole, message: impl std::fmt::Display) -> AdapterFrame {
    let mut header = FrameHeader::new(role, "error");
    header.aux = Some(json!({ "message": message.to_string() }));
    AdapterFrame::new(header, Vec::new())
}

/// Answers one request using the in-process backends in `backends`.
pub fn handle_request(backends: &BackendSet, request: &AdapterFrame) -> AdapterFrame {
    let role = request.header.role;
    match dispatch(backends, request) {
        Ok(frame) => frame,
        Err(e) => error_frame(role, e),
    }
}

fn dispatch(backends: &BackendSet, request: &AdapterFrame) -> Result<AdapterFrame, BackendError> {
    let h = &request.header;
    let role = h.role;
    let missing = || BackendError::Failed(format!("role {role} not served here"));
    let mut out = FrameHeader::new(role, h.op.clone());
    out.sample_rate = h.sample_rate;

    if h.op == "capabilities" {
        let caps = backends.capabilities(role).ok_or_else(missing)?;
        out.aux = Some(serde_json::to_value(caps).expect("capabilities serialize"));
        return Ok(AdapterFrame::new(out, Vec::new()));
    }

    let recording_id = h
        .aux_field("recording_id")
        .and_then(|v| v.as_str())
        .unwrap_or("")
        .to_string();
    let start_s = h.aux_field("start_s").and_then(|v| v.as_f64()).unwrap_or(0.0);
    let clip = Clip {
        recording_id: &recording_id,
        start_s,
        samples: request.samples(),
        sample_rate: h.sample_rate,
    };
    let audio = |out: &mut FrameHeader, samples: Vec<f32>| {
        out.num_samples = samples.len() as u64;
        samples
    };

    let payload = match (role, h.op.as_str()) {
        (BackendRole::Enhancer, "enhance") => {
            let samples = backends.enhancer.as_ref().ok_or_else(missing)?.enhance(clip)?;
            audio(&mut out, samples)
        }
        (BackendRole::VoiceActivityDetector, "detect") => {
            let track = backends.vad.as_ref().ok_or_else(missing)?.detect(clip)?;
            out.aux = Some(json!({ "frame_hop_s": track.frame_hop_s() }));
            audio(&mut out, track.probs().to_vec())
        }
        (BackendRole::SpeakerEmbedder, "embed") => {
            let v = backends.embedder.as_ref().ok_or_else(missing)?.embed(clip)?;
            out.dim = Some(v.len() as u64);
            v
        }
        (BackendRole::TargetExtractor, "extract") => {
            let samples = backends
                .extractor
                .as_ref()
                .ok_or_else(missing)?
                .extract(clip, request.vector())?;
            audio(&mut out, samples)
        }
        (BackendRole::QualityScorer, "score") => {
            let s = backends.scorer.as_ref().ok_or_else(missing)?.score(clip)?;
            out.aux = Some(json!({ "ovrl": s.ovrl, "pdnsmos": s.pdnsmos }));
            Vec::new()
        }
        (BackendRole::Transcriber, "transcribe") => {
            let text = backends
                .transcriber
                .as_ref()
                .ok_or_else(missing)?
                .transcribe(clip)?;
            out.aux = Some(json!({ "text": text }));
            Vec::new()
        }
        (_, op) => return Err(BackendError::Failed(format!("unknown op `{op}` for {role}"))),
    };
    Ok(AdapterFrame::new(out, payload))
}

/// Serves requests until the peer closes the stream.
pub fn serve<R: Read, W: Write>(reader: R, writer: W, backends: &BackendSet) -> Result<(), ProtocolError> {
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    while let Some(request) = read_frame(&mut reader)? {
        write_frame(&mut writer, &handle_request(backends, &request))?;
    }
    Ok(())
}
