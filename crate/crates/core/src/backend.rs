//! Attribute predictors behind one interface: a fixture-driven mock, a seeded
//! stochastic simulator and an HTTP client for a remote model server, plus a
//! bounded-parallelism batch runner.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{BoundingBox, Detection, ImageRecord, RankedLabel, Task};
use crate::par;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("cannot read image {path}: {reason}")]
    Image { path: String, reason: String },
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, BackendError::Unavailable(_) | BackendError::Timeout(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Detect,
    Classify,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "detect" => Ok(Mode::Detect),
            "classify" => Ok(Mode::Classify),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub task: Task,
    pub mode: Mode,
}

/// One image to run through a backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRequest {
    pub record_id: String,
    pub image_ref: String,
    pub task: Task,
}

impl ImageRequest {
    pub fn from_record(record: &ImageRecord, task: Task) -> Self {
        ImageRequest { record_id: record.record_id.clone(), image_ref: record.image_ref.clone(), task }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendOutput {
    Detections(Vec<Detection>),
    Ranking(Vec<RankedLabel>),
}

impl BackendOutput {
    pub fn is_empty(&self) -> bool {
        match self {
            BackendOutput::Detections(d) => d.is_empty(),
            BackendOutput::Ranking(r) => r.is_empty(),
        }
    }
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn detect(&self, request: &ImageRequest) -> Result<Vec<Detection>, BackendError>;

    fn classify(&self, request: &ImageRequest) -> Result<Vec<RankedLabel>, BackendError>;

    /// Dispatches on the descriptor's mode.
    fn infer(&self, request: &ImageRequest) -> Result<BackendOutput, BackendError> {
        if request.task != self.descriptor().task {
            return Err(BackendError::Config(format!(
                "backend {} serves {}, asked for {}",
                self.descriptor().backend_id,
                self.descriptor().task,
                request.task
            )));
        }
        match self.descriptor().mode {
            Mode::Detect => self.detect(request).map(BackendOutput::Detections),
            Mode::Classify => self.classify(request).map(BackendOutput::Ranking),
        }
    }
}

/// Stable 64-bit seed derived from a run seed and a record id.
pub fn record_seed(seed: u64, record_id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(record_id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn check_ranking(ranking: &[RankedLabel]) -> Result<(), BackendError> {
    for r in ranking {
        if !(0.0..=1.0).contains(&r.confidence) {
            return Err(BackendError::Protocol(format!(
                "confidence {} for {} outside [0, 1]",
                r.confidence, r.class_name
            )));
        }
    }
    if ranking.windows(2).any(|w| w[0].confidence < w[1].confidence) {
        return Err(BackendError::Protocol("ranking not sorted by descending confidence".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Mock

/// Fixture file for [`MockBackend`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixtures {
    #[serde(default)]
    pub detections: BTreeMap<String, Vec<Detection>>,
    #[serde(default)]
    pub rankings: BTreeMap<String, Vec<RankedLabel>>,
}

/// Table lookup keyed by record id. Unknown records yield an empty result.
#[derive(Debug, Clone)]
pub struct MockBackend {
    descriptor: BackendDescriptor,
    fixtures: MockFixtures,
}

impl MockBackend {
    pub fn new(backend_id: impl Into<String>, task: Task, mode: Mode, fixtures: MockFixtures) -> Self {
        MockBackend { descriptor: BackendDescriptor { backend_id: backend_id.into(), task, mode }, fixtures }
    }

    pub fn load(path: &Path, task: Task, mode: Mode) -> Result<Self, BackendError> {
        let bytes = fs::read(path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let fixtures: MockFixtures = serde_json::from_slice(&bytes)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(format!("mock:{}", path.display()), task, mode, fixtures))
    }
}

impl Backend for MockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn detect(&self, request: &ImageRequest) -> Result<Vec<Detection>, BackendError> {
        Ok(self.fixtures.detections.get(&request.record_id).cloned().unwrap_or_default())
    }

    fn classify(&self, request: &ImageRequest) -> Result<Vec<RankedLabel>, BackendError> {
        let ranking = self.fixtures.rankings.get(&request.record_id).cloned().unwrap_or_default();
        check_ranking(&ranking)?;
        Ok(ranking)
    }
}

// ---------------------------------------------------------------------------
// Stochastic simulator

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticProfile {
    pub p_correct: f64,
    pub p_no_detection: f64,
    pub seed: u64,
}

impl StochasticProfile {
    pub fn new(p_correct: f64, p_no_detection: f64, seed: u64) -> Result<Self, BackendError> {
        let ok = (0.0..=1.0).contains(&p_correct)
            && (0.0..=1.0).contains(&p_no_detection)
            && p_correct + p_no_detection <= 1.0 + 1e-12;
        if !ok {
            return Err(BackendError::Config(format!(
                "ill-formed profile p={p_correct} q={p_no_detection}"
            )));
        }
        Ok(StochasticProfile { p_correct, p_no_detection, seed })
    }
}

/// One simulated view: which label index was emitted (if any) and with what
/// confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedView {
    pub label: Option<usize>,
    pub confidence: f64,
}

impl StochasticProfile {
    /// Draws one view given the index of the true label among `num_labels`.
    /// Wrong labels are uniform over the other labels; confidences are
    /// uniform on [0.5, 1) whether or not the label is right.
    pub fn draw<R: Rng>(&self, rng: &mut R, truth: usize, num_labels: usize) -> SimulatedView {
        let u: f64 = rng.random();
        let confidence = rng.random_range(0.5..1.0);
        if u < self.p_correct {
            SimulatedView { label: Some(truth), confidence }
        } else if u < self.p_correct + self.p_no_detection || num_labels < 2 {
            SimulatedView { label: None, confidence: 0.0 }
        } else {
            let mut wrong = rng.random_range(0..num_labels - 1);
            if wrong >= truth {
                wrong += 1;
            }
            SimulatedView { label: Some(wrong), confidence }
        }
    }
}

/// Seeded simulator that knows the true label of each record. Outputs are a
/// pure function of `(seed, record_id)`.
#[derive(Debug, Clone)]
pub struct SimBackend {
    descriptor: BackendDescriptor,
    profile: StochasticProfile,
    labels: Vec<String>,
    truth: HashMap<String, usize>,
}

impl SimBackend {
    pub fn new(
        backend_id: impl Into<String>,
        task: Task,
        mode: Mode,
        profile: StochasticProfile,
        labels: Vec<String>,
        truth: &BTreeMap<String, String>,
    ) -> Result<Self, BackendError> {
        let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let truth = truth
            .iter()
            .map(|(record, label)| {
                index
                    .get(label.as_str())
                    .map(|&i| (record.clone(), i))
                    .ok_or_else(|| BackendError::Config(format!("truth label {label:?} not in label set")))
            })
            .collect::<Result<_, _>>()?;
        Ok(SimBackend {
            descriptor: BackendDescriptor { backend_id: backend_id.into(), task, mode },
            profile,
            labels,
            truth,
        })
    }

    fn view(&self, request: &ImageRequest) -> Result<(SimulatedView, ChaCha8Rng), BackendError> {
        let &truth = self.truth.get(&request.record_id).ok_or_else(|| {
            BackendError::Config(format!("simulator has no truth for {}", request.record_id))
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(record_seed(self.profile.seed, &request.record_id));
        let view = self.profile.draw(&mut rng, truth, self.labels.len());
        Ok((view, rng))
    }
}

impl Backend for SimBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn detect(&self, request: &ImageRequest) -> Result<Vec<Detection>, BackendError> {
        let (view, mut rng) = self.view(request)?;
        let Some(label) = view.label else {
            return Ok(Vec::new());
        };
        let w = rng.random_range(0.2..0.8);
        let h = rng.random_range(0.2..0.8);
        let bbox = BoundingBox::new(0.5, 0.5, w, h).expect("centered box fits");
        let detection = Detection::new(label as u32, self.labels[label].clone(), view.confidence, bbox)
            .expect("confidence in range");
        Ok(vec![detection])
    }

    fn classify(&self, request: &ImageRequest) -> Result<Vec<RankedLabel>, BackendError> {
        let (view, _) = self.view(request)?;
        let Some(label) = view.label else {
            return Ok(Vec::new());
        };
        let rest = (1.0 - view.confidence) / (self.labels.len().max(2) - 1) as f64;
        let mut ranking = vec![RankedLabel { class_name: self.labels[label].clone(), confidence: view.confidence }];
        ranking.extend(
            self.labels
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != label)
                .map(|(_, l)| RankedLabel { class_name: l.clone(), confidence: rest }),
        );
        Ok(ranking)
    }
}

// ---------------------------------------------------------------------------
// Remote

/// Retry schedule for retriable failures (5xx, timeouts, refused
/// connections). `max_attempts` counts the first try.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_secs(2),
            jitter: 0.2,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based). Jitter is drawn from a
    /// hash of the record id so schedules are reproducible.
    pub fn delay(&self, retry: u32, record_id: &str) -> Duration {
        let nominal = self.base_delay.as_secs_f64() * 2f64.powi(retry as i32);
        let capped = nominal.min(self.max_delay.as_secs_f64());
        let mut rng = ChaCha8Rng::seed_from_u64(record_seed(u64::from(retry), record_id));
        let factor = 1.0 + self.jitter * rng.random_range(-1.0..=1.0);
        Duration::from_secs_f64((capped * factor).max(0.0))
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    image_id: &'a str,
    task: Task,
    image_b64: String,
    top_k: u32,
}

#[derive(Debug, Deserialize)]
struct WireBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

#[derive(Debug, Deserialize)]
struct WireDetection {
    class_id: i64,
    class_name: String,
    confidence: f64,
    bbox: WireBox,
}

#[derive(Debug, Deserialize)]
struct WireDetectResponse {
    image_id: String,
    #[allow(dead_code)]
    model_id: String,
    detections: Vec<WireDetection>,
}

#[derive(Debug, Deserialize)]
struct WireClassifyResponse {
    image_id: String,
    #[allow(dead_code)]
    model_id: String,
    ranking: Vec<RankedLabel>,
}

/// Client for a model server speaking the `/v1/detect` and `/v1/classify`
/// JSON protocol.
pub struct RemoteBackend {
    descriptor: BackendDescriptor,
    base_url: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
    top_k: u32,
}

impl fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("descriptor", &self.descriptor)
            .field("base_url", &self.base_url)
            .field("retry", &self.retry)
            .finish()
    }
}

impl RemoteBackend {
    pub fn new(base_url: &str, task: Task, mode: Mode) -> Result<Self, BackendError> {
        Self::with_options(base_url, task, mode, RetryPolicy::default(), Duration::from_secs(30))
    }

    pub fn with_options(
        base_url: &str,
        task: Task,
        mode: Mode,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let base_url = base_url.trim_end_matches('/').to_string();
        Ok(RemoteBackend {
            descriptor: BackendDescriptor { backend_id: format!("remote:{base_url}"), task, mode },
            base_url,
            client,
            retry,
            top_k: 5,
        })
    }

    fn encode_image(request: &ImageRequest) -> Result<String, BackendError> {
        let bytes = fs::read(&request.image_ref).map_err(|e| BackendError::Image {
            path: request.image_ref.clone(),
            reason: e.to_string(),
        })?;
        Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    fn post_once(&self, endpoint: &str, body: &WireRequest<'_>) -> Result<String, BackendError> {
        let url = format!("{}/v1/{endpoint}", self.base_url);
        let response = self.client.post(&url).json(body).send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(e.to_string())
            } else {
                BackendError::Unavailable(e.to_string())
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(e.to_string())
            } else {
                BackendError::Unavailable(e.to_string())
            }
        })?;
        match status.as_u16() {
            200 => Ok(text),
            s if s >= 500 => Err(BackendError::Unavailable(format!("HTTP {s}: {text}"))),
            s => Err(BackendError::Protocol(format!("HTTP {s}: {text}"))),
        }
    }

    fn post(&self, endpoint: &str, request: &ImageRequest) -> Result<String, BackendError> {
        let body = WireRequest {
            image_id: &request.record_id,
            task: request.task,
            image_b64: Self::encode_image(request)?,
            top_k: self.top_k,
        };
        let mut attempt = 0;
        loop {
            match self.post_once(endpoint, &body) {
                Err(e) if e.is_retriable() && attempt + 1 < self.retry.max_attempts => {
                    std::thread::sleep(self.retry.delay(attempt, &request.record_id));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn check_echo(expected: &str, got: &str) -> Result<(), BackendError> {
        if expected != got {
            return Err(BackendError::Protocol(format!("response for {got:?}, expected {expected:?}")));
        }
        Ok(())
    }
}

impl Backend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn detect(&self, request: &ImageRequest) -> Result<Vec<Detection>, BackendError> {
        let text = self.post("detect", request)?;
        let parsed: WireDetectResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        Self::check_echo(&request.record_id, &parsed.image_id)?;
        parsed
            .detections
            .into_iter()
            .map(|d| {
                let class_id = u32::try_from(d.class_id)
                    .map_err(|_| BackendError::Protocol(format!("class_id {} out of range", d.class_id)))?;
                let bbox = BoundingBox::new(d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h)
                    .map_err(|e| BackendError::Protocol(e.to_string()))?;
                Detection::new(class_id, d.class_name, d.confidence, bbox)
                    .map_err(|e| BackendError::Protocol(e.to_string()))
            })
            .collect()
    }

    fn classify(&self, request: &ImageRequest) -> Result<Vec<RankedLabel>, BackendError> {
        let text = self.post("classify", request)?;
        let parsed: WireClassifyResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        Self::check_echo(&request.record_id, &parsed.image_id)?;
        check_ranking(&parsed.ranking)?;
        Ok(parsed.ranking)
    }
}

// ---------------------------------------------------------------------------
// Backend specs and batches

/// Parsed `--backend` argument: `mock:<path>`, `sim:p=..,q=..,seed=..` or
/// `remote:<base-url>`.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Mock { path: String },
    Sim { profile: StochasticProfile },
    Remote { base_url: String },
}

impl FromStr for BackendSpec {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| BackendError::Config(format!("backend {s:?} lacks a kind prefix")))?;
        match kind {
            "mock" => Ok(BackendSpec::Mock { path: rest.to_string() }),
            "remote" => Ok(BackendSpec::Remote { base_url: rest.to_string() }),
            "sim" => {
                let (mut p, mut q, mut seed) = (None, 0.0, 0u64);
                for part in rest.split(',').filter(|p| !p.is_empty()) {
                    let (key, value) = part
                        .split_once('=')
                        .ok_or_else(|| BackendError::Config(format!("malformed sim option {part:?}")))?;
                    let bad = |e: &dyn fmt::Display| BackendError::Config(format!("{key}={value}: {e}"));
                    match key {
                        "p" => p = Some(value.parse::<f64>().map_err(|e| bad(&e))?),
                        "q" => q = value.parse::<f64>().map_err(|e| bad(&e))?,
                        "seed" => seed = value.parse::<u64>().map_err(|e| bad(&e))?,
                        _ => return Err(BackendError::Config(format!("unknown sim option {key:?}"))),
                    }
                }
                let p = p.ok_or_else(|| BackendError::Config("sim backend needs p=".into()))?;
                Ok(BackendSpec::Sim { profile: StochasticProfile::new(p, q, seed)? })
            }
            other => Err(BackendError::Config(format!("unknown backend kind {other:?}"))),
        }
    }
}

/// Everything a spec may need to become a live backend.
pub struct BackendContext<'a> {
    pub backend_id: &'a str,
    pub task: Task,
    pub mode: Mode,
    pub labels: Vec<String>,
    /// Canonical truth per record; only the simulator reads it.
    pub truth: &'a BTreeMap<String, String>,
}

impl BackendSpec {
    pub fn build(&self, ctx: BackendContext<'_>) -> Result<Box<dyn Backend>, BackendError> {
        Ok(match self {
            BackendSpec::Mock { path } => {
                let mut mock = MockBackend::load(Path::new(path), ctx.task, ctx.mode)?;
                mock.descriptor.backend_id = ctx.backend_id.to_string();
                Box::new(mock)
            }
            BackendSpec::Sim { profile } => Box::new(SimBackend::new(
                ctx.backend_id,
                ctx.task,
                ctx.mode,
                *profile,
                ctx.labels,
                ctx.truth,
            )?),
            BackendSpec::Remote { base_url } => Box::new(RemoteBackend::new(base_url, ctx.task, ctx.mode)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub record_id: String,
    pub result: Result<BackendOutput, BackendError>,
}

/// Runs every request with up to `workers` concurrent calls. Failures stay
/// attached to their record; output is sorted by record id.
pub fn run_batch(backend: &dyn Backend, requests: &[ImageRequest], workers: usize) -> Vec<BatchItem> {
    let mut items = par::map_bounded(requests, workers, |request| BatchItem {
        record_id: request.record_id.clone(),
        result: backend.infer(request),
    });
    items.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    items
}
