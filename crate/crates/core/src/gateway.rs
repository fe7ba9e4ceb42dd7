//! Patch classification behind one interface.
//!
//! Two backends: a deterministic color-matching oracle used for synthetic
//! slides, and external worker processes that speak newline-delimited JSON.
//!
//! Worker protocol, one JSON object per line:
//!
//! ```text
//! stdin:  {"id": <u64>, "side": <int>, "png_b64": "<base64 PNG>"}
//! stdout: {"id": <u64>, "probs": [6 floats, canonical class order]}
//! ```
//!
//! Responses may arrive in any order; they are matched back by id. Closing
//! stdin asks the worker to exit. Anything the worker prints on stderr is
//! logged verbatim.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Cursor, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine;
use image::{ImageFormat, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{HistologicPattern, ProbabilityVector};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("worker failed: {0}")]
    WorkerFailed(String),
    #[error("worker protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid classifier configuration: {0}")]
    InvalidConfig(String),
}

/// A patch to classify. `id` must be unique within a batch; the oracle also
/// uses it as its random draw index.
#[derive(Debug, Clone)]
pub struct PatchInput {
    pub id: u64,
    pub image: RgbImage,
}

pub trait PatchClassifier: Send + Sync {
    /// One probability vector per input, in input order.
    fn classify_batch(&self, patches: &[PatchInput]) -> Result<Vec<ProbabilityVector>, GatewayError>;

    /// Preferred number of patches per call.
    fn batch_size(&self) -> usize;
}

/// Flat RGB color painted for each class, canonical order. Shared by the
/// synthetic slide generator and the oracle classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassColorMap(pub [[u8; 3]; 6]);

impl Default for ClassColorMap {
    fn default() -> Self {
        ClassColorMap([
            [214, 96, 77],   // lepidic
            [67, 147, 195],  // acinar
            [120, 190, 90],  // papillary
            [230, 190, 60],  // micropapillary
            [140, 80, 170],  // solid
            [240, 236, 232], // benign
        ])
    }
}

impl ClassColorMap {
    pub fn color(&self, pattern: HistologicPattern) -> [u8; 3] {
        self.0[pattern.index()]
    }

    /// Nearest class color in RGB space; ties go to the lower index.
    pub fn nearest(&self, rgb: [u8; 3]) -> HistologicPattern {
        let mut best = 0;
        let mut best_d = u32::MAX;
        for (i, c) in self.0.iter().enumerate() {
            let d: u32 = (0..3)
                .map(|k| {
                    let diff = i32::from(rgb[k]) - i32::from(c[k]);
                    (diff * diff) as u32
                })
                .sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        HistologicPattern::ALL[best]
    }

    /// Class holding the most pixels after nearest-color mapping; ties go to
    /// the lower index.
    pub fn dominant(&self, image: &RgbImage) -> HistologicPattern {
        let mut votes = [0u64; 6];
        let mut cache: HashMap<[u8; 3], usize> = HashMap::new();
        for Rgb(px) in image.pixels() {
            let idx = *cache.entry(*px).or_insert_with(|| self.nearest(*px).index());
            votes[idx] += 1;
        }
        let mut best = 0;
        for i in 1..6 {
            if votes[i] > votes[best] {
                best = i;
            }
        }
        HistologicPattern::ALL[best]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub colors: ClassColorMap,
    /// Probability that a patch gets a wrong, low-confidence answer.
    pub noise_rate: f64,
    /// Probability assigned to the mapped class on a correct answer.
    pub confidence: f64,
    /// Upper bound of the wrong answer's confidence; drawn from (1/6, this].
    pub low_conf_max: f64,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            colors: ClassColorMap::default(),
            noise_rate: 0.0,
            confidence: 0.9,
            low_conf_max: 0.3,
            seed: 0,
            batch_size: 64,
        }
    }
}

const SIXTH: f64 = 1.0 / 6.0;

impl OracleConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(GatewayError::InvalidConfig(format!(
                "noise_rate {} outside [0, 1]",
                self.noise_rate
            )));
        }
        if !(self.confidence > SIXTH && self.confidence <= 1.0) {
            return Err(GatewayError::InvalidConfig(format!(
                "confidence {} outside (1/6, 1]",
                self.confidence
            )));
        }
        if !(self.low_conf_max > SIXTH && self.low_conf_max <= 1.0) {
            return Err(GatewayError::InvalidConfig(format!(
                "low_conf_max {} outside (1/6, 1]",
                self.low_conf_max
            )));
        }
        if self.batch_size == 0 {
            return Err(GatewayError::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

fn spread(top: HistologicPattern, confidence: f64) -> ProbabilityVector {
    let rest = (1.0 - confidence) / 5.0;
    let mut values = [rest; 6];
    values[top.index()] = confidence;
    ProbabilityVector::new(values).expect("oracle vectors sum to one")
}

/// Test-double classifier: maps the patch to its dominant class color, then
/// with probability `1 - noise_rate` answers that class at `confidence`,
/// otherwise answers a uniformly drawn wrong class at a confidence drawn from
/// (1/6, low_conf_max]. Deterministic in `(seed, draw_index)`.
pub fn oracle_classify(patch: &RgbImage, config: &OracleConfig, draw_index: u64) -> ProbabilityVector {
    let mapped = config.colors.dominant(patch);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(draw_index);
    if rng.gen::<f64>() >= config.noise_rate {
        return spread(mapped, config.confidence);
    }
    let offset = rng.gen_range(1..6);
    let wrong = HistologicPattern::ALL[(mapped.index() + offset) % 6];
    // 1 - u lies in (0, 1], giving a confidence in (1/6, low_conf_max]; the
    // floor keeps the wrong class a strict argmax after rounding
    let u = 1.0 - rng.gen::<f64>();
    let confidence = (SIXTH + (config.low_conf_max - SIXTH) * u).max(SIXTH + 1e-9);
    spread(wrong, confidence)
}

#[derive(Debug, Clone)]
pub struct OracleClassifier {
    config: OracleConfig,
}

impl OracleClassifier {
    pub fn new(config: OracleConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(OracleClassifier { config })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }
}

impl PatchClassifier for OracleClassifier {
    fn classify_batch(&self, patches: &[PatchInput]) -> Result<Vec<ProbabilityVector>, GatewayError> {
        check_batch(patches)?;
        Ok(patches
            .iter()
            .map(|p| oracle_classify(&p.image, &self.config, p.id))
            .collect())
    }

    fn batch_size(&self) -> usize {
        self.config.batch_size
    }
}

fn check_batch(patches: &[PatchInput]) -> Result<(), GatewayError> {
    let Some(first) = patches.first() else {
        return Ok(());
    };
    let side = first.image.width();
    let mut seen = HashSet::with_capacity(patches.len());
    for p in patches {
        let (w, h) = p.image.dimensions();
        if w != h || w != side {
            return Err(GatewayError::InvalidRequest(format!(
                "patch {} is {w}x{h}; a batch needs square patches of side {side}",
                p.id
            )));
        }
        if !seen.insert(p.id) {
            return Err(GatewayError::InvalidRequest(format!("duplicate patch id {}", p.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkerConfig {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub batch_size: usize,
    pub timeout_secs: u64,
    /// Number of worker processes kept alive.
    pub processes: usize,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig {
            command: Vec::new(),
            batch_size: 64,
            timeout_secs: 300,
            processes: 1,
        }
    }
}

impl WorkerConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.command.is_empty() {
            return Err(GatewayError::InvalidConfig("worker command is empty".into()));
        }
        if self.batch_size == 0 || self.processes == 0 {
            return Err(GatewayError::InvalidConfig(
                "batch_size and processes must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct WorkerRequest<'a> {
    id: u64,
    side: u32,
    png_b64: &'a str,
}

#[derive(Deserialize)]
struct WorkerResponse {
    id: u64,
    probs: Vec<f64>,
}

/// Encodes one request line (without the trailing newline).
pub fn encode_request(patch: &PatchInput) -> Result<String, GatewayError> {
    let mut png = Vec::new();
    patch
        .image
        .write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
        .map_err(|e| GatewayError::InvalidRequest(format!("PNG encoding failed: {e}")))?;
    let b64 = base64::engine::general_purpose::STANDARD.encode(png);
    let req = WorkerRequest {
        id: patch.id,
        side: patch.image.width(),
        png_b64: &b64,
    };
    Ok(serde_json::to_string(&req).expect("request serializes"))
}

/// Decodes a request line back into a patch. Used by worker implementations.
pub fn decode_request(line: &str) -> Result<PatchInput, GatewayError> {
    #[derive(Deserialize)]
    struct Owned {
        id: u64,
        side: u32,
        png_b64: String,
    }
    let req: Owned =
        serde_json::from_str(line).map_err(|e| GatewayError::ProtocolViolation(format!("malformed request: {e}")))?;
    let png = base64::engine::general_purpose::STANDARD
        .decode(req.png_b64)
        .map_err(|e| GatewayError::ProtocolViolation(format!("bad base64: {e}")))?;
    let image = image::load_from_memory_with_format(&png, ImageFormat::Png)
        .map_err(|e| GatewayError::ProtocolViolation(format!("bad PNG: {e}")))?
        .to_rgb8();
    if image.width() != req.side || image.height() != req.side {
        return Err(GatewayError::ProtocolViolation(format!(
            "request {} declares side {} but carries a {}x{} image",
            req.id,
            req.side,
            image.width(),
            image.height()
        )));
    }
    Ok(PatchInput { id: req.id, image })
}

/// Encodes one response line (without the trailing newline).
pub fn encode_response(id: u64, probs: &ProbabilityVector) -> String {
    serde_json::json!({ "id": id, "probs": probs.values() }).to_string()
}

/// Parses and validates a response line. Vectors within 1e-6 of summing to
/// one are renormalized; anything else is rejected.
pub fn decode_response(line: &str) -> Result<(u64, ProbabilityVector), GatewayError> {
    let resp: WorkerResponse = serde_json::from_str(line)
        .map_err(|e| GatewayError::WorkerFailed(format!("malformed response line {line:?}: {e}")))?;
    let values: [f64; 6] = resp.probs.as_slice().try_into().map_err(|_| {
        GatewayError::ProtocolViolation(format!(
            "response {} has {} probabilities, expected 6",
            resp.id,
            resp.probs.len()
        ))
    })?;
    let probs = ProbabilityVector::renormalized(values)
        .map_err(|e| GatewayError::ProtocolViolation(format!("response {}: {e}", resp.id)))?;
    Ok((resp.id, probs))
}

struct WorkerProcess {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl WorkerProcess {
    fn spawn(config: &WorkerConfig) -> Result<Self, GatewayError> {
        let mut child = Command::new(&config.command[0])
            .args(&config.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| GatewayError::WorkerFailed(format!("cannot start {:?}: {e}", config.command[0])))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let pid = child.id();
        thread::spawn(move || {
            for line in BufReader::new(stderr).lines().map_while(Result::ok) {
                log::warn!(target: "worker", "[pid {pid}] {line}");
            }
        });
        Ok(WorkerProcess {
            child,
            stdin,
            lines: rx,
        })
    }

    fn exit_description(&mut self) -> String {
        thread::sleep(Duration::from_millis(20));
        match self.child.try_wait() {
            Ok(Some(status)) => format!("worker exited with {status}"),
            Ok(None) => "worker closed its output".into(),
            Err(e) => format!("cannot query worker status: {e}"),
        }
    }

    fn classify(&mut self, patches: &[PatchInput], timeout: Duration) -> Result<Vec<ProbabilityVector>, GatewayError> {
        let deadline = Instant::now() + timeout;
        let mut payload = String::new();
        for p in patches {
            payload.push_str(&encode_request(p)?);
            payload.push('\n');
        }
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| GatewayError::WorkerFailed("worker stdin closed".into()))?;
        if let Err(e) = stdin.write_all(payload.as_bytes()).and_then(|_| stdin.flush()) {
            let status = self.exit_description();
            return Err(GatewayError::WorkerFailed(format!("write failed ({e}); {status}")));
        }

        let mut pending: HashMap<u64, usize> = patches.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
        let mut out: Vec<Option<ProbabilityVector>> = vec![None; patches.len()];
        while !pending.is_empty() {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(GatewayError::WorkerFailed(format!("read failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(GatewayError::WorkerFailed(format!(
                        "timed out after {}s with {} responses outstanding",
                        timeout.as_secs(),
                        pending.len()
                    )))
                }
                Err(RecvTimeoutError::Disconnected) => return Err(GatewayError::WorkerFailed(self.exit_description())),
            };
            if line.trim().is_empty() {
                continue;
            }
            let (id, probs) = decode_response(&line)?;
            let index = pending
                .remove(&id)
                .ok_or_else(|| GatewayError::ProtocolViolation(format!("unexpected response id {id}")))?;
            out[index] = Some(probs);
        }
        Ok(out.into_iter().map(|p| p.expect("all ids answered")).collect())
    }
}

impl Drop for WorkerProcess {
    fn drop(&mut self) {
        // EOF on stdin is the shutdown signal
        drop(self.stdin.take());
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A set of worker processes. Each process serves one batch at a time; a
/// process that errors is discarded and respawned on next use.
pub struct WorkerPool {
    config: WorkerConfig,
    slots: Vec<Mutex<Option<WorkerProcess>>>,
}

impl WorkerPool {
    pub fn new(config: WorkerConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let slots = (0..config.processes).map(|_| Mutex::new(None)).collect();
        Ok(WorkerPool { config, slots })
    }

    fn run(
        &self,
        slot: &mut Option<WorkerProcess>,
        patches: &[PatchInput],
    ) -> Result<Vec<ProbabilityVector>, GatewayError> {
        if slot.is_none() {
            *slot = Some(WorkerProcess::spawn(&self.config)?);
        }
        let timeout = Duration::from_secs(self.config.timeout_secs);
        let result = slot.as_mut().expect("spawned").classify(patches, timeout);
        if result.is_err() {
            *slot = None;
        }
        result
    }
}

impl PatchClassifier for WorkerPool {
    fn classify_batch(&self, patches: &[PatchInput]) -> Result<Vec<ProbabilityVector>, GatewayError> {
        check_batch(patches)?;
        if patches.is_empty() {
            return Ok(Vec::new());
        }
        let mut out = Vec::with_capacity(patches.len());
        for chunk in patches.chunks(self.config.batch_size) {
            let mut guard = self
                .slots
                .iter()
                .find_map(|s| s.try_lock().ok())
                .unwrap_or_else(|| self.slots[0].lock().unwrap_or_else(|p| p.into_inner()));
            out.extend(self.run(&mut guard, chunk)?);
        }
        Ok(out)
    }

    fn batch_size(&self) -> usize {
        self.config.batch_size
    }
}

/// Serializable classifier selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierConfig {
    Oracle(OracleConfig),
    Worker(WorkerConfig),
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig::Oracle(OracleConfig::default())
    }
}

pub enum ClassifierHandle {
    Oracle(OracleClassifier),
    Worker(WorkerPool),
}

impl ClassifierHandle {
    pub fn from_config(config: &ClassifierConfig) -> Result<Self, GatewayError> {
        Ok(match config {
            ClassifierConfig::Oracle(c) => ClassifierHandle::Oracle(OracleClassifier::new(c.clone())?),
            ClassifierConfig::Worker(c) => ClassifierHandle::Worker(WorkerPool::new(c.clone())?),
        })
    }
}

impl PatchClassifier for ClassifierHandle {
    fn classify_batch(&self, patches: &[PatchInput]) -> Result<Vec<ProbabilityVector>, GatewayError> {
        match self {
            ClassifierHandle::Oracle(c) => c.classify_batch(patches),
            ClassifierHandle::Worker(c) => c.classify_batch(patches),
        }
    }

    fn batch_size(&self) -> usize {
        match self {
            ClassifierHandle::Oracle(c) => c.batch_size(),
            ClassifierHandle::Worker(c) => c.batch_size(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch_of(pattern: HistologicPattern, side: u32) -> RgbImage {
        RgbImage::from_pixel(side, side, Rgb(ClassColorMap::default().color(pattern)))
    }

    #[test]
    fn noise_free_oracle_vector() {
        let config = OracleConfig::default();
        for p in HistologicPattern::ALL {
            let v = oracle_classify(&patch_of(p, 8), &config, 5);
            assert_eq!(v.argmax(), p);
            assert!((v.get(p) - 0.9).abs() < 1e-12);
            for q in HistologicPattern::ALL.into_iter().filter(|&q| q != p) {
                assert!((v.get(q) - 0.02).abs() < 1e-12);
            }
            assert!((v.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_noise_is_always_wrong_and_low_confidence() {
        let config = OracleConfig {
            noise_rate: 1.0,
            ..OracleConfig::default()
        };
        let img = patch_of(HistologicPattern::Solid, 4);
        for i in 0..2000 {
            let v = oracle_classify(&img, &config, i);
            assert_ne!(v.argmax(), HistologicPattern::Solid);
            assert!(v.get(v.argmax()) <= 0.3);
            assert!(v.get(v.argmax()) > 1.0 / 6.0);
        }
    }

    #[test]
    fn noise_rate_is_honoured() {
        // 10,000 Bernoulli(0.1) draws: sd = 0.003, so +-0.02 is > 6 sd
        let config = OracleConfig {
            noise_rate: 0.1,
            seed: 17,
            ..OracleConfig::default()
        };
        let img = patch_of(HistologicPattern::Acinar, 2);
        let wrong = (0..10_000u64)
            .filter(|&i| oracle_classify(&img, &config, i).argmax() != HistologicPattern::Acinar)
            .count();
        let frac = wrong as f64 / 10_000.0;
        assert!((frac - 0.1).abs() <= 0.02, "wrong fraction {frac}");
    }

    #[test]
    fn oracle_is_deterministic() {
        let config = OracleConfig {
            noise_rate: 0.5,
            seed: 3,
            ..OracleConfig::default()
        };
        let img = patch_of(HistologicPattern::Lepidic, 4);
        for i in 0..50 {
            assert_eq!(oracle_classify(&img, &config, i), oracle_classify(&img, &config, i));
        }
    }

    #[test]
    fn dominant_color_vote_with_noise_and_ties() {
        let colors = ClassColorMap::default();
        let mut img = patch_of(HistologicPattern::Solid, 4);
        for x in 0..2 {
            for y in 0..4 {
                let [r, g, b] = colors.color(HistologicPattern::Acinar);
                img.put_pixel(x, y, Rgb([r + 2, g - 2, b]));
            }
        }
        // 8 vs 8 pixels: lower canonical index wins
        assert_eq!(colors.dominant(&img), HistologicPattern::Acinar);
        img.put_pixel(0, 0, Rgb(colors.color(HistologicPattern::Solid)));
        assert_eq!(colors.dominant(&img), HistologicPattern::Solid);
    }

    #[test]
    fn batch_contract() {
        let oracle = OracleClassifier::new(OracleConfig::default()).unwrap();
        assert!(oracle.classify_batch(&[]).unwrap().is_empty());
        let bad = [
            PatchInput {
                id: 1,
                image: patch_of(HistologicPattern::Acinar, 4),
            },
            PatchInput {
                id: 1,
                image: patch_of(HistologicPattern::Acinar, 4),
            },
        ];
        assert!(matches!(
            oracle.classify_batch(&bad),
            Err(GatewayError::InvalidRequest(_))
        ));
        let ragged = [
            PatchInput {
                id: 1,
                image: patch_of(HistologicPattern::Acinar, 4),
            },
            PatchInput {
                id: 2,
                image: patch_of(HistologicPattern::Acinar, 5),
            },
        ];
        assert!(matches!(
            oracle.classify_batch(&ragged),
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    #[test]
    fn config_validation() {
        let bad = OracleConfig {
            confidence: 0.1,
            ..OracleConfig::default()
        };
        assert!(OracleClassifier::new(bad).is_err());
        assert!(WorkerPool::new(WorkerConfig::default()).is_err());
        let json = r#"{"kind":"oracle","noise_rate":0.1}"#;
        let c: ClassifierConfig = serde_json::from_str(json).unwrap();
        assert!(matches!(c, ClassifierConfig::Oracle(ref o) if o.noise_rate == 0.1 && o.confidence == 0.9));
    }

    #[test]
    fn request_round_trip() {
        let p = PatchInput {
            id: 99,
            image: patch_of(HistologicPattern::Papillary, 6),
        };
        let line = encode_request(&p).unwrap();
        assert!(line.starts_with(r#"{"id":99,"side":6,"png_b64":""#));
        let back = decode_request(&line).unwrap();
        assert_eq!(back.id, 99);
        assert_eq!(back.image, p.image);
    }

    #[test]
    fn response_validation() {
        let ok = decode_response(r#"{"id":4,"probs":[0.1,0.2,0.3,0.1,0.2,0.1000001]}"#).unwrap();
        assert_eq!(ok.0, 4);
        assert!((ok.1.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            decode_response(r#"{"id":4,"probs":[0.2,0.2,0.2,0.2,0.2]}"#),
            Err(GatewayError::ProtocolViolation(_))
        ));
        assert!(matches!(
            decode_response(r#"{"id":4,"probs":[0.2,0.2,0.2,0.2,0.2,0.2]}"#),
            Err(GatewayError::ProtocolViolation(_))
        ));
        assert!(matches!(
            decode_response("not json"),
            Err(GatewayError::WorkerFailed(_))
        ));
    }
}
