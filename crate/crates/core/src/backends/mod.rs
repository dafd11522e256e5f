//! Client side of the three external model roles (LLM question generator,
//! VQA answerer, NR-IQA scorer).
//!
//! Every backend, remote or mock, returns the verbatim JSON body of its
//! wire-protocol reply. The role clients ([`VqaClient`], [`IqaClient`],
//! [`LlmClient`]) put a content-addressed [`DiskCache`], a concurrency cap and
//! the transport retry policy in front of it, and parse the reply.

pub mod cache;
pub mod http;
pub mod mock;
pub mod protocol;

use crate::degrade::Sidecar;
use crate::qgen::Question;
use crate::scoring::{normalize_answer, AnswerLabel, IqaScore};
use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::future::Future;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};
use thiserror::Error;
use tokio::sync::Semaphore;

pub use cache::{CacheError, CacheKey, DiskCache};
pub use http::HttpBackend;
pub use mock::{
    oracle_vqa, AttributeTable, FixedIqa, FixedVqa, OracleVqa, ScriptedLlm, SidecarIqa,
};

/// Default cap on in-flight requests per client.
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Llm,
    Vqa,
    Iqa,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Llm => "llm",
            Role::Vqa => "vqa",
            Role::Iqa => "iqa",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    /// Connection failure or timeout. The only retryable kind.
    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("protocol error from {backend_id}: {message}")]
    Protocol { backend_id: String, message: String },
    #[error("backend {backend_id} returned status {status}: {message}")]
    Status {
        backend_id: String,
        status: u16,
        message: String,
    },
    #[error("unknown image id {0:?}")]
    UnknownImage(String),
    #[error("endpoint {backend_id} has role {actual}, expected {expected}")]
    WrongRole {
        backend_id: String,
        expected: Role,
        actual: Role,
    },
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("bad input image: {0}")]
    Input(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }

    fn protocol(backend_id: &str, message: impl fmt::Display) -> Self {
        BackendError::Protocol {
            backend_id: backend_id.to_string(),
            message: message.to_string(),
        }
    }
}

/// Where a remote backend lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendEndpoint {
    pub role: Role,
    /// Base URL; protocol paths such as `/v1/vqa` are appended.
    pub url: String,
    pub backend_id: String,
    pub timeout: Duration,
    pub bearer_token: Option<String>,
}

impl BackendEndpoint {
    pub fn new(role: Role, url: impl Into<String>) -> Result<Self, BackendError> {
        let url = url.into();
        Self::with_id(role, url.clone(), url)
    }

    pub fn with_id(
        role: Role,
        url: impl Into<String>,
        backend_id: impl Into<String>,
    ) -> Result<Self, BackendError> {
        let backend_id = backend_id.into();
        if backend_id.is_empty() {
            return Err(BackendError::Config("backend_id must be nonempty".into()));
        }
        Ok(Self {
            role,
            url: url.into(),
            backend_id,
            timeout: Duration::from_secs(60),
            bearer_token: None,
        })
    }

    pub fn timeout(mut self, timeout: Duration) -> Result<Self, BackendError> {
        if timeout.is_zero() {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        self.timeout = timeout;
        Ok(self)
    }

    pub fn bearer_token(mut self, token: Option<String>) -> Self {
        self.bearer_token = token;
        self
    }
}

/// An image as sent to backends: PNG bytes plus the metadata mock backends
/// key on.
#[derive(Debug, Clone)]
pub struct ImageInput {
    pub image_id: String,
    png: Arc<[u8]>,
    digest: [u8; 32],
    pub sidecar: Option<Sidecar>,
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

impl ImageInput {
    pub fn from_png(image_id: impl Into<String>, png: Vec<u8>) -> Self {
        let digest = Sha256::digest(&png).into();
        Self {
            image_id: image_id.into(),
            png: png.into(),
            digest,
            sidecar: None,
        }
    }

    pub fn with_sidecar(mut self, sidecar: Option<Sidecar>) -> Self {
        self.sidecar = sidecar;
        self
    }

    /// Reads an image file. PNG files are sent verbatim, other formats are
    /// re-encoded to PNG. A degradation sidecar next to the file is attached.
    pub fn load(image_id: impl Into<String>, path: &Path) -> Result<Self, BackendError> {
        let input = |e: &dyn fmt::Display| BackendError::Input(format!("{}: {e}", path.display()));
        let bytes = std::fs::read(path).map_err(|e| input(&e))?;
        let png = if bytes.starts_with(PNG_SIGNATURE) {
            bytes
        } else {
            let img = image::load_from_memory(&bytes).map_err(|e| input(&e))?;
            let mut out = std::io::Cursor::new(Vec::new());
            img.write_to(&mut out, image::ImageFormat::Png)
                .map_err(|e| input(&e))?;
            out.into_inner()
        };
        let sidecar = Sidecar::load_for(path).map_err(|e| input(&e))?;
        Ok(Self::from_png(image_id, png).with_sidecar(sidecar))
    }

    pub fn png(&self) -> &[u8] {
        &self.png
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }
}

#[async_trait]
pub trait VqaBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Extra request identity beyond image bytes and question, for backends
    /// whose answer depends on out-of-band metadata.
    fn cache_context(&self, _image: &ImageInput) -> Option<String> {
        None
    }

    /// Returns the raw `{"answer": ...}` reply body.
    async fn answer(&self, image: &ImageInput, question: &str) -> Result<Vec<u8>, BackendError>;
}

#[async_trait]
pub trait IqaBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn cache_context(&self, _image: &ImageInput) -> Option<String> {
        None
    }

    /// Returns the raw `{"score": ...}` reply body. `text` is only passed to
    /// caption-aware baseline scorers.
    async fn score(&self, image: &ImageInput, text: Option<&str>) -> Result<Vec<u8>, BackendError>;
}

#[async_trait]
pub trait LlmBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Returns the raw `{"text": ...}` reply body.
    async fn generate(&self, prompt: &str) -> Result<Vec<u8>, BackendError>;
}

/// Counters exposed by every role client.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallStats {
    pub backend_calls: u64,
    pub cache_hits: u64,
}

struct CallCore {
    cache: Option<Arc<DiskCache>>,
    limiter: Arc<Semaphore>,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl CallCore {
    fn new() -> Self {
        Self {
            cache: None,
            limiter: Arc::new(Semaphore::new(DEFAULT_MAX_IN_FLIGHT)),
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    fn stats(&self) -> CallStats {
        CallStats {
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }

    /// Cache lookup, then a capped backend call with one retry on transport
    /// errors. The reply is cached only once it parses.
    async fn call<T, P, F, Fut>(
        &self,
        key: &CacheKey,
        parse: P,
        fetch: F,
    ) -> Result<(T, bool), BackendError>
    where
        P: Fn(&[u8]) -> Result<T, BackendError>,
        F: Fn() -> Fut,
        Fut: Future<Output = Result<Vec<u8>, BackendError>>,
    {
        if let Some(cache) = &self.cache {
            if let Some(bytes) = cache.get(key) {
                match parse(&bytes) {
                    Ok(v) => {
                        self.cache_hits.fetch_add(1, Ordering::Relaxed);
                        return Ok((v, true));
                    }
                    Err(e) => tracing::warn!("unparseable cache entry treated as miss: {e}"),
                }
            }
        }
        let _permit = self
            .limiter
            .acquire()
            .await
            .expect("limiter is never closed");
        self.backend_calls.fetch_add(1, Ordering::Relaxed);
        let bytes = match fetch().await {
            Err(e) if e.is_retryable() => {
                tracing::warn!("retrying after transport error: {e}");
                self.backend_calls.fetch_add(1, Ordering::Relaxed);
                fetch().await?
            }
            other => other?,
        };
        let value = parse(&bytes)?;
        if let Some(cache) = &self.cache {
            cache.put(key, &bytes)?;
        }
        Ok((value, false))
    }
}

#[derive(Serialize)]
struct CanonicalRequest<'a> {
    image_sha256: Option<String>,
    text: Option<&'a str>,
    context: Option<String>,
}

fn canonical_body(image: Option<&ImageInput>, text: Option<&str>, context: Option<String>) -> Vec<u8> {
    serde_json::to_vec(&CanonicalRequest {
        image_sha256: image.map(ImageInput::digest_hex),
        text,
        context,
    })
    .expect("canonical request serializes")
}

/// A VQA answer, normalized to a label at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct VqaResponse {
    raw_answer: String,
    label: AnswerLabel,
    latency: Duration,
    backend_id: String,
    cached: bool,
}

impl VqaResponse {
    pub fn new(raw_answer: impl Into<String>, latency: Duration, backend_id: impl Into<String>) -> Self {
        let raw_answer = raw_answer.into();
        Self {
            label: normalize_answer(&raw_answer),
            raw_answer,
            latency,
            backend_id: backend_id.into(),
            cached: false,
        }
    }

    pub fn raw_answer(&self) -> &str {
        &self.raw_answer
    }

    pub fn label(&self) -> AnswerLabel {
        self.label
    }

    pub fn latency(&self) -> Duration {
        self.latency
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn cached(&self) -> bool {
        self.cached
    }
}

macro_rules! client_common {
    ($client:ident, $backend:ident) => {
        impl $client {
            pub fn new(backend: Arc<dyn $backend>) -> Self {
                Self {
                    backend,
                    core: CallCore::new(),
                }
            }

            pub fn with_cache(mut self, cache: Option<Arc<DiskCache>>) -> Self {
                self.core.cache = cache;
                self
            }

            pub fn with_max_in_flight(mut self, n: usize) -> Self {
                self.core.limiter = Arc::new(Semaphore::new(n.max(1)));
                self
            }

            pub fn backend_id(&self) -> &str {
                self.backend.backend_id()
            }

            pub fn stats(&self) -> CallStats {
                self.core.stats()
            }
        }
    };
}

pub struct VqaClient {
    backend: Arc<dyn VqaBackend>,
    core: CallCore,
}

client_common!(VqaClient, VqaBackend);

impl VqaClient {
    pub async fn ask(&self, image: &ImageInput, question: &Question) -> Result<VqaResponse, BackendError> {
        let id = self.backend.backend_id();
        let key = CacheKey::new(
            Role::Vqa,
            id,
            &canonical_body(Some(image), Some(question.text()), self.backend.cache_context(image)),
        );
        let started = Instant::now();
        let (reply, cached) = self
            .core
            .call(
                &key,
                |b| serde_json::from_slice::<protocol::VqaReply>(b).map_err(|e| BackendError::protocol(id, e)),
                || self.backend.answer(image, question.text()),
            )
            .await?;
        let mut response = VqaResponse::new(reply.answer, started.elapsed(), id);
        response.cached = cached;
        Ok(response)
    }
}

pub struct IqaClient {
    backend: Arc<dyn IqaBackend>,
    core: CallCore,
}

client_common!(IqaClient, IqaBackend);

impl IqaClient {
    /// Scores an image. The raw value is preserved, the normalized value is
    /// clamped into `[0, 1]`; raw values beyond the sanity bound are a
    /// protocol error.
    pub async fn score(&self, image: &ImageInput) -> Result<IqaScore, BackendError> {
        self.score_with_text(image, None).await
    }

    pub async fn score_with_text(
        &self,
        image: &ImageInput,
        text: Option<&str>,
    ) -> Result<IqaScore, BackendError> {
        let id = self.backend.backend_id();
        let key = CacheKey::new(
            Role::Iqa,
            id,
            &canonical_body(Some(image), text, self.backend.cache_context(image)),
        );
        let parse = |b: &[u8]| {
            let reply: protocol::IqaReply =
                serde_json::from_slice(b).map_err(|e| BackendError::protocol(id, e))?;
            IqaScore::from_raw(reply.score, id).map_err(|e| BackendError::protocol(id, e))
        };
        let (score, _) = self
            .core
            .call(&key, parse, || self.backend.score(image, text))
            .await?;
        Ok(score)
    }
}

pub struct LlmClient {
    backend: Arc<dyn LlmBackend>,
    core: CallCore,
}

client_common!(LlmClient, LlmBackend);

impl LlmClient {
    fn key(&self, prompt: &str) -> CacheKey {
        CacheKey::new(
            Role::Llm,
            self.backend.backend_id(),
            &canonical_body(None, Some(prompt), None),
        )
    }

    pub async fn generate(&self, prompt: &str) -> Result<String, BackendError> {
        let id = self.backend.backend_id();
        let (reply, _) = self
            .core
            .call(
                &self.key(prompt),
                |b| serde_json::from_slice::<protocol::GenerateReply>(b).map_err(|e| BackendError::protocol(id, e)),
                || self.backend.generate(prompt),
            )
            .await?;
        Ok(reply.text)
    }

    /// Drops a cached reply, so the next `generate` reaches the backend.
    pub fn evict(&self, prompt: &str) {
        if let Some(cache) = &self.core.cache {
            cache.remove(&self.key(prompt));
        }
    }
}

/// A backend address as written in configuration: an `http(s)://` base URL
/// or one of the `mock:` schemes.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Http(String),
    /// Attribute-table VQA oracle.
    MockOracle,
    /// IQA from degradation sidecars.
    MockSidecar,
    /// Fixed answer (VQA) or fixed score (IQA).
    MockFixed(String),
}

impl FromStr for BackendSpec {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock:oracle" => Ok(BackendSpec::MockOracle),
            "mock:sidecar" => Ok(BackendSpec::MockSidecar),
            _ => {
                if let Some(v) = s.strip_prefix("mock:fixed=") {
                    Ok(BackendSpec::MockFixed(v.to_string()))
                } else if s.starts_with("http://") || s.starts_with("https://") {
                    Ok(BackendSpec::Http(s.to_string()))
                } else {
                    Err(BackendError::Config(format!(
                        "unrecognized backend {s:?}; expected an http(s):// URL, mock:oracle, mock:sidecar or mock:fixed=<value>"
                    )))
                }
            }
        }
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Http(url) => f.write_str(url),
            BackendSpec::MockOracle => f.write_str("mock:oracle"),
            BackendSpec::MockSidecar => f.write_str("mock:sidecar"),
            BackendSpec::MockFixed(v) => write!(f, "mock:fixed={v}"),
        }
    }
}

/// Settings shared when turning a [`BackendSpec`] into a backend.
#[derive(Debug, Clone, Default)]
pub struct BackendOptions {
    pub timeout: Option<Duration>,
    pub bearer_token: Option<String>,
    /// Required by `mock:oracle`.
    pub attributes: Option<Arc<AttributeTable>>,
}

impl BackendSpec {
    fn endpoint(&self, role: Role, url: &str, opts: &BackendOptions) -> Result<BackendEndpoint, BackendError> {
        let mut ep = BackendEndpoint::new(role, url)?.bearer_token(opts.bearer_token.clone());
        if let Some(t) = opts.timeout {
            ep = ep.timeout(t)?;
        }
        Ok(ep)
    }

    pub fn vqa_backend(&self, opts: &BackendOptions) -> Result<Arc<dyn VqaBackend>, BackendError> {
        Ok(match self {
            BackendSpec::Http(url) => Arc::new(HttpBackend::new(self.endpoint(Role::Vqa, url, opts)?)?),
            BackendSpec::MockOracle => {
                let table = opts.attributes.clone().ok_or_else(|| {
                    BackendError::Config("mock:oracle needs attribute tables in the dataset".into())
                })?;
                Arc::new(OracleVqa::new(table))
            }
            BackendSpec::MockFixed(answer) => Arc::new(FixedVqa::new(answer.clone())),
            BackendSpec::MockSidecar => {
                return Err(BackendError::Config("mock:sidecar is an IQA backend".into()))
            }
        })
    }

    pub fn iqa_backend(&self, opts: &BackendOptions) -> Result<Arc<dyn IqaBackend>, BackendError> {
        Ok(match self {
            BackendSpec::Http(url) => Arc::new(HttpBackend::new(self.endpoint(Role::Iqa, url, opts)?)?),
            BackendSpec::MockSidecar => Arc::new(SidecarIqa::new()),
            BackendSpec::MockFixed(v) => {
                let score = v
                    .parse::<f64>()
                    .map_err(|_| BackendError::Config(format!("mock:fixed needs a number, got {v:?}")))?;
                Arc::new(FixedIqa::new(score))
            }
            BackendSpec::MockOracle => {
                return Err(BackendError::Config("mock:oracle is a VQA backend".into()))
            }
        })
    }

    pub fn llm_backend(&self, opts: &BackendOptions) -> Result<Arc<dyn LlmBackend>, BackendError> {
        match self {
            BackendSpec::Http(url) => Ok(Arc::new(HttpBackend::new(self.endpoint(Role::Llm, url, opts)?)?)),
            other => Err(BackendError::Config(format!(
                "{other} cannot serve as an LLM backend; use an http(s):// URL"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_spec_parsing() {
        assert_eq!("mock:oracle".parse::<BackendSpec>().unwrap(), BackendSpec::MockOracle);
        assert_eq!("mock:sidecar".parse::<BackendSpec>().unwrap(), BackendSpec::MockSidecar);
        assert_eq!(
            "mock:fixed=0.8".parse::<BackendSpec>().unwrap(),
            BackendSpec::MockFixed("0.8".into())
        );
        assert_eq!(
            "http://localhost:8000".parse::<BackendSpec>().unwrap(),
            BackendSpec::Http("http://localhost:8000".into())
        );
        assert!("ftp://x".parse::<BackendSpec>().is_err());
        assert!("mock:nope".parse::<BackendSpec>().is_err());
        for s in ["mock:oracle", "mock:fixed=yes", "https://a.b/c"] {
            assert_eq!(s.parse::<BackendSpec>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn spec_roles_are_checked() {
        let opts = BackendOptions::default();
        assert!(BackendSpec::MockSidecar.vqa_backend(&opts).is_err());
        assert!(BackendSpec::MockOracle.iqa_backend(&opts).is_err());
        assert!(BackendSpec::MockOracle.vqa_backend(&opts).is_err(), "no table");
        assert!(BackendSpec::MockFixed("x".into()).iqa_backend(&opts).is_err());
        assert!(BackendSpec::MockFixed("yes".into()).llm_backend(&opts).is_err());
    }

    #[test]
    fn endpoint_invariants() {
        assert!(BackendEndpoint::with_id(Role::Vqa, "http://x", "").is_err());
        let ep = BackendEndpoint::new(Role::Vqa, "http://x").unwrap();
        assert!(ep.clone().timeout(Duration::ZERO).is_err());
        assert_eq!(ep.backend_id, "http://x");
    }

    #[test]
    fn vqa_response_label_follows_raw() {
        let r = VqaResponse::new("Yes, it is.", Duration::ZERO, "b");
        assert_eq!(r.label(), AnswerLabel::Yes);
        let r = VqaResponse::new("nope", Duration::ZERO, "b");
        assert_eq!(r.label(), AnswerLabel::No);
    }
}
