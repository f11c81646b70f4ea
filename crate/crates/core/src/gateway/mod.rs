//! Chat-completion backends behind one async interface.
//!
//! [`OpenAiCompatible`] talks to any `/chat/completions` endpoint;
//! [`ScriptedBackend`] replays a JSON tape so pipeline tests are
//! deterministic. Neither rewrites the text it returns.

mod openai;
mod scripted;

pub use openai::{GatewayConfig, OpenAiCompatible, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL};
pub use scripted::{
    RecordedCall, RequestMatcher, ScriptedBackend, ScriptedTape, TapeEntry, TapeFault,
};

use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Pipeline step a request belongs to; backends may pick a model per role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    Transcriber,
    Merger,
    Grouper,
    Qa,
    Judge,
}

impl ModelRole {
    pub const ALL: [ModelRole; 5] = [
        ModelRole::Transcriber,
        ModelRole::Merger,
        ModelRole::Grouper,
        ModelRole::Qa,
        ModelRole::Judge,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::Transcriber => "transcriber",
            ModelRole::Merger => "merger",
            ModelRole::Grouper => "grouper",
            ModelRole::Qa => "qa",
            ModelRole::Judge => "judge",
        }
    }
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Image attached to a request. The SHA-256 digest of the bytes identifies
/// it to the scripted backend.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageRef {
    media_type: String,
    bytes: Arc<[u8]>,
    sha256: String,
}

impl ImageRef {
    pub fn from_bytes(media_type: impl Into<String>, bytes: impl Into<Arc<[u8]>>) -> Self {
        let bytes = bytes.into();
        let sha256 = hex::encode(Sha256::digest(&bytes));
        Self {
            media_type: media_type.into(),
            bytes,
            sha256,
        }
    }

    /// Reads an image file; the media type comes from the extension.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        let media_type = match ext.as_str() {
            "png" => "image/png",
            "jpg" | "jpeg" => "image/jpeg",
            "gif" => "image/gif",
            "webp" => "image/webp",
            _ => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    format!("{}: unsupported image type `{ext}`", path.display()),
                ))
            }
        };
        let bytes = std::fs::read(path)?;
        Ok(Self::from_bytes(media_type, bytes))
    }

    pub fn media_type(&self) -> &str {
        &self.media_type
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn sha256(&self) -> &str {
        &self.sha256
    }
}

impl fmt::Debug for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageRef")
            .field("media_type", &self.media_type)
            .field("len", &self.bytes.len())
            .field("sha256", &self.sha256)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum UserPart {
    Text(String),
    Image(ImageRef),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    FreeText,
    JsonObject,
}

/// Sampling temperature for independent transcription and grouping samples.
pub const SAMPLING_TEMPERATURE: f64 = 0.7;
/// Temperature for merge, QA and judge calls.
pub const DETERMINISTIC_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    pub role: ModelRole,
    pub system_prompt: String,
    pub user_parts: Vec<UserPart>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub response_format: ResponseFormat,
}

impl ModelRequest {
    pub fn new(
        role: ModelRole,
        system_prompt: impl Into<String>,
        user_parts: Vec<UserPart>,
    ) -> Result<Self, GatewayError> {
        if user_parts.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "request has no user parts".into(),
            ));
        }
        Ok(Self {
            role,
            system_prompt: system_prompt.into(),
            user_parts,
            temperature: DETERMINISTIC_TEMPERATURE,
            max_output_tokens: 8192,
            response_format: ResponseFormat::JsonObject,
        })
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_output_tokens(mut self, tokens: u32) -> Self {
        self.max_output_tokens = tokens;
        self
    }

    pub fn with_response_format(mut self, format: ResponseFormat) -> Self {
        self.response_format = format;
        self
    }

    /// Text parts joined by newlines.
    pub fn user_text(&self) -> String {
        let texts: Vec<&str> = self
            .user_parts
            .iter()
            .filter_map(|p| match p {
                UserPart::Text(t) => Some(t.as_str()),
                UserPart::Image(_) => None,
            })
            .collect();
        texts.join("\n")
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageRef> {
        self.user_parts.iter().filter_map(|p| match p {
            UserPart::Image(img) => Some(img),
            UserPart::Text(_) => None,
        })
    }

    pub(crate) fn check(&self) -> Result<(), GatewayError> {
        if self.user_parts.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "request has no user parts".into(),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be a non-negative number, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited{}", retry_after.map(|d| format!(" (retry after {} ms)", d.as_millis())).unwrap_or_default())]
    RateLimited { retry_after: Option<Duration> },
    #[error("backend refused the request with status {status}: {body}")]
    BackendRefused { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("scripted tape: {0}")]
    Tape(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        last: Box<GatewayError>,
    },
}

impl GatewayError {
    /// Transport-level failures that a later attempt may not hit.
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) | GatewayError::RateLimited { .. } => true,
            GatewayError::BackendRefused { status, .. } => *status >= 500 || *status == 408,
            _ => false,
        }
    }
}

#[async_trait]
pub trait ModelGateway: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Sends one request and returns the backend's text unchanged.
    async fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, GatewayError>;
}

#[async_trait]
impl<T: ModelGateway + ?Sized> ModelGateway for Arc<T> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    async fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        (**self).complete(req).await
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
    #[serde(with = "millis")]
    pub max_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// `max_attempts` tries with no waiting in between.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_backoff: Duration::ZERO,
            max_backoff: Duration::ZERO,
            multiplier: 1.0,
        }
    }

    /// Wait before attempt `attempt + 1`, after `attempt` failures.
    pub fn backoff(&self, attempt: u32, err: &GatewayError) -> Duration {
        if let GatewayError::RateLimited {
            retry_after: Some(after),
        } = err
        {
            return (*after).min(self.max_backoff);
        }
        let factor = self
            .multiplier
            .max(1.0)
            .powi(attempt.saturating_sub(1) as i32);
        self.initial_backoff.mul_f64(factor).min(self.max_backoff)
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Calls `gateway` until it succeeds, a non-retryable error occurs, or
/// `policy.max_attempts` calls have been made, backing off exponentially
/// between transport-level failures.
pub async fn complete_with_retry(
    gateway: &dyn ModelGateway,
    req: &ModelRequest,
    policy: &RetryPolicy,
) -> Result<ModelResponse, GatewayError> {
    if policy.max_attempts == 0 {
        return Err(GatewayError::InvalidRequest(
            "retry policy allows zero attempts".into(),
        ));
    }
    req.check()?;
    let mut attempt = 0;
    loop {
        attempt += 1;
        let err = match gateway.complete(req).await {
            Ok(resp) => return Ok(resp),
            Err(err) if !err.is_retryable() => return Err(err),
            Err(err) => err,
        };
        if attempt >= policy.max_attempts {
            return Err(GatewayError::RetriesExhausted {
                attempts: attempt,
                last: Box::new(err),
            });
        }
        let wait = policy.backoff(attempt, &err);
        tracing::debug!(attempt, ?wait, error = %err, "retrying model call");
        if !wait.is_zero() {
            tokio::time::sleep(wait).await;
        }
    }
}

pub(crate) fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis().min(u64::MAX as u128) as u64
}
