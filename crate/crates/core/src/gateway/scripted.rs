use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{elapsed_ms, GatewayError, ModelGateway, ModelRequest, ModelResponse, ModelRole};

/// Conditions a request must meet to consume a tape entry. Absent fields
/// match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestMatcher {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<ModelRole>,
    /// Substring of the system prompt or user text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    /// Hex SHA-256 of an attached image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_sha256: Option<String>,
}

impl RequestMatcher {
    pub fn role(role: ModelRole) -> Self {
        Self {
            role: Some(role),
            ..Self::default()
        }
    }

    pub fn containing(mut self, needle: impl Into<String>) -> Self {
        self.contains = Some(needle.into());
        self
    }

    pub fn image(mut self, sha256: impl Into<String>) -> Self {
        self.image_sha256 = Some(sha256.into());
        self
    }

    fn mismatch(&self, req: &ModelRequest) -> Option<String> {
        if let Some(role) = self.role {
            if role != req.role {
                return Some(format!("expected role {role}, got {}", req.role));
            }
        }
        if let Some(needle) = &self.contains {
            if !req.system_prompt.contains(needle.as_str())
                && !req.user_text().contains(needle.as_str())
            {
                return Some(format!("request text does not contain {needle:?}"));
            }
        }
        if let Some(digest) = &self.image_sha256 {
            if !req
                .images()
                .any(|img| img.sha256().eq_ignore_ascii_case(digest))
            {
                return Some(format!("no attached image has sha256 {digest}"));
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TapeFault {
    Transport {
        #[serde(default)]
        message: String,
    },
    RateLimited {
        #[serde(default)]
        retry_after_ms: Option<u64>,
    },
    Refused {
        status: u16,
        #[serde(default)]
        body: String,
    },
}

impl TapeFault {
    fn to_error(&self) -> GatewayError {
        match self {
            TapeFault::Transport { message } => GatewayError::Transport(message.clone()),
            TapeFault::RateLimited { retry_after_ms } => GatewayError::RateLimited {
                retry_after: retry_after_ms.map(Duration::from_millis),
            },
            TapeFault::Refused { status, body } => GatewayError::BackendRefused {
                status: *status,
                body: body.clone(),
            },
        }
    }
}

/// One scripted exchange: `{"match": {...}, "response": "..."}` or
/// `{"match": {...}, "fault": {"kind": "transport"}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapeEntry {
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub matcher: Option<RequestMatcher>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<TapeFault>,
    /// Holds the call open this long before answering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<u64>,
}

impl TapeEntry {
    pub fn respond(text: impl Into<String>) -> Self {
        Self {
            matcher: None,
            response: Some(text.into()),
            fault: None,
            delay_ms: None,
        }
    }

    pub fn fail(fault: TapeFault) -> Self {
        Self {
            matcher: None,
            response: None,
            fault: Some(fault),
            delay_ms: None,
        }
    }

    pub fn when(mut self, matcher: RequestMatcher) -> Self {
        self.matcher = Some(matcher);
        self
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay_ms = Some(delay.as_millis() as u64);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScriptedTape {
    entries: Vec<TapeEntry>,
}

impl ScriptedTape {
    pub fn new(entries: Vec<TapeEntry>) -> Self {
        Self { entries }
    }

    pub fn from_json_str(raw: &str) -> Result<Self, GatewayError> {
        let tape: ScriptedTape = serde_json::from_str(raw)
            .map_err(|e| GatewayError::Tape(format!("unreadable tape: {e}")))?;
        for (i, entry) in tape.entries.iter().enumerate() {
            if entry.response.is_some() == entry.fault.is_some() {
                return Err(GatewayError::Tape(format!(
                    "entry {i} must have exactly one of `response` or `fault`"
                )));
            }
        }
        Ok(tape)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Tape(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&raw)
    }

    pub fn push(&mut self, entry: TapeEntry) {
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub tape_index: usize,
    pub role: ModelRole,
    pub system_prompt: String,
    pub user_text: String,
    pub image_digests: Vec<String>,
}

/// Replays a [`ScriptedTape`] in order. A request that does not satisfy the
/// next entry's matcher, or arrives after the tape is used up, fails with
/// [`GatewayError::Tape`].
#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    state: Mutex<TapeState>,
}

#[derive(Debug)]
struct TapeState {
    pending: VecDeque<(usize, TapeEntry)>,
    calls: Vec<RecordedCall>,
}

impl ScriptedBackend {
    pub fn new(tape: ScriptedTape) -> Self {
        Self::with_id("scripted", tape)
    }

    pub fn with_id(id: impl Into<String>, tape: ScriptedTape) -> Self {
        Self {
            id: id.into(),
            state: Mutex::new(TapeState {
                pending: tape.entries.into_iter().enumerate().collect(),
                calls: Vec::new(),
            }),
        }
    }

    /// Requests received so far, including ones that failed to match.
    pub fn call_count(&self) -> usize {
        self.state.lock().unwrap().calls.len()
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.state.lock().unwrap().calls.clone()
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().unwrap().pending.len()
    }

    /// Appends entries, e.g. to script a follow-up run on the same backend.
    pub fn extend(&self, tape: ScriptedTape) {
        let mut state = self.state.lock().unwrap();
        let next = state.calls.len() + state.pending.len();
        state.pending.extend(
            tape.entries
                .into_iter()
                .enumerate()
                .map(|(i, e)| (next + i, e)),
        );
    }

    fn take(&self, req: &ModelRequest) -> Result<TapeEntry, GatewayError> {
        let mut state = self.state.lock().unwrap();
        let call_no = state.calls.len();
        let next = state.pending.pop_front();
        state.calls.push(RecordedCall {
            tape_index: next.as_ref().map(|(i, _)| *i).unwrap_or(usize::MAX),
            role: req.role,
            system_prompt: req.system_prompt.clone(),
            user_text: req.user_text(),
            image_digests: req.images().map(|i| i.sha256().to_string()).collect(),
        });
        let Some((index, entry)) = next else {
            return Err(GatewayError::Tape(format!(
                "tape exhausted at call {}",
                call_no + 1
            )));
        };
        if let Some(why) = entry.matcher.as_ref().and_then(|m| m.mismatch(req)) {
            return Err(GatewayError::Tape(format!(
                "entry {index} does not match request: {why}"
            )));
        }
        Ok(entry)
    }
}

#[async_trait]
impl ModelGateway for ScriptedBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    async fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let start = Instant::now();
        let entry = self.take(req)?;
        if let Some(ms) = entry.delay_ms.filter(|ms| *ms > 0) {
            tokio::time::sleep(Duration::from_millis(ms)).await;
        }
        match (entry.response, entry.fault) {
            (_, Some(fault)) => Err(fault.to_error()),
            (Some(text), None) => Ok(ModelResponse {
                text,
                backend_id: self.id.clone(),
                latency_ms: elapsed_ms(start),
            }),
            (None, None) => Err(GatewayError::Tape(
                "entry has neither response nor fault".into(),
            )),
        }
    }
}
