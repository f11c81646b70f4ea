use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    elapsed_ms, GatewayError, ModelGateway, ModelRequest, ModelResponse, ModelRole, ResponseFormat,
    UserPart,
};

pub const ENV_ENDPOINT: &str = "MODEL_ENDPOINT";
pub const ENV_API_KEY: &str = "MODEL_API_KEY";
pub const ENV_MODEL: &str = "MODEL_NAME";

const BODY_EXCERPT_LEN: usize = 512;

/// Connection settings for an OpenAI-compatible endpoint.
///
/// `models` overrides `model` per role, so transcription can go to a vision
/// model while QA uses a smaller text model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub endpoint: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub models: BTreeMap<ModelRole, String>,
    pub timeout_secs: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            api_key: None,
            model: "o4-mini".into(),
            models: BTreeMap::new(),
            timeout_secs: 120,
        }
    }
}

impl GatewayConfig {
    /// Overlays `MODEL_ENDPOINT`, `MODEL_API_KEY`, `MODEL_NAME` and
    /// `MODEL_NAME_<ROLE>` from the environment.
    pub fn apply_env(mut self) -> Self {
        self.apply_vars(|key| std::env::var(key).ok());
        self
    }

    fn apply_vars(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(endpoint) = get(ENV_ENDPOINT) {
            self.endpoint = endpoint;
        }
        if let Some(key) = get(ENV_API_KEY) {
            self.api_key = Some(key);
        }
        if let Some(model) = get(ENV_MODEL) {
            self.model = model;
        }
        for role in ModelRole::ALL {
            let var = format!("{ENV_MODEL}_{}", role.as_str().to_ascii_uppercase());
            if let Some(model) = get(&var) {
                self.models.insert(role, model);
            }
        }
    }

    pub fn model_for(&self, role: ModelRole) -> &str {
        self.models
            .get(&role)
            .map(String::as_str)
            .unwrap_or(&self.model)
    }
}

/// Client for `POST {endpoint}/chat/completions`.
#[derive(Debug, Clone)]
pub struct OpenAiCompatible {
    config: GatewayConfig,
    client: reqwest::Client,
    id: String,
}

impl OpenAiCompatible {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let id = format!(
            "openai-compatible:{}",
            config.endpoint.trim_end_matches('/')
        );
        Ok(Self { config, client, id })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.endpoint.trim_end_matches('/')
        )
    }

    /// Wire body for one request.
    pub fn request_body(&self, req: &ModelRequest) -> Value {
        let content: Vec<Value> = req
            .user_parts
            .iter()
            .map(|part| match part {
                UserPart::Text(text) => json!({"type": "text", "text": text}),
                UserPart::Image(img) => {
                    let data = base64::engine::general_purpose::STANDARD.encode(img.bytes());
                    json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:{};base64,{data}", img.media_type())}
                    })
                }
            })
            .collect();
        let mut body = json!({
            "model": self.config.model_for(req.role),
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": content},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        if req.response_format == ResponseFormat::JsonObject {
            body["response_format"] = json!({"type": "json_object"});
        }
        body
    }
}

fn excerpt(body: &str) -> String {
    match body.char_indices().nth(BODY_EXCERPT_LEN) {
        Some((cut, _)) => format!("{}...", &body[..cut]),
        None => body.to_string(),
    }
}

/// Pulls `choices[0].message.content`, accepting either a string or a list
/// of text parts.
fn message_text(body: &Value) -> Option<String> {
    let content = body
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

#[async_trait]
impl ModelGateway for OpenAiCompatible {
    fn backend_id(&self) -> &str {
        &self.id
    }

    async fn complete(&self, req: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        req.check()?;
        let start = Instant::now();
        let mut call = self
            .client
            .post(self.url())
            .header("content-type", "application/json")
            .body(self.request_body(req).to_string());
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call
            .send()
            .await
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(GatewayError::RateLimited { retry_after });
        }
        let text = resp
            .text()
            .await
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(GatewayError::BackendRefused {
                status: status.as_u16(),
                body: excerpt(&text),
            });
        }
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| GatewayError::MalformedResponse(format!("{e}: {}", excerpt(&text))))?;
        let text = message_text(&body).ok_or_else(|| {
            GatewayError::MalformedResponse(format!("no message content: {}", excerpt(&text)))
        })?;
        Ok(ModelResponse {
            text,
            backend_id: self.id.clone(),
            latency_ms: elapsed_ms(start),
        })
    }
}
