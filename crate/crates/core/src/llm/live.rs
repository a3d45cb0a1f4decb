use std::env;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{CompletionRequest, CompletionResult, GatewayError, LlmBackend};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiveConfig {
    /// Full URL of a chat-completion endpoint.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    /// Extra attempts after a failed request.
    pub retries: u32,
    pub timeout: Duration,
}

impl LiveConfig {
    /// Read `LLM_ENDPOINT`, `LLM_API_KEY` and `LLM_MODEL`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let endpoint =
            env::var("LLM_ENDPOINT").map_err(|_| GatewayError::BackendUnavailable("LLM_ENDPOINT is not set".into()))?;
        Ok(Self {
            endpoint,
            api_key: env::var("LLM_API_KEY").ok().filter(|k| !k.is_empty()),
            model: env::var("LLM_MODEL").unwrap_or_else(|_| "default".into()),
            retries: 1,
            timeout: Duration::from_secs(120),
        })
    }
}

/// Sends `{model, messages}` to an HTTP chat-completion endpoint and takes
/// the text of the first choice.
pub struct LiveBackend {
    config: LiveConfig,
    agent: ureq::Agent,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self { config, agent }
    }

    fn payload(&self, req: &CompletionRequest) -> Value {
        let b = &req.bundle;
        let system = format!("{}\n\n{}", b.role_instructions, b.output_schema_hint);
        let user = format!(
            "Debugger context:\n{}\n\nConversation:\n{}",
            b.context_summary,
            b.transcript_window.join("\n")
        );
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        if req.determinism == super::Determinism::Deterministic {
            body["temperature"] = json!(0);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<String, String> {
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(body).map_err(|e| e.to_string())?;
        let v: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        extract_text(&v).ok_or_else(|| "response has no choices".to_string())
    }
}

pub(crate) fn extract_text(v: &Value) -> Option<String> {
    let choice = v["choices"].get(0)?;
    choice["message"]["content"]
        .as_str()
        .or_else(|| choice["text"].as_str())
        .map(str::to_string)
}

impl LlmBackend for LiveBackend {
    fn id(&self) -> &str {
        "live"
    }

    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let body = self.payload(req);
        let started = Instant::now();
        let mut last_err = String::new();
        for attempt in 0..=self.config.retries {
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(CompletionResult {
                        text,
                        backend_id: self.id().to_string(),
                        latency_ms: started.elapsed().as_millis() as u64,
                    })
                }
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "live completion failed");
                    last_err = e;
                }
            }
        }
        Err(GatewayError::BackendUnavailable(last_err))
    }
}
