use std::time::Duration;

use serde_json::{json, Value};

use super::{LanguageModel, ModelError};

pub const ENV_ENDPOINT: &str = "GABM_MODEL_ENDPOINT";
pub const ENV_KEY: &str = "GABM_MODEL_KEY";
pub const ENV_MODEL_NAME: &str = "GABM_MODEL_NAME";

/// Translates between prompts and one provider's wire format.
pub trait WireAdapter: Send + Sync {
    /// Path appended to the endpoint base URL.
    fn path(&self) -> &str;

    fn request_body(&self, config: &HttpConfig, prompt: &str, max_tokens: usize) -> Value;

    fn parse_response(&self, body: &Value) -> Result<String, ModelError>;
}

/// OpenAI-compatible `chat/completions`.
#[derive(Debug, Default, Clone, Copy)]
pub struct OpenAiChatAdapter;

impl WireAdapter for OpenAiChatAdapter {
    fn path(&self) -> &str {
        "/chat/completions"
    }

    fn request_body(&self, config: &HttpConfig, prompt: &str, max_tokens: usize) -> Value {
        let mut body = json!({
            "model": config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": max_tokens,
        });
        if let Some(t) = config.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(seed) = config.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn parse_response(&self, body: &Value) -> Result<String, ModelError> {
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                ModelError::BackendUnavailable(format!(
                    "response has no choices[0].message.content: {}",
                    truncate(&body.to_string(), 200)
                ))
            })
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model_name: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub temperature: Option<f64>,
    pub seed: Option<u64>,
    pub context_window: Option<usize>,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            api_key: None,
            model_name: model_name.into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            temperature: None,
            seed: None,
            context_window: Some(8192),
        }
    }

    /// Reads `GABM_MODEL_ENDPOINT`, `GABM_MODEL_KEY` and `GABM_MODEL_NAME`.
    /// Returns `None` when no endpoint is configured.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.trim().is_empty())?;
        let name = std::env::var(ENV_MODEL_NAME).unwrap_or_else(|_| "gpt-4o-mini".to_string());
        let mut config = HttpConfig::new(endpoint, name);
        config.api_key = std::env::var(ENV_KEY).ok().filter(|s| !s.is_empty());
        Some(config)
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.trim_end_matches('/'), path)
    }
}

/// Blocking HTTP backend with retries.
pub struct HttpModel {
    config: HttpConfig,
    adapter: Box<dyn WireAdapter>,
    agent: ureq::Agent,
    backend_id: String,
}

impl std::fmt::Debug for HttpModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpModel")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model_name)
            .finish()
    }
}

impl HttpModel {
    pub fn new(config: HttpConfig, adapter: Box<dyn WireAdapter>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        let backend_id = format!("http:{}", config.model_name);
        HttpModel {
            config,
            adapter,
            agent,
            backend_id,
        }
    }

    pub fn openai(config: HttpConfig) -> Self {
        Self::new(config, Box::new(OpenAiChatAdapter))
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn post_once(&self, body: &Value) -> Result<Value, String> {
        let mut request = self
            .agent
            .post(self.config.url(self.adapter.path()))
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request.send_json(body).map_err(|e| e.to_string())?;
        response
            .body_mut()
            .read_json::<Value>()
            .map_err(|e| e.to_string())
    }
}

impl LanguageModel for HttpModel {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, ModelError> {
        let body = self.adapter.request_body(&self.config, prompt, max_tokens);
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500 * u64::from(attempt)));
            }
            match self.post_once(&body) {
                Ok(value) => return self.adapter.parse_response(&value),
                Err(e) => last = e,
            }
        }
        Err(ModelError::BackendUnavailable(format!(
            "{} after {} attempts: {last}",
            self.config.endpoint,
            self.config.max_retries + 1
        )))
    }

    fn context_window(&self) -> Option<usize> {
        self.config.context_window
    }
}
