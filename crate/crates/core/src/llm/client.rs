//! Chat-completion clients: a remote JSON endpoint and a deterministic replay file.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::LlmError;
use crate::http::{HttpTransport, InFlightLimiter, RetryPolicy, UreqTransport};

pub trait LlmClient: Send + Sync {
    fn client_id(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

/// Hex sha256 of the prompt text; the replay file key.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone)]
pub struct RemoteLlmConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteLlmConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteLlmConfig {
            endpoint: endpoint.into(),
            api_key: None,
            max_in_flight: 2,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }

    /// Read LLM_ENDPOINT and LLM_API_KEY.
    pub fn from_env() -> Option<Self> {
        let mut cfg = Self::new(std::env::var("LLM_ENDPOINT").ok()?);
        cfg.api_key = std::env::var("LLM_API_KEY").ok();
        Some(cfg)
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// Client for `POST {"prompt": "..."} -> {"text": "..."}`.
pub struct RemoteLlm {
    config: RemoteLlmConfig,
    id: String,
    transport: Arc<dyn HttpTransport>,
    limiter: InFlightLimiter,
}

impl RemoteLlm {
    pub fn new(config: RemoteLlmConfig) -> Self {
        let transport = Arc::new(UreqTransport::new(config.timeout));
        Self::with_transport(config, transport)
    }

    pub fn with_transport(config: RemoteLlmConfig, transport: Arc<dyn HttpTransport>) -> Self {
        RemoteLlm {
            id: format!("remote:{}", config.endpoint),
            limiter: InFlightLimiter::new(config.max_in_flight),
            config,
            transport,
        }
    }
}

impl LlmClient for RemoteLlm {
    fn client_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let body = json!({ "prompt": prompt });
        let value = {
            let _slot = self.limiter.acquire();
            self.config
                .retry
                .run(|| self.transport.post_json(&self.config.endpoint, self.config.api_key.as_deref(), &body))
        }
        .map_err(|e| LlmError::Client { status: e.status(), message: e.to_string() })?;
        let resp: CompletionResponse = serde_json::from_value(value).map_err(|e| LlmError::Protocol(e.to_string()))?;
        Ok(resp.text)
    }
}

/// Canned responses keyed by prompt hash. A prompt with no entry is an error.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayClient {
    responses: BTreeMap<String, String>,
    id: String,
}

impl ReplayClient {
    pub fn from_map(responses: BTreeMap<String, String>) -> Self {
        let mut h = Sha256::new();
        for (k, v) in &responses {
            h.update(k.as_bytes());
            h.update([0]);
            h.update(v.as_bytes());
            h.update([0]);
        }
        let fp = hex::encode(h.finalize());
        ReplayClient { responses, id: format!("replay-{}", &fp[..12]) }
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        Ok(Self::from_map(serde_json::from_str(text).map_err(|e| LlmError::ReplayFormat(e.to_string()))?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LlmError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    /// Build from (prompt text, response) pairs.
    pub fn from_prompts<I, P, R>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (P, R)>,
        P: AsRef<str>,
        R: Into<String>,
    {
        Self::from_map(pairs.into_iter().map(|(p, r)| (prompt_hash(p.as_ref()), r.into())).collect())
    }

    pub fn responses(&self) -> &BTreeMap<String, String> {
        &self.responses
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.responses).expect("string map serializes")
    }
}

impl LlmClient for ReplayClient {
    fn client_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let hash = prompt_hash(prompt);
        self.responses.get(&hash).cloned().ok_or(LlmError::ReplayMiss { hash })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::TransportError;
    use serde_json::Value;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn replay_hit_and_miss() {
        let c = ReplayClient::from_prompts([("hello", "Cardiomegaly_Cardiomegaly: absent")]);
        assert_eq!(c.complete("hello").unwrap(), "Cardiomegaly_Cardiomegaly: absent");
        assert!(matches!(c.complete("other"), Err(LlmError::ReplayMiss { .. })));
        let again = ReplayClient::from_json(&c.to_json()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn hash_is_sha256_hex() {
        assert_eq!(prompt_hash(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    struct Flaky(AtomicUsize);

    impl HttpTransport for Flaky {
        fn post_json(&self, _url: &str, _key: Option<&str>, body: &Value) -> Result<Value, TransportError> {
            if self.0.fetch_add(1, Ordering::SeqCst) == 0 {
                return Err(TransportError::Status { status: 503, body: "busy".into() });
            }
            Ok(json!({ "text": format!("echo {}", body["prompt"].as_str().unwrap()) }))
        }
    }

    #[test]
    fn remote_retries_then_succeeds() {
        let mut cfg = RemoteLlmConfig::new("http://llm.invalid");
        cfg.retry = RetryPolicy::no_delay(3);
        let c = RemoteLlm::with_transport(cfg, Arc::new(Flaky(AtomicUsize::new(0))));
        assert_eq!(c.complete("hi").unwrap(), "echo hi");
    }

    #[test]
    fn remote_gives_up() {
        struct Down;
        impl HttpTransport for Down {
            fn post_json(&self, _: &str, _: Option<&str>, _: &Value) -> Result<Value, TransportError> {
                Err(TransportError::Network("refused".into()))
            }
        }
        let mut cfg = RemoteLlmConfig::new("http://llm.invalid");
        cfg.retry = RetryPolicy::no_delay(2);
        let c = RemoteLlm::with_transport(cfg, Arc::new(Down));
        assert!(matches!(c.complete("hi"), Err(LlmError::Client { .. })));
    }
}
