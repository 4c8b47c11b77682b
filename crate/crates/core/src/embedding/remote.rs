use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{EmbeddingBackend, EmbeddingCache, EmbeddingError};
use crate::http::{HttpTransport, InFlightLimiter, RetryPolicy, UreqTransport};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    /// Declared vector size; responses of any other size are rejected.
    pub dim: usize,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, dim: usize) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            api_key: None,
            dim,
            batch_size: 64,
            max_in_flight: 4,
            timeout: Duration::from_secs(30),
            retry: RetryPolicy::default(),
        }
    }

    /// Read EMBED_ENDPOINT, EMBED_API_KEY and EMBED_DIM (default 768).
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var("EMBED_ENDPOINT").ok()?;
        let dim = std::env::var("EMBED_DIM")
            .ok()
            .and_then(|d| d.parse().ok())
            .unwrap_or(768);
        let mut cfg = Self::new(endpoint, dim);
        cfg.api_key = std::env::var("EMBED_API_KEY").ok();
        Some(cfg)
    }
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

/// Client for `POST {"texts": [...]} -> {"vectors": [[...]], "dim": N}`.
pub struct RemoteEmbedder {
    config: RemoteConfig,
    backend_id: String,
    transport: Arc<dyn HttpTransport>,
    cache: Option<EmbeddingCache>,
    limiter: InFlightLimiter,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig, cache: Option<EmbeddingCache>) -> Self {
        let transport = Arc::new(UreqTransport::new(config.timeout));
        Self::with_transport(config, cache, transport)
    }

    pub fn with_transport(
        config: RemoteConfig,
        cache: Option<EmbeddingCache>,
        transport: Arc<dyn HttpTransport>,
    ) -> Self {
        let backend_id = format!("remote:{}#d{}", config.endpoint, config.dim);
        let limiter = InFlightLimiter::new(config.max_in_flight);
        RemoteEmbedder {
            config,
            backend_id,
            transport,
            cache,
            limiter,
        }
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let body = json!({ "texts": texts });
        let value = {
            let _slot = self.limiter.acquire();
            self.config.retry.run(|| {
                self.transport
                    .post_json(&self.config.endpoint, self.config.api_key.as_deref(), &body)
            })
        }
        .map_err(|e| EmbeddingError::Backend {
            status: e.status(),
            message: e.to_string(),
        })?;
        let resp: EmbedResponse =
            serde_json::from_value(value).map_err(|e| EmbeddingError::Protocol(e.to_string()))?;
        if resp.dim != self.config.dim {
            return Err(EmbeddingError::Protocol(format!(
                "service reports dim {} but {} was declared",
                resp.dim, self.config.dim
            )));
        }
        if resp.vectors.len() != texts.len() {
            return Err(EmbeddingError::Protocol(format!(
                "{} vectors for {} texts",
                resp.vectors.len(),
                texts.len()
            )));
        }
        if let Some(v) = resp.vectors.iter().find(|v| v.len() != self.config.dim) {
            return Err(EmbeddingError::Protocol(format!(
                "vector of length {} but dim {}",
                v.len(),
                self.config.dim
            )));
        }
        Ok(resp.vectors)
    }
}

impl EmbeddingBackend for RemoteEmbedder {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        let mut missing = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            match &self.cache {
                Some(c) => match c.get(&self.backend_id, t)? {
                    Some(v) => out[i] = Some(v),
                    None => missing.push(i),
                },
                None => missing.push(i),
            }
        }
        for chunk in missing.chunks(self.config.batch_size.max(1)) {
            let batch: Vec<&str> = chunk.iter().map(|&i| texts[i]).collect();
            let vectors = self.request(&batch)?;
            for (&i, v) in chunk.iter().zip(vectors) {
                if let Some(c) = &self.cache {
                    c.put(&self.backend_id, texts[i], &v)?;
                }
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::embed;
    use crate::http::TransportError;
    use serde_json::Value;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Fake {
        calls: AtomicUsize,
        dim: usize,
        fail_with: Option<u16>,
    }

    impl HttpTransport for Fake {
        fn post_json(&self, _url: &str, _key: Option<&str>, body: &Value) -> Result<Value, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if let Some(status) = self.fail_with {
                return Err(TransportError::Status { status, body: "nope".into() });
            }
            let n = body["texts"].as_array().unwrap().len();
            Ok(json!({ "vectors": vec![vec![1.0; self.dim]; n], "dim": self.dim }))
        }
    }

    fn client(fake: Arc<Fake>, cache: Option<EmbeddingCache>) -> RemoteEmbedder {
        let mut cfg = RemoteConfig::new("http://embed.invalid", 3);
        cfg.retry = RetryPolicy::no_delay(2);
        RemoteEmbedder::with_transport(cfg, cache, fake)
    }

    #[test]
    fn cache_hit_skips_network() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::new(dir.path());
        let fake = Arc::new(Fake { calls: AtomicUsize::new(0), dim: 3, fail_with: None });
        let c = client(fake.clone(), Some(cache.clone()));
        cache.put(c.backend_id(), "The lungs are clear.", &[0.5, 0.5, 0.0]).unwrap();
        let v = embed(&c, &["The lungs are clear."]).unwrap();
        assert_eq!(v[0].values, [0.5, 0.5, 0.0]);
        assert_eq!(fake.calls.load(Ordering::SeqCst), 0);
        embed(&c, &["No effusion."]).unwrap();
        embed(&c, &["No effusion."]).unwrap();
        assert_eq!(fake.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn dimension_mismatch_is_protocol_error() {
        let fake = Arc::new(Fake { calls: AtomicUsize::new(0), dim: 4, fail_with: None });
        let err = embed(&client(fake, None), &["x"]).unwrap_err();
        assert!(matches!(err, EmbeddingError::Protocol(_)), "{err}");
    }

    #[test]
    fn transport_failure_carries_status() {
        let fake = Arc::new(Fake { calls: AtomicUsize::new(0), dim: 3, fail_with: Some(502) });
        let err = embed(&client(fake.clone(), None), &["x"]).unwrap_err();
        assert!(matches!(err, EmbeddingError::Backend { status: Some(502), .. }));
        assert_eq!(fake.calls.load(Ordering::SeqCst), 2);
    }
}
