//! Run settings, manifests and the batch drivers behind the CLI.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{EmbeddingBackend, EmbeddingCache, RemoteConfig, RemoteEmbedder};
use crate::llm::{LlmBaseline, LlmClient, LlmError, PromptConfig};
use crate::pipeline::{ExtractionResult, Pipeline, PipelineConfig, PipelineError};
use crate::record::{ReportInput, ResultRecord};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path} is invalid: {message}")]
    Toml { path: String, message: String },
    #[error("environment variable {name}={value:?} is invalid")]
    Env { name: String, value: String },
    #[error("EMBED_ENDPOINT is required for the remote embedding backend")]
    NoEmbedEndpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Builtin,
    Remote,
}

/// Every tunable of a run. Precedence: flags, then environment, then the TOML
/// file, then these defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub prompt: PromptConfig,
    pub backend: BackendKind,
    /// Directory for the remote embedding cache.
    pub embed_cache: Option<String>,
    pub jobs: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            pipeline: PipelineConfig::default(),
            prompt: PromptConfig::default(),
            backend: BackendKind::Builtin,
            embed_cache: None,
            jobs: 1,
        }
    }
}

/// Environment variables read by [`Settings::apply_env`].
pub const ENV_THRESHOLD: &str = "RADCDE_THRESHOLD";
pub const ENV_FEWSHOT_THRESHOLD: &str = "RADCDE_FEWSHOT_THRESHOLD";
pub const ENV_TOKEN_BUDGET: &str = "RADCDE_TOKEN_BUDGET";
pub const ENV_JOBS: &str = "RADCDE_JOBS";
pub const ENV_BACKEND: &str = "RADCDE_BACKEND";

impl Settings {
    pub fn from_toml(text: &str, path: &str) -> Result<Self, SettingsError> {
        toml::from_str(text).map_err(|e| SettingsError::Toml { path: path.into(), message: e.to_string() })
    }

    /// Defaults, overlaid by the file when given.
    pub fn load(path: Option<&Path>) -> Result<Self, SettingsError> {
        match path {
            None => Ok(Settings::default()),
            Some(p) => {
                let name = p.display().to_string();
                let text = std::fs::read_to_string(p).map_err(|source| SettingsError::Io { path: name.clone(), source })?;
                Self::from_toml(&text, &name)
            }
        }
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), SettingsError> {
        fn parse<T: std::str::FromStr>(name: &str, value: String) -> Result<T, SettingsError> {
            value.trim().parse().map_err(|_| SettingsError::Env { name: name.into(), value })
        }
        if let Some(v) = get(ENV_THRESHOLD) {
            self.pipeline.threshold = parse(ENV_THRESHOLD, v)?;
        }
        if let Some(v) = get(ENV_FEWSHOT_THRESHOLD) {
            self.prompt.threshold = parse(ENV_FEWSHOT_THRESHOLD, v)?;
        }
        if let Some(v) = get(ENV_TOKEN_BUDGET) {
            self.prompt.token_budget = parse(ENV_TOKEN_BUDGET, v)?;
        }
        if let Some(v) = get(ENV_JOBS) {
            self.jobs = parse(ENV_JOBS, v)?;
        }
        if let Some(v) = get(ENV_BACKEND) {
            self.backend = match v.trim() {
                "builtin" => BackendKind::Builtin,
                "remote" => BackendKind::Remote,
                _ => return Err(SettingsError::Env { name: ENV_BACKEND.into(), value: v }),
            };
        }
        Ok(())
    }

    pub fn apply_process_env(&mut self) -> Result<(), SettingsError> {
        self.apply_env(|k| std::env::var(k).ok())
    }

    /// The remote embedding backend, when selected.
    pub fn remote_backend(&self) -> Result<Option<Arc<dyn EmbeddingBackend>>, SettingsError> {
        if self.backend != BackendKind::Remote {
            return Ok(None);
        }
        let cfg = RemoteConfig::from_env().ok_or(SettingsError::NoEmbedEndpoint)?;
        let cache = self.embed_cache.as_ref().map(EmbeddingCache::new);
        Ok(Some(Arc::new(RemoteEmbedder::new(cfg, cache))))
    }
}

/// What produced a set of outputs. The digest covers everything but the timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub backend_id: Option<String>,
    pub client_id: Option<String>,
    /// Input path -> sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            backend_id: None,
            client_id: None,
            inputs: BTreeMap::new(),
            seed: None,
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn input_bytes(&mut self, name: &str, bytes: &[u8]) {
        self.inputs.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
    }

    pub fn input_file(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        self.input_bytes(&path.display().to_string(), &bytes);
        Ok(())
    }

    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        v.as_object_mut().expect("object").remove("timestamp");
        hex::encode(Sha256::digest(serde_json::to_string(&v).expect("value serializes").as_bytes()))
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        v.as_object_mut().expect("object").insert("digest".into(), self.digest().into());
        serde_json::to_string_pretty(&v).expect("value serializes")
    }
}

fn pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().expect("thread pool")
}

/// Run the pipeline over reports on `jobs` workers; output follows input order.
pub fn run_extraction(pipeline: &Pipeline, reports: &[ReportInput], jobs: usize) -> Result<Vec<ExtractionResult>, PipelineError> {
    use rayon::prelude::*;
    pool(jobs).install(|| reports.par_iter().map(|r| pipeline.extract(&r.report_id, &r.text)).collect())
}

/// Run the LLM baseline over reports on `jobs` workers; output follows input order.
pub fn run_llm(
    baseline: &LlmBaseline,
    client: &dyn LlmClient,
    reports: &[ReportInput],
    jobs: usize,
) -> Result<Vec<crate::llm::LlmResult>, LlmError> {
    use rayon::prelude::*;
    pool(jobs).install(|| reports.par_iter().map(|r| baseline.run(client, &r.report_id, &r.text)).collect())
}

/// Result records stamped with a manifest digest.
pub fn stamp(records: Vec<ResultRecord>, digest: &str) -> Vec<ResultRecord> {
    records.into_iter().map(|r| r.with_digest(digest)).collect()
}
