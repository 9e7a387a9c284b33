//! Engine configuration: a TOML file, then `SPARSEDOC_*` environment
//! variables, then command-line overrides, each layer winning over the last.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapter_train::TrainConfig;
use crate::generation::{BackendOptions, DEFAULT_TEMPLATE};
use crate::sampler::SamplerConfig;

use super::EngineError;

pub const ENV_PREFIX: &str = "SPARSEDOC_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Offline,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Model name for remote providers; part of the cache key.
    pub name: String,
    pub endpoint: Option<String>,
    pub dims: usize,
    /// Seed of the offline embedder.
    pub seed: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Offline,
            name: "default".into(),
            endpoint: None,
            dims: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    /// Registered backend name: echo, extractive, scripted, simulated or http.
    pub backend: String,
    pub endpoint: Option<String>,
    /// Transcript file for the scripted backend.
    pub transcript: Option<PathBuf>,
    pub latency_base_ms: Option<f64>,
    pub latency_per_token_ms: Option<f64>,
    pub template: String,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: "extractive".into(),
            endpoint: None,
            transcript: None,
            latency_base_ms: None,
            latency_per_token_ms: None,
            template: DEFAULT_TEMPLATE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateLimits {
    /// Steady LLM request rate; unlimited when absent.
    pub llm_per_second: Option<f64>,
    pub llm_burst: u32,
    pub llm_max_inflight: usize,
    pub embed_max_inflight: usize,
}

impl Default for RateLimits {
    fn default() -> Self {
        Self {
            llm_per_second: None,
            llm_burst: 4,
            llm_max_inflight: 4,
            embed_max_inflight: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub store_root: PathBuf,
    pub text_provider: ProviderConfig,
    /// Separate image encoder; the text provider serves both when absent.
    pub image_provider: Option<ProviderConfig>,
    pub llm: LlmConfig,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub limits: RateLimits,
    /// Adapter name under the store's adapters directory, applied to queries.
    pub adapter: Option<String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            store_root: PathBuf::from("sparsedoc-store"),
            text_provider: ProviderConfig::default(),
            image_provider: None,
            llm: LlmConfig::default(),
            sampler: SamplerConfig::default(),
            train: TrainConfig::default(),
            limits: RateLimits::default(),
            adapter: None,
        }
    }
}

/// Every key settable from the environment or the command line.
pub const KEYS: &[&str] = &[
    "store_root",
    "text_provider.kind",
    "text_provider.name",
    "text_provider.endpoint",
    "text_provider.dims",
    "text_provider.seed",
    "image_provider.kind",
    "image_provider.name",
    "image_provider.endpoint",
    "image_provider.dims",
    "image_provider.seed",
    "llm.backend",
    "llm.endpoint",
    "llm.transcript",
    "llm.latency_base_ms",
    "llm.latency_per_token_ms",
    "llm.template",
    "sampler.k",
    "sampler.modality_floor",
    "train.temperature",
    "train.learning_rate",
    "train.epochs",
    "train.batch_size",
    "train.seed",
    "limits.llm_per_second",
    "limits.llm_burst",
    "limits.llm_max_inflight",
    "limits.embed_max_inflight",
    "adapter",
];

/// `sampler.k` becomes `SPARSEDOC_SAMPLER_K`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase())
}

const STRING_FIELDS: &[&str] = &["store_root", "kind", "name", "endpoint", "transcript", "backend", "template", "adapter"];

fn scalar(key: &str, raw: &str) -> toml::Value {
    let field = key.rsplit('.').next().unwrap_or(key);
    if STRING_FIELDS.contains(&field) {
        return toml::Value::String(raw.to_string());
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    match raw {
        "true" => toml::Value::Boolean(true),
        "false" => toml::Value::Boolean(false),
        _ => toml::Value::String(raw.to_string()),
    }
}

fn set_key(root: &mut toml::Table, key: &str, raw: &str) -> Result<(), EngineError> {
    if !KEYS.contains(&key) {
        return Err(EngineError::Config(format!("unknown config key `{key}`")));
    }
    let mut table = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            table.insert(part.to_string(), scalar(key, raw));
            break;
        }
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| EngineError::Config(format!("`{part}` is not a table")))?;
    }
    Ok(())
}

fn from_table(table: toml::Table) -> Result<EngineConfig, EngineError> {
    let text = toml::to_string(&table).map_err(|e| EngineError::Config(e.to_string()))?;
    let config: EngineConfig = toml::from_str(&text).map_err(|e| EngineError::Config(e.to_string()))?;
    Ok(config)
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        let config: EngineConfig = toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        Ok(config)
    }

    /// Layers `file`, then variables from `env`, then `cli` pairs of
    /// `(key, value)`, and validates the result.
    pub fn resolve(
        file: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        cli: &[(String, String)],
    ) -> Result<Self, EngineError> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| EngineError::Config(format!("cannot read {}: {e}", path.display())))?;
                // Parse once as the typed config so unknown keys are reported.
                Self::from_toml(&text)?;
                text.parse::<toml::Table>().map_err(|e| EngineError::Config(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for key in KEYS {
            if let Some(value) = env(&env_name(key)).filter(|v| !v.is_empty()) {
                set_key(&mut table, key, &value)?;
            }
        }
        for (key, value) in cli {
            set_key(&mut table, key, value)?;
        }
        let config = from_table(table)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.sampler.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        for p in std::iter::once(&self.text_provider).chain(&self.image_provider) {
            if p.dims == 0 {
                return Err(EngineError::Config("provider dims must be positive".into()));
            }
            if p.kind == ProviderKind::Http && p.endpoint.is_none() {
                return Err(EngineError::Config("http provider needs an endpoint".into()));
            }
        }
        if let Some(image) = &self.image_provider {
            if image.dims != self.text_provider.dims {
                return Err(EngineError::Config("text and image providers must share dims".into()));
            }
        }
        Ok(())
    }

    pub fn backend_options(&self) -> BackendOptions {
        BackendOptions {
            endpoint: self.llm.endpoint.clone(),
            transcript: self.llm.transcript.clone(),
            latency_base_ms: self.llm.latency_base_ms,
            latency_per_token_ms: self.llm.latency_per_token_ms,
            max_inflight: Some(self.limits.llm_max_inflight),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn precedence_cli_over_env_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("engine.toml");
        std::fs::write(&file, "store_root = \"from-file\"\n[sampler]\nk = 3\n[llm]\nbackend = \"echo\"\n").unwrap();
        let env = BTreeMap::from([
            ("SPARSEDOC_SAMPLER_K".to_string(), "7".to_string()),
            ("SPARSEDOC_STORE_ROOT".to_string(), "from-env".to_string()),
        ]);
        let cli = vec![("sampler.k".to_string(), "9".to_string())];
        let c = EngineConfig::resolve(Some(&file), |k| env.get(k).cloned(), &cli).unwrap();
        assert_eq!(c.sampler.k, 9);
        assert_eq!(c.store_root, PathBuf::from("from-env"));
        assert_eq!(c.llm.backend, "echo");
        assert_eq!(c.text_provider.dims, 64);
    }

    #[test]
    fn defaults_and_validation() {
        let c = EngineConfig::resolve(None, |_| None, &[]).unwrap();
        assert_eq!(c.sampler.k, 5);
        let bad = vec![("sampler.k".to_string(), "0".to_string())];
        assert!(EngineConfig::resolve(None, |_| None, &bad).is_err());
        let tau = vec![("train.temperature".to_string(), "0".to_string())];
        assert!(EngineConfig::resolve(None, |_| None, &tau).is_err());
        let unknown = vec![("sampler.kk".to_string(), "1".to_string())];
        assert!(EngineConfig::resolve(None, |_| None, &unknown).is_err());
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        assert!(EngineConfig::from_toml("[sampler]\nkay = 1\n").is_err());
    }

    #[test]
    fn every_key_round_trips_through_toml() {
        let defaults = toml::Table::try_from(EngineConfig::default()).unwrap();
        for key in KEYS {
            let head = key.split('.').next().unwrap();
            let known = defaults.contains_key(head) || ["image_provider", "adapter"].contains(&head);
            assert!(known, "{key}");
        }
        assert_eq!(env_name("limits.llm_burst"), "SPARSEDOC_LIMITS_LLM_BURST");
    }
}
