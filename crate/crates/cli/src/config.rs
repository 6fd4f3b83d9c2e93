//! Effective configuration: built-in defaults, then a TOML file, then
//! `KGLINK_*` environment variables, then command-line flags.

use std::path::{Path, PathBuf};

use kglink_core::pipeline::DEFAULT_CALL_BUDGET;
use serde::{Deserialize, Serialize};

use kglink_core::index::DEFAULT_CANDIDATES;
use kglink_core::kg::DEFAULT_NEIGHBORS;
use kglink_core::llm::DEFAULT_SCORING_TOP_K;

pub const REDACTED: &str = "<redacted>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LlmBackendKind {
    /// An HTTP completion endpoint.
    #[default]
    Http,
    /// Scripted responses from a rule table.
    Mock,
    /// Responses recorded earlier with `--record`.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub backend: LlmBackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    /// Rule table for the mock backend; the bundled table when unset.
    pub mock_rules: Option<PathBuf>,
    /// Cassette file for the replay backend.
    pub cassette: Option<PathBuf>,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            backend: LlmBackendKind::Http,
            endpoint: None,
            model: None,
            api_key: None,
            mock_rules: None,
            cassette: None,
            max_in_flight: 4,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgSection {
    /// N-Triples file loaded into memory; takes precedence over the endpoint.
    pub fixture: Option<PathBuf>,
    pub sparql_endpoint: Option<String>,
    pub max_in_flight: Option<usize>,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkingSection {
    pub n: usize,
    pub k: usize,
    pub call_budget: usize,
    pub scoring_top_k: usize,
}

impl Default for LinkingSection {
    fn default() -> Self {
        Self {
            n: DEFAULT_CANDIDATES,
            k: DEFAULT_NEIGHBORS,
            call_budget: DEFAULT_CALL_BUDGET,
            scoring_top_k: DEFAULT_SCORING_TOP_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
    pub workers: usize,
    pub queue_capacity: usize,
    pub job_ttl_secs: u64,
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            workers: 2,
            queue_capacity: 16,
            job_ttl_secs: 3600,
            ui_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Directory written by `ingest`. Without it the index is built from
    /// the KG fixture's labels at startup.
    pub index: Option<PathBuf>,
    pub llm: LlmSection,
    pub kg: KgSection,
    pub linking: LinkingSection,
    pub service: ServiceSection,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn parse_env<T: std::str::FromStr>(name: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Env {
        name: name.to_string(),
        message: e.to_string(),
    })
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Applies `KGLINK_*` variables; unknown names are ignored.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (name, value) in vars {
            let Some(key) = name.strip_prefix("KGLINK_") else {
                continue;
            };
            match key {
                "INDEX" => self.index = Some(value.into()),
                "LLM_BACKEND" => {
                    self.llm.backend = <LlmBackendKind as clap::ValueEnum>::from_str(&value, true)
                        .map_err(|message| ConfigError::Env { name, message })?
                }
                "LLM_ENDPOINT" => self.llm.endpoint = Some(value),
                "LLM_MODEL" => self.llm.model = Some(value),
                "LLM_API_KEY" => self.llm.api_key = Some(value),
                "MOCK_RULES" => self.llm.mock_rules = Some(value.into()),
                "CASSETTE" => self.llm.cassette = Some(value.into()),
                "KG_FIXTURE" => self.kg.fixture = Some(value.into()),
                "SPARQL_ENDPOINT" => self.kg.sparql_endpoint = Some(value),
                "N" => self.linking.n = parse_env(&name, &value)?,
                "K" => self.linking.k = parse_env(&name, &value)?,
                "CALL_BUDGET" => self.linking.call_budget = parse_env(&name, &value)?,
                "BIND" => self.service.bind = value,
                "WORKERS" => self.service.workers = parse_env(&name, &value)?,
                "QUEUE_CAPACITY" => self.service.queue_capacity = parse_env(&name, &value)?,
                "JOB_TTL_SECS" => self.service.job_ttl_secs = parse_env(&name, &value)?,
                "UI_DIR" => self.service.ui_dir = Some(value.into()),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let l = &self.linking;
        if l.n == 0 || l.k == 0 {
            return Err(ConfigError::Invalid("n and k must be at least 1".into()));
        }
        if l.call_budget == 0 || l.scoring_top_k == 0 {
            return Err(ConfigError::Invalid("call_budget and scoring_top_k must be at least 1".into()));
        }
        if self.service.workers == 0 {
            return Err(ConfigError::Invalid("service.workers must be at least 1".into()));
        }
        Ok(())
    }

    /// A copy that is safe to print or serve.
    pub fn redacted(&self) -> Self {
        let mut c = self.clone();
        if c.llm.api_key.is_some() {
            c.llm.api_key = Some(REDACTED.into());
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kglink.toml");
        std::fs::write(
            &path,
            "index = \"idx\"\n[llm]\nbackend = \"mock\"\napi_key = \"s3cret\"\n[linking]\nn = 5\n",
        )
        .unwrap();
        let mut c = Config::from_file(&path).unwrap();
        assert_eq!((c.linking.n, c.linking.k), (5, 10));
        assert_eq!(c.llm.backend, LlmBackendKind::Mock);
        c.apply_env(env(&[("KGLINK_N", "7"), ("KGLINK_LLM_BACKEND", "http"), ("PATH", "/bin")]))
            .unwrap();
        assert_eq!(c.linking.n, 7);
        assert_eq!(c.llm.backend, LlmBackendKind::Http);
        assert_eq!(c.redacted().llm.api_key.as_deref(), Some(REDACTED));
        assert_eq!(c.llm.api_key.as_deref(), Some("s3cret"));
    }

    #[test]
    fn bad_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[linking]\nnn = 5\n").unwrap();
        assert!(matches!(Config::from_file(&path), Err(ConfigError::Parse { .. })));
        let mut c = Config::default();
        assert!(matches!(c.apply_env(env(&[("KGLINK_K", "many")])), Err(ConfigError::Env { .. })));
        c.linking.k = 0;
        assert!(c.validate().is_err());
    }
}
