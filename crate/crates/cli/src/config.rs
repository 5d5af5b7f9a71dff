//! Run configuration: TOML file, then environment, then command-line flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use idic_core::eval::{EmbeddingKind, IntentSource, LlmKind, PipelineConfig, RetrievalMode};
use idic_core::http::RetryPolicy;
use idic_core::llm::Dialect;
use serde::{Deserialize, Serialize};

pub const ENV_LLM_URL: &str = "IDIC_LLM_URL";
pub const ENV_EMBED_URL: &str = "IDIC_EMBED_URL";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub intent: IntentSection,
    pub retrieval: RetrievalSection,
    pub llm: LlmSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Schema JSON; the bundled MultiWOZ schema when unset.
    pub schema: Option<PathBuf>,
    /// Canonical JSONL the example pool is built from.
    pub pool: Option<PathBuf>,
    /// Canonical JSONL to evaluate.
    pub eval: Option<PathBuf>,
    /// Share of pool dialogues kept, in (0, 1].
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntentSection {
    pub backend: IntentSource,
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub mode: RetrievalMode,
    pub k: usize,
    pub provider: EmbeddingKind,
    pub endpoint: Option<String>,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmSection {
    pub backend: LlmKind,
    pub endpoint: Option<String>,
    pub dialect: Dialect,
    pub model: Option<String>,
    /// Replay fixture (read for `replay`; appended to by `remote` when
    /// `record` is set).
    pub fixture: Option<PathBuf>,
    pub record: bool,
    pub timeout_secs: u64,
    pub retries: u32,
    pub concurrency: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub prompt_budget: usize,
    pub gold_threading: bool,
    pub workers: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            schema: None,
            pool: None,
            eval: None,
            fraction: 1.0,
        }
    }
}

impl Default for IntentSection {
    fn default() -> Self {
        Self {
            backend: IntentSource::Oracle,
            endpoint: None,
        }
    }
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            mode: RetrievalMode::IntentMasked,
            k: idic_core::retrieval::DEFAULT_K,
            provider: EmbeddingKind::Lexical,
            endpoint: None,
            batch_size: 64,
        }
    }
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            backend: LlmKind::Oracle,
            endpoint: None,
            dialect: Dialect::Minimal,
            model: None,
            fixture: None,
            record: false,
            timeout_secs: 60,
            retries: 3,
            concurrency: idic_core::llm::DEFAULT_CONCURRENCY,
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            prompt_budget: idic_core::sql::DEFAULT_PROMPT_BUDGET,
            gold_threading: false,
            workers: 4,
        }
    }
}

/// Values given on the command line; `None` leaves the lower layers alone.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub fraction: Option<f64>,
    pub llm: Option<LlmKind>,
    pub embed: Option<EmbeddingKind>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Loads `path` (or defaults), then applies `env` lookups and `flags`.
    /// Relative data paths are resolved against the config file's folder.
    pub fn load(path: Option<&Path>, env: impl Fn(&str) -> Option<String>, flags: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let mut c = Self::from_toml(&text).with_context(|| format!("parsing config {}", p.display()))?;
                if let Some(dir) = p.parent() {
                    c.resolve_paths(dir);
                }
                c
            }
            None => Self::default(),
        };
        if let Some(url) = env(ENV_LLM_URL).filter(|u| !u.is_empty()) {
            config.llm.endpoint = Some(url);
        }
        if let Some(url) = env(ENV_EMBED_URL).filter(|u| !u.is_empty()) {
            config.retrieval.endpoint = Some(url);
        }
        config.apply(flags);
        config.check()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        for p in [
            &mut self.data.schema,
            &mut self.data.pool,
            &mut self.data.eval,
            &mut self.llm.fixture,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }

    fn apply(&mut self, flags: &Overrides) {
        if let Some(seed) = flags.seed {
            self.seed = seed;
        }
        if let Some(k) = flags.k {
            self.retrieval.k = k;
        }
        if let Some(f) = flags.fraction {
            self.data.fraction = f;
        }
        if let Some(llm) = flags.llm {
            self.llm.backend = llm;
        }
        if let Some(embed) = flags.embed {
            self.retrieval.provider = embed;
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.data.fraction > 0.0 && self.data.fraction <= 1.0) {
            bail!("data.fraction must be in (0, 1], got {}", self.data.fraction);
        }
        if self.retrieval.provider == EmbeddingKind::Remote && self.retrieval.endpoint.is_none() {
            bail!("retrieval.provider = \"remote\" needs retrieval.endpoint or {ENV_EMBED_URL}");
        }
        if self.llm.backend == LlmKind::Remote && self.llm.endpoint.is_none() {
            bail!("llm.backend = \"remote\" needs llm.endpoint or {ENV_LLM_URL}");
        }
        if self.llm.backend == LlmKind::Replay && self.llm.fixture.is_none() {
            bail!("llm.backend = \"replay\" needs llm.fixture");
        }
        if self.llm.record && self.llm.fixture.is_none() {
            bail!("llm.record needs llm.fixture");
        }
        if self.intent.backend == IntentSource::Model && self.intent.endpoint.is_none() {
            bail!("intent.backend = \"model\" needs intent.endpoint");
        }
        if self.retrieval.batch_size == 0 || self.llm.concurrency == 0 || self.eval.workers == 0 {
            bail!("batch_size, concurrency and workers must be positive");
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            intent_backend: self.intent.backend,
            retrieval_mode: self.retrieval.mode,
            k: self.retrieval.k,
            embedding_provider: self.retrieval.provider,
            llm_backend: self.llm.backend,
            prompt_budget: self.eval.prompt_budget,
            seed: self.seed,
            gold_threading: self.eval.gold_threading,
            workers: self.eval.workers,
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            timeout: Duration::from_secs(self.llm.timeout_secs),
            retries: self.llm.retries,
            ..RetryPolicy::default()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sede = 3").is_err());
        assert!(RunConfig::from_toml("[retrieval]\nkk = 3").is_err());
        assert!(RunConfig::from_toml("[llm]\nbackend = \"gpt\"").is_err());
    }

    #[test]
    fn precedence_file_env_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "seed = 1\n[retrieval]\nk = 3\nendpoint = \"http://file\"\n[llm]\nendpoint = \"http://file-llm\"\n[data]\npool = \"pool.jsonl\"\n",
        )
        .unwrap();
        let env = |k: &str| (k == ENV_EMBED_URL).then(|| "http://env".to_string());
        let c = RunConfig::load(Some(&path), env, &Overrides { k: Some(7), ..Default::default() }).unwrap();
        assert_eq!(c.seed, 1);
        assert_eq!(c.retrieval.k, 7);
        assert_eq!(c.retrieval.endpoint.as_deref(), Some("http://env"));
        assert_eq!(c.llm.endpoint.as_deref(), Some("http://file-llm"));
        assert_eq!(c.data.pool, Some(dir.path().join("pool.jsonl")));
    }

    #[test]
    fn inconsistent_settings_fail() {
        let flags = |llm| Overrides { llm: Some(llm), ..Default::default() };
        assert!(RunConfig::load(None, no_env, &flags(LlmKind::Remote)).is_err());
        assert!(RunConfig::load(None, no_env, &flags(LlmKind::Replay)).is_err());
        let env = |k: &str| (k == ENV_LLM_URL).then(|| "http://x".to_string());
        assert!(RunConfig::load(None, env, &flags(LlmKind::Remote)).is_ok());
        let bad = Overrides { fraction: Some(0.0), ..Default::default() };
        assert!(RunConfig::load(None, no_env, &bad).is_err());
    }
}
