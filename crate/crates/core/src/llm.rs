//! Completion backends: a remote HTTP endpoint, plus offline backends that
//! answer from gold annotations or from a recorded fixture.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{DialogueDataset, TurnRef};
use crate::http::{join_url, HttpError, JsonClient, RetryPolicy};
use crate::model::{Schema, SchemaError, StateChange};
use crate::sql::encode_delta_as_sql;

pub const DEFAULT_MAX_TOKENS: usize = 200;
pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error(transparent)]
    Transport(HttpError),
    #[error("completion backend error: HTTP {status}: {body}")]
    Backend { status: u16, body: String },
    #[error("completion backend protocol error: {0}")]
    Protocol(String),
    #[error("no gold state change for {0}")]
    MissingGold(String),
    #[error("replay fixture has no completion for prompt {0}")]
    UnknownPrompt(String),
    #[error("fixture {path}: {message}")]
    Fixture { path: String, message: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

impl From<HttpError> for LlmError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Status { status, body, .. } => LlmError::Backend { status, body },
            HttpError::Decode { message, .. } => LlmError::Protocol(message),
            other => LlmError::Transport(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: usize,
    pub temperature: f64,
    pub stop: Vec<String>,
    /// Turn the prompt was built for; only offline backends read it.
    pub metadata: Option<TurnRef>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: 0.0,
            stop: vec![";".to_string()],
            metadata: None,
        }
    }

    pub fn for_turn(mut self, turn: TurnRef) -> Self {
        self.metadata = Some(turn);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub latency: Duration,
    pub backend_id: String,
}

pub trait CompletionBackend: Send + Sync {
    fn id(&self) -> String;

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError>;
}

/// Hex SHA-256 of the prompt text; the replay fixture key.
pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Cuts `text` at the earliest stop sequence.
pub fn truncate_at_stop(text: &str, stop: &[String]) -> String {
    let end = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..end].to_string()
}

fn check(request: &CompletionRequest) -> Result<(), LlmError> {
    if request.prompt.is_empty() {
        return Err(LlmError::EmptyPrompt);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Remote
// ---------------------------------------------------------------------------

/// Request/response shape spoken by the remote endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    /// `POST {base}/complete` → `{"text": ..}`.
    Minimal,
    /// `POST {base}/v1/completions` → `{"choices": [{"text": ..}]}`.
    OpenAi,
}

#[derive(Serialize)]
struct MinimalRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    stop: &'a [String],
}

#[derive(Serialize)]
struct OpenAiRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct MinimalResponse {
    text: String,
}

#[derive(Deserialize)]
struct OpenAiChoice {
    text: String,
}

#[derive(Deserialize)]
struct OpenAiResponse {
    choices: Vec<OpenAiChoice>,
}

/// Counting semaphore bounding in-flight requests.
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteBackend {
    url: String,
    dialect: Dialect,
    model: Option<String>,
    http: JsonClient,
    limiter: Limiter,
}

impl RemoteBackend {
    pub fn new(base_url: &str, dialect: Dialect, policy: RetryPolicy) -> Self {
        let path = match dialect {
            Dialect::Minimal => "complete",
            Dialect::OpenAi => "v1/completions",
        };
        Self {
            url: join_url(base_url, path),
            dialect,
            model: None,
            http: JsonClient::new(policy),
            limiter: Limiter::new(DEFAULT_CONCURRENCY),
        }
    }

    /// Model name sent in the `model` field of OpenAI-style requests.
    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = Some(model.into());
        self
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.limiter = Limiter::new(n);
        self
    }
}

impl CompletionBackend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.url)
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        check(request)?;
        let _permit = self.limiter.acquire();
        let start = Instant::now();
        let raw = match self.dialect {
            Dialect::Minimal => {
                let body = MinimalRequest {
                    prompt: &request.prompt,
                    max_tokens: request.max_tokens,
                    temperature: request.temperature,
                    stop: &request.stop,
                };
                self.http.post_json::<_, MinimalResponse>(&self.url, &body)?.text
            }
            Dialect::OpenAi => {
                let body = OpenAiRequest {
                    model: self.model.as_deref(),
                    prompt: &request.prompt,
                    max_tokens: request.max_tokens,
                    temperature: request.temperature,
                    stop: &request.stop,
                };
                let resp: OpenAiResponse = self.http.post_json(&self.url, &body)?;
                resp.choices
                    .into_iter()
                    .next()
                    .ok_or_else(|| LlmError::Protocol("response has no choices".into()))?
                    .text
            }
        };
        Ok(CompletionResult {
            text: truncate_at_stop(&raw, &request.stop),
            latency: start.elapsed(),
            backend_id: self.id(),
        })
    }
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

/// Answers each turn with its gold state change encoded as SQL, minus the
/// trailing `;` that a stop sequence would consume.
pub struct OracleBackend {
    gold: HashMap<TurnRef, StateChange>,
    schema: Schema,
    corrupt: bool,
}

impl OracleBackend {
    pub fn new(gold: HashMap<TurnRef, StateChange>, schema: &Schema) -> Result<Self, LlmError> {
        for delta in gold.values() {
            delta.validate(schema)?;
        }
        Ok(Self {
            gold,
            schema: schema.clone(),
            corrupt: false,
        })
    }

    /// Gold deltas for every turn of `dataset`.
    pub fn from_dataset(dataset: &DialogueDataset) -> Result<Self, LlmError> {
        let gold = dataset
            .dialogues
            .iter()
            .flat_map(|d| {
                (0..d.turns.len()).map(move |t| (TurnRef::new(&d.dialogue_id, t), d.gold_change(t)))
            })
            .collect();
        Self::new(gold, &dataset.schema)
    }

    /// Drops the last WHERE conjunct (in encoding order) from every
    /// nonempty answer.
    pub fn corrupted(mut self) -> Self {
        self.corrupt = true;
        self
    }
}

impl CompletionBackend for OracleBackend {
    fn id(&self) -> String {
        if self.corrupt { "oracle-corrupted" } else { "oracle" }.to_string()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        check(request)?;
        let turn = request
            .metadata
            .as_ref()
            .ok_or_else(|| LlmError::MissingGold("request without turn metadata".into()))?;
        let mut delta = self
            .gold
            .get(turn)
            .ok_or_else(|| LlmError::MissingGold(turn.to_string()))?
            .clone();
        if self.corrupt {
            if let Some(last) = delta.keys().last().cloned() {
                delta.remove(&last);
            }
        }
        let sql = encode_delta_as_sql(&delta, &self.schema)?;
        Ok(CompletionResult {
            text: sql.strip_suffix(';').unwrap_or(&sql).to_string(),
            latency: Duration::ZERO,
            backend_id: self.id(),
        })
    }
}

// ---------------------------------------------------------------------------
// Record / replay
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub prompt_sha256: String,
    pub text: String,
}

pub struct ReplayBackend {
    path: PathBuf,
    entries: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        let fixture_err = |message: String| LlmError::Fixture {
            path: path.display().to_string(),
            message,
        };
        let file = File::open(path).map_err(|e| fixture_err(e.to_string()))?;
        let mut entries = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| fixture_err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry =
                serde_json::from_str(&line).map_err(|e| fixture_err(format!("line {}: {e}", i + 1)))?;
            entries.insert(entry.prompt_sha256, entry.text);
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl CompletionBackend for ReplayBackend {
    fn id(&self) -> String {
        format!("replay:{}", self.path.display())
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        check(request)?;
        let hash = prompt_sha256(&request.prompt);
        let text = self
            .entries
            .get(&hash)
            .ok_or(LlmError::UnknownPrompt(hash))?;
        Ok(CompletionResult {
            text: text.clone(),
            latency: Duration::ZERO,
            backend_id: self.id(),
        })
    }
}

/// Wraps a backend and appends every completion to a fixture file.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    out: Mutex<File>,
}

impl<B: CompletionBackend> RecordingBackend<B> {
    pub fn create(inner: B, path: &Path) -> Result<Self, LlmError> {
        let out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Fixture {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
            out: Mutex::new(out),
        })
    }
}

impl<B: CompletionBackend> CompletionBackend for RecordingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let result = self.inner.complete(request)?;
        let entry = FixtureEntry {
            prompt_sha256: prompt_sha256(&request.prompt),
            text: result.text.clone(),
        };
        let mut line = serde_json::to_string(&entry).map_err(|e| LlmError::Protocol(e.to_string()))?;
        line.push('\n');
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        out.write_all(line.as_bytes()).map_err(|e| LlmError::Fixture {
            path: self.path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(result)
    }
}
