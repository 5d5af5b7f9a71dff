//! Corpus loading, canonical JSONL storage, few-shot sampling and the
//! retrieval example pool.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::intent::{oracle_intent, DialogueInformation};
use crate::model::{state_diff, DialogueState, Schema, SchemaError, SlotKey, StateChange};
use crate::retrieval::{query_text, QueryView};
use crate::sql::encode_delta_as_sql;

/// Metadata values that mean "no value".
const EMPTY_VALUES: &[&str] = &["", "not mentioned", "none"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error{}: {message}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    Format { line: Option<usize>, message: String },
    #[error("dialogue {dialogue_id}: {source}")]
    SchemaViolation {
        dialogue_id: String,
        source: SchemaError,
    },
    #[error("few-shot fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl DataError {
    fn format(line: Option<usize>, message: impl Into<String>) -> Self {
        DataError::Format {
            line,
            message: message.into(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TurnRef {
    pub dialogue_id: String,
    pub turn_index: usize,
}

impl TurnRef {
    pub fn new(dialogue_id: impl Into<String>, turn_index: usize) -> Self {
        Self {
            dialogue_id: dialogue_id.into(),
            turn_index,
        }
    }
}

impl fmt::Display for TurnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.dialogue_id, self.turn_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MultiwozVersion {
    V21,
    V24,
}

impl fmt::Display for MultiwozVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MultiwozVersion::V21 => "2.1",
            MultiwozVersion::V24 => "2.4",
        })
    }
}

impl std::str::FromStr for MultiwozVersion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "2.1" => Ok(MultiwozVersion::V21),
            "2.4" => Ok(MultiwozVersion::V24),
            other => Err(format!("unsupported MultiWOZ version {other:?} (expected 2.1 or 2.4)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueTurn {
    pub turn_index: usize,
    pub user_utterance: String,
    /// System utterance preceding this user turn; empty for the first turn.
    pub system_utterance: String,
    pub gold_state: DialogueState,
    pub active_domains: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub turns: Vec<DialogueTurn>,
}

impl Dialogue {
    /// Gold state before `turn_index` (empty before the first turn).
    pub fn gold_before(&self, turn_index: usize) -> DialogueState {
        turn_index
            .checked_sub(1)
            .map(|i| self.turns[i].gold_state.clone())
            .unwrap_or_default()
    }

    pub fn gold_change(&self, turn_index: usize) -> StateChange {
        state_diff(&self.gold_before(turn_index), &self.turns[turn_index].gold_state)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueDataset {
    pub split: Split,
    pub dialogues: Vec<Dialogue>,
    pub schema: Schema,
}

impl DialogueDataset {
    pub fn turn_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    /// Checks ids, turn numbering and gold states.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut ids = HashSet::new();
        for d in &self.dialogues {
            validate_dialogue(d, &self.schema)?;
            if !ids.insert(d.dialogue_id.as_str()) {
                return Err(DataError::format(None, format!("duplicate dialogue id {}", d.dialogue_id)));
            }
        }
        Ok(())
    }
}

fn validate_dialogue(d: &Dialogue, schema: &Schema) -> Result<(), DataError> {
    if d.turns.is_empty() {
        return Err(DataError::format(None, format!("dialogue {} has no turns", d.dialogue_id)));
    }
    for (i, t) in d.turns.iter().enumerate() {
        if t.turn_index != i {
            return Err(DataError::format(
                None,
                format!("dialogue {}: turn {} found at position {i}", d.dialogue_id, t.turn_index),
            ));
        }
        t.gold_state
            .validate(schema)
            .map_err(|source| DataError::SchemaViolation {
                dialogue_id: d.dialogue_id.clone(),
                source,
            })?;
    }
    Ok(())
}

/// One retrievable in-context example: a turn's retrieval key, its gold
/// state change, and the text block shown in prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalExample {
    pub source: TurnRef,
    pub query_text: String,
    pub state_change: StateChange,
    pub prompt_block: String,
}

// ---------------------------------------------------------------------------
// MultiWOZ
// ---------------------------------------------------------------------------

fn state_from_metadata(
    metadata: &serde_json::Map<String, Value>,
    schema: &Schema,
    dialogue_id: &str,
) -> Result<DialogueState, DataError> {
    let mut state = DialogueState::new();
    for (domain, body) in metadata {
        for part in ["semi", "book"] {
            let Some(slots) = body.get(part).and_then(Value::as_object) else {
                continue;
            };
            for (slot, value) in slots {
                // `booked` is a list of reservations, not a slot.
                let Some(raw) = value.as_str() else { continue };
                if EMPTY_VALUES.contains(&raw.trim().to_lowercase().as_str()) {
                    continue;
                }
                let key = SlotKey::new(domain.to_lowercase(), slot.to_lowercase());
                schema.check(&key).map_err(|source| DataError::SchemaViolation {
                    dialogue_id: dialogue_id.to_string(),
                    source,
                })?;
                if let Ok(v) = schema.canonicalize(&key, raw) {
                    state.insert(key, v);
                }
            }
        }
    }
    Ok(state)
}

fn parse_multiwoz_dialogue(
    dialogue_id: &str,
    body: &Value,
    schema: &Schema,
    version: MultiwozVersion,
) -> Result<Dialogue, DataError> {
    let fmt_err = |msg: &str| {
        DataError::format(None, format!("MultiWOZ {version} dialogue {dialogue_id}: {msg}"))
    };
    let log = body
        .get("log")
        .and_then(Value::as_array)
        .ok_or_else(|| fmt_err("missing `log` array"))?;
    if log.is_empty() {
        return Err(fmt_err("empty log"));
    }
    let text = |i: usize| -> Result<String, DataError> {
        log[i]
            .get("text")
            .and_then(Value::as_str)
            .map(|t| t.trim().to_string())
            .ok_or_else(|| fmt_err(&format!("log entry {i} has no text")))
    };

    let mut turns = Vec::with_capacity(log.len().div_ceil(2));
    let mut prev_state = DialogueState::new();
    let mut prev_domains: Vec<String> = Vec::new();
    for (turn_index, user_pos) in (0..log.len()).step_by(2).enumerate() {
        let user_utterance = text(user_pos)?;
        let system_utterance = if user_pos == 0 { String::new() } else { text(user_pos - 1)? };
        let metadata = log
            .get(user_pos + 1)
            .and_then(|e| e.get("metadata"))
            .and_then(Value::as_object)
            .filter(|m| !m.is_empty());
        let gold_state = match metadata {
            Some(m) => state_from_metadata(m, schema, dialogue_id)?,
            None => prev_state.clone(),
        };
        let changed = state_diff(&prev_state, &gold_state).domains();
        let active_domains = if changed.is_empty() { prev_domains.clone() } else { changed };
        prev_state = gold_state.clone();
        prev_domains = active_domains.clone();
        turns.push(DialogueTurn {
            turn_index,
            user_utterance,
            system_utterance,
            gold_state,
            active_domains,
        });
    }
    Ok(Dialogue {
        dialogue_id: dialogue_id.to_string(),
        turns,
    })
}

/// Parses a MultiWOZ `data.json` document. Dialogues are returned sorted by
/// id so downstream sampling does not depend on file order.
pub fn parse_multiwoz(text: &str, schema: &Schema, version: MultiwozVersion) -> Result<Vec<Dialogue>, DataError> {
    let root: serde_json::Map<String, Value> = serde_json::from_str(text)
        .map_err(|e| DataError::format(None, format!("MultiWOZ {version} data: {e}")))?;
    let mut dialogues = root
        .iter()
        .map(|(id, body)| parse_multiwoz_dialogue(id, body, schema, version))
        .collect::<Result<Vec<_>, _>>()?;
    dialogues.sort_by(|a, b| a.dialogue_id.cmp(&b.dialogue_id));
    Ok(dialogues)
}

/// Loads every dialogue of a MultiWOZ `data.json` as one training split.
pub fn load_multiwoz(path: &Path, schema: &Schema, version: MultiwozVersion) -> Result<DialogueDataset, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    Ok(DialogueDataset {
        split: Split::Train,
        dialogues: parse_multiwoz(&text, schema, version)?,
        schema: schema.clone(),
    })
}

fn read_id_list(path: &Path) -> Result<BTreeSet<String>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiwozSplits {
    pub train: DialogueDataset,
    pub dev: DialogueDataset,
    pub test: DialogueDataset,
}

/// Loads `data.json` and partitions it with the distributed
/// `valListFile`/`testListFile`; everything else is training data.
pub fn load_multiwoz_splits(
    data: &Path,
    val_list: &Path,
    test_list: &Path,
    schema: &Schema,
    version: MultiwozVersion,
) -> Result<MultiwozSplits, DataError> {
    let all = load_multiwoz(data, schema, version)?.dialogues;
    let val = read_id_list(val_list)?;
    let test = read_id_list(test_list)?;
    let mut parts: BTreeMap<&str, Vec<Dialogue>> = BTreeMap::new();
    for d in all {
        let key = if test.contains(&d.dialogue_id) {
            "test"
        } else if val.contains(&d.dialogue_id) {
            "dev"
        } else {
            "train"
        };
        parts.entry(key).or_default().push(d);
    }
    let mut take = |name: &str, split| DialogueDataset {
        split,
        dialogues: parts.remove(name).unwrap_or_default(),
        schema: schema.clone(),
    };
    Ok(MultiwozSplits {
        train: take("train", Split::Train),
        dev: take("dev", Split::Dev),
        test: take("test", Split::Test),
    })
}

// ---------------------------------------------------------------------------
// Canonical JSONL
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DialogueLine {
    dialogue_id: String,
    turns: Vec<TurnLine>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnLine {
    turn: usize,
    system: String,
    user: String,
    state: BTreeMap<String, String>,
    domains: Vec<String>,
}

/// One dialogue per line with a fixed key order.
pub fn to_canonical_jsonl<W: Write>(dataset: &DialogueDataset, mut out: W) -> std::io::Result<()> {
    for d in &dataset.dialogues {
        let line = DialogueLine {
            dialogue_id: d.dialogue_id.clone(),
            turns: d
                .turns
                .iter()
                .map(|t| TurnLine {
                    turn: t.turn_index,
                    system: t.system_utterance.clone(),
                    user: t.user_utterance.clone(),
                    state: t.gold_state.to_flat(),
                    domains: t.active_domains.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn from_canonical_jsonl<R: BufRead>(input: R, schema: &Schema, split: Split) -> Result<DialogueDataset, DataError> {
    let mut dialogues = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| DataError::format(Some(lineno), e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DialogueLine =
            serde_json::from_str(&line).map_err(|e| DataError::format(Some(lineno), e.to_string()))?;
        let mut turns = Vec::with_capacity(parsed.turns.len());
        for t in parsed.turns {
            let mut state = DialogueState::new();
            for (flat, value) in t.state {
                let key = SlotKey::parse_flat(&flat).map_err(|e| DataError::format(Some(lineno), e.to_string()))?;
                state.insert(key, value);
            }
            turns.push(DialogueTurn {
                turn_index: t.turn,
                user_utterance: t.user,
                system_utterance: t.system,
                gold_state: state,
                active_domains: t.domains,
            });
        }
        let dialogue = Dialogue {
            dialogue_id: parsed.dialogue_id,
            turns,
        };
        validate_dialogue(&dialogue, schema).map_err(|e| DataError::format(Some(lineno), e.to_string()))?;
        if !ids.insert(dialogue.dialogue_id.clone()) {
            return Err(DataError::format(
                Some(lineno),
                format!("duplicate dialogue id {}", dialogue.dialogue_id),
            ));
        }
        dialogues.push(dialogue);
    }
    Ok(DialogueDataset {
        split,
        dialogues,
        schema: schema.clone(),
    })
}

pub fn read_canonical_jsonl(path: &Path, schema: &Schema, split: Split) -> Result<DialogueDataset, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    from_canonical_jsonl(std::io::BufReader::new(file), schema, split)
}

// ---------------------------------------------------------------------------
// Sampling and pool construction
// ---------------------------------------------------------------------------

/// Number of dialogues kept by [`sample_fewshot`]: `ceil(fraction * total)`.
/// A relative slack of 1e-9 absorbs binary rounding such as `0.07 * 100`.
pub fn fewshot_size(total: usize, fraction: f64) -> usize {
    let exact = fraction * total as f64;
    ((exact - exact.abs() * 1e-9).ceil() as usize).min(total)
}

/// Seeded sample of whole dialogues, kept in their original order.
pub fn sample_fewshot(dataset: &DialogueDataset, fraction: f64, seed: u64) -> Result<DialogueDataset, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::InvalidFraction(fraction));
    }
    let total = dataset.dialogues.len();
    let size = fewshot_size(total, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, total, size).into_vec();
    picked.sort_unstable();
    Ok(DialogueDataset {
        split: dataset.split,
        dialogues: picked.into_iter().map(|i| dataset.dialogues[i].clone()).collect(),
        schema: dataset.schema.clone(),
    })
}

/// One example per turn, keyed under `view` with the gold previous state and
/// the gold intent.
pub fn build_example_pool(dataset: &DialogueDataset, view: QueryView) -> Result<Vec<RetrievalExample>, DataError> {
    let mut pool = Vec::with_capacity(dataset.turn_count());
    for d in &dataset.dialogues {
        for t in &d.turns {
            let prev = d.gold_before(t.turn_index);
            let change = state_diff(&prev, &t.gold_state);
            let intent = oracle_intent(&prev, &t.gold_state);
            let info = DialogueInformation::from_dialogue(d, t.turn_index, prev);
            let text = query_text(view, &info, Some(&intent));
            let sql = encode_delta_as_sql(&change, &dataset.schema).map_err(|source| DataError::SchemaViolation {
                dialogue_id: d.dialogue_id.clone(),
                source,
            })?;
            pool.push(RetrievalExample {
                source: TurnRef::new(&d.dialogue_id, t.turn_index),
                prompt_block: format!("{text}\nSQL: {sql}"),
                query_text: text,
                state_change: change,
            });
        }
    }
    Ok(pool)
}
