//! User intents, dialogue information, and intent-augmented dialogue
//! information.
//!
//! Intents come from gold annotations ([`oracle_intent`]) or from a remote
//! NLU model ([`NluClient::model_intent`]). Either way they are attached to
//! the dialogue information structurally by [`augment`]; the textual layouts
//! are produced by the `serialize_context` / `render_full` methods.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dialogue;
use crate::http::{join_url, HttpError, JsonClient, RetryPolicy};
use crate::model::{state_diff, DialogueState, Schema, SlotKey, SlotValue, StateChange};

pub const DEFAULT_ACT: &str = "inform";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Intent {
    pub act: String,
    slot_values: StateChange,
}

impl Intent {
    /// Deletion pairs are not part of an intent and are dropped.
    pub fn new(act: impl Into<String>, slot_values: StateChange) -> Self {
        Self {
            act: act.into(),
            slot_values: slot_values.without_deletions(),
        }
    }

    pub fn inform(slot_values: StateChange) -> Self {
        Self::new(DEFAULT_ACT, slot_values)
    }

    pub fn empty() -> Self {
        Self::inform(StateChange::new())
    }

    pub fn slot_values(&self) -> &StateChange {
        &self.slot_values
    }

    pub fn is_empty(&self) -> bool {
        self.slot_values.is_empty()
    }

    /// `[inform]{"attraction-area":"south"}`
    pub fn render(&self) -> String {
        let map = self.slot_values.to_flat();
        format!(
            "[{}]{}",
            self.act,
            serde_json::to_string(&map).expect("string map serializes")
        )
    }
}

/// Gold intent for a turn: everything added or changed between the two gold
/// states, without deletions.
pub fn oracle_intent(prev_gold: &DialogueState, curr_gold: &DialogueState) -> Intent {
    Intent::inform(state_diff(prev_gold, curr_gold))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IntentError {
    #[error("intent text does not match `[act]{{...}}`: {0:?}")]
    Decode(String),
    #[error(transparent)]
    Transport(#[from] HttpError),
}

/// Result of decoding model output. Decoding never fails outright: a bad
/// response degrades to an empty intent with `error` set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentParse {
    pub intent: Intent,
    /// Slot-value entries that were dropped (unknown key, non-string or
    /// empty value, deletion marker).
    pub dropped: usize,
    pub error: Option<IntentError>,
}

pub fn parse_intent(text: &str, schema: &Schema) -> IntentParse {
    let fail = |msg: &str| IntentParse {
        intent: Intent::empty(),
        dropped: 0,
        error: Some(IntentError::Decode(msg.to_string())),
    };
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix('[') else {
        return fail(trimmed);
    };
    let Some((act, body)) = rest.split_once(']') else {
        return fail(trimmed);
    };
    let act = act.trim();
    if act.is_empty()
        || !act
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return fail(trimmed);
    }
    let Ok(entries) = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(body.trim())
    else {
        return fail(trimmed);
    };
    let mut change = StateChange::new();
    let mut dropped = 0;
    for (flat, value) in entries {
        let parsed = SlotKey::parse_flat(&flat.to_lowercase())
            .ok()
            .filter(|k| schema.contains(k))
            .and_then(|k| {
                let raw = value.as_str()?;
                let v = schema.canonicalize(&k, raw).ok()?;
                Some((k, v))
            })
            .filter(|(_, v)| SlotValue::from_token(v) != SlotValue::Delete);
        match parsed {
            Some((k, v)) => change.insert(k, SlotValue::Value(v)),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} unparseable slot-value(s) from intent {trimmed:?}");
    }
    IntentParse {
        intent: Intent::new(act.to_string(), change),
        dropped,
        error: None,
    }
}

/// The dialogue information available when tracking turn `turn_index`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueInformation {
    pub turn_index: usize,
    pub active_domains: Vec<String>,
    pub user_utterance: String,
    /// The system utterance that precedes the current user turn.
    pub system_utterance: String,
    /// Prior `(system, user)` exchanges; one per earlier turn.
    pub history: Vec<(String, String)>,
    pub prev_state: DialogueState,
    pub other: BTreeMap<String, String>,
}

impl DialogueInformation {
    /// Builds the information for `turn_index` of `dialogue`, using
    /// `prev_state` (gold or predicted) as the previous state.
    pub fn from_dialogue(dialogue: &Dialogue, turn_index: usize, prev_state: DialogueState) -> Self {
        let turn = &dialogue.turns[turn_index];
        let history = dialogue.turns[..turn_index]
            .iter()
            .map(|t| (t.system_utterance.clone(), t.user_utterance.clone()))
            .collect();
        let mut other = BTreeMap::new();
        other.insert("dialogue_id".to_string(), dialogue.dialogue_id.clone());
        Self {
            turn_index,
            active_domains: turn.active_domains.clone(),
            user_utterance: turn.user_utterance.clone(),
            system_utterance: turn.system_utterance.clone(),
            history,
            prev_state,
            other,
        }
    }

    /// `[CONTEXT] {...} [SYS] ... [USER] ... [DOMAIN] ...`
    pub fn serialize_context(&self) -> String {
        format!(
            "[CONTEXT] {} [SYS] {} [USER] {} [DOMAIN]{}",
            braces(self.prev_state.iter()),
            self.system_utterance,
            self.user_utterance,
            domain_suffix(&self.active_domains)
        )
    }

    /// Like [`serialize_context`](Self::serialize_context) but with every
    /// earlier utterance spelled out after the state.
    pub fn serialize_with_history(&self) -> String {
        let mut lines = Vec::with_capacity(self.history.len() * 2);
        for (sys, usr) in &self.history {
            if !sys.is_empty() {
                lines.push(format!("[SYS] {sys}"));
            }
            lines.push(format!("[USER] {usr}"));
        }
        format!(
            "[CONTEXT] {} [HISTORY] {} [SYS] {} [USER] {} [DOMAIN]{}",
            braces(self.prev_state.iter()),
            lines.join(" "),
            self.system_utterance,
            self.user_utterance,
            domain_suffix(&self.active_domains)
        )
    }

    /// Structural rendering in the fixed order
    /// (turn, domain, history, prev_state, user, other). Free text is
    /// JSON-quoted so distinct inputs never collide.
    pub fn render_full(&self) -> String {
        self.render_full_with(None)
    }

    fn render_full_with(&self, intent: Option<&Intent>) -> String {
        let mut utterances: Vec<&str> = Vec::with_capacity(self.history.len() * 2 + 1);
        for (sys, usr) in &self.history {
            utterances.push(sys);
            utterances.push(usr);
        }
        utterances.push(&self.system_utterance);
        let mut out = format!(
            "[TURN] {} [DOMAIN] {} [HISTORY] {} [STATE] {} [USER] {}",
            self.turn_index,
            json(&self.active_domains),
            json(&utterances),
            json(&self.prev_state.to_flat()),
            json(&self.user_utterance),
        );
        if let Some(intent) = intent {
            out.push_str(" [INTENT] ");
            out.push_str(&intent.render());
        }
        out.push_str(" [OTHER] ");
        out.push_str(&json(&self.other));
        out
    }
}

fn json<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

/// `{}` for an empty list, otherwise `{ domain slot: value, ... }`.
pub(crate) fn braces<'a, V: std::fmt::Display + 'a>(
    pairs: impl Iterator<Item = (&'a SlotKey, V)>,
) -> String {
    let items: Vec<String> = pairs
        .map(|(k, v)| format!("{} {}: {}", k.domain, k.slot, v))
        .collect();
    if items.is_empty() {
        "{}".to_string()
    } else {
        format!("{{ {} }}", items.join(", "))
    }
}

pub(crate) fn domain_suffix(domains: &[String]) -> String {
    if domains.is_empty() {
        String::new()
    } else {
        format!(" {}", domains.join(", "))
    }
}

/// D_t with the user intent attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedDialogueInformation {
    pub base: DialogueInformation,
    pub intent: Intent,
}

pub fn augment(info: DialogueInformation, intent: Intent) -> AugmentedDialogueInformation {
    AugmentedDialogueInformation { base: info, intent }
}

impl AugmentedDialogueInformation {
    /// `[CONTEXT] {...} [SYS] ... [USER] ... [INTENT] [act]{...} [DOMAIN] ...`
    pub fn serialize_context(&self) -> String {
        let b = &self.base;
        format!(
            "[CONTEXT] {} [SYS] {} [USER] {} [INTENT] {} [DOMAIN]{}",
            braces(b.prev_state.iter()),
            b.system_utterance,
            b.user_utterance,
            self.intent.render(),
            domain_suffix(&b.active_domains)
        )
    }

    /// Structural rendering in the fixed order
    /// (turn, domain, history, prev_state, user, intent, other).
    pub fn render_full(&self) -> String {
        self.base.render_full_with(Some(&self.intent))
    }
}

#[derive(Serialize)]
struct NluRequest<'a> {
    context: &'a str,
}

#[derive(Deserialize)]
struct NluResponse {
    intent: String,
}

/// Client for a remote NLU service: `POST {url}` with `{"context": ...}`,
/// answered by `{"intent": "[act]{...}"}`.
pub struct NluClient {
    url: String,
    http: JsonClient,
}

impl NluClient {
    pub fn new(url: impl Into<String>, policy: RetryPolicy) -> Self {
        Self {
            url: url.into(),
            http: JsonClient::new(policy),
        }
    }

    /// Endpoint rooted at `base` with the conventional `/intent` path.
    pub fn at_base(base: &str, policy: RetryPolicy) -> Self {
        Self::new(join_url(base, "intent"), policy)
    }

    /// Transport failures are returned as errors; a malformed answer yields
    /// an empty intent with the decode error recorded in the result.
    pub fn model_intent(
        &self,
        info: &DialogueInformation,
        schema: &Schema,
    ) -> Result<IntentParse, IntentError> {
        let context = info.render_full();
        let resp: Result<NluResponse, HttpError> =
            self.http.post_json(&self.url, &NluRequest { context: &context });
        match resp {
            Ok(r) => Ok(parse_intent(&r.intent, schema)),
            Err(HttpError::Decode { message, .. }) => Ok(IntentParse {
                intent: Intent::empty(),
                dropped: 0,
                error: Some(IntentError::Decode(message)),
            }),
            Err(e) => Err(e.into()),
        }
    }
}
