//! Dialogue-state data model: schema, slot keys, states, per-turn state
//! changes, and value canonicalization.
//!
//! Everything here is an immutable value type. The diff/apply pair is the
//! algebra the rest of the crate leans on: `apply_delta(prev, state_diff(prev,
//! curr)) == curr` for every pair of valid states.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Literal token used for the deletion marker wherever a state change is
/// serialized (SQL literals, flat JSON maps).
pub const DELETE_MARKER: &str = "[DELETE]";

/// Domain name reserved for the SQL no-change sentinel.
pub const RESERVED_DOMAIN: &str = "none";

const DEFAULT_SCHEMA_JSON: &str = include_str!("../data/multiwoz_schema.json");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("invalid domain name {0:?}")]
    InvalidDomain(String),
    #[error("invalid slot name {slot:?} in domain {domain:?}")]
    InvalidSlot { domain: String, slot: String },
    #[error("duplicate domain {0:?}")]
    DuplicateDomain(String),
    #[error("duplicate slot {slot:?} in domain {domain:?}")]
    DuplicateSlot { domain: String, slot: String },
    #[error("categorical values given for unknown slot {0}")]
    UnknownCategorical(String),
    #[error("synonym target {target:?} for {source_value:?} is not canonical")]
    BadSynonym { source_value: String, target: String },
    #[error("unknown domain-slot {0}")]
    UnknownSlot(SlotKey),
    #[error("malformed slot key {0:?}, expected \"domain-slot\"")]
    MalformedKey(String),
    #[error("schema file: {0}")]
    Format(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValueError {
    #[error("value for {0} is empty after canonicalization")]
    EmptyValue(SlotKey),
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// A `(domain, slot)` pair. Serialized flat as `domain-slot`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotKey {
    pub domain: String,
    pub slot: String,
}

impl SlotKey {
    pub fn new(domain: impl Into<String>, slot: impl Into<String>) -> Self {
        Self {
            domain: domain.into(),
            slot: slot.into(),
        }
    }

    /// Parses the flat `domain-slot` form. Domain names never contain `-`,
    /// so the split happens at the first dash.
    pub fn parse_flat(flat: &str) -> Result<Self, SchemaError> {
        match flat.split_once('-') {
            Some((d, s)) if !d.is_empty() && !s.is_empty() => Ok(Self::new(d, s)),
            _ => Err(SchemaError::MalformedKey(flat.to_string())),
        }
    }

    pub fn flat(&self) -> String {
        format!("{}-{}", self.domain, self.slot)
    }
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.domain, self.slot)
    }
}

/// Value carried by a state change: either a concrete value or a deletion.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotValue {
    Value(String),
    Delete,
}

impl SlotValue {
    pub fn as_str(&self) -> &str {
        match self {
            SlotValue::Value(v) => v,
            SlotValue::Delete => DELETE_MARKER,
        }
    }

    pub fn is_delete(&self) -> bool {
        matches!(self, SlotValue::Delete)
    }

    /// Inverse of [`SlotValue::as_str`].
    pub fn from_token(token: &str) -> Self {
        if token == DELETE_MARKER {
            SlotValue::Delete
        } else {
            SlotValue::Value(token.to_string())
        }
    }
}

impl fmt::Display for SlotValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Value normalization applied to every value before exact-match comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canonicalizer {
    synonyms: BTreeMap<String, String>,
}

impl Default for Canonicalizer {
    fn default() -> Self {
        Schema::multiwoz().canonicalizer
    }
}

impl Canonicalizer {
    /// Builds a canonicalizer from a raw synonym table. Keys are normalized;
    /// targets must already be in normal form and must not themselves be keys
    /// (no chains), which keeps canonicalization idempotent.
    pub fn new(synonyms: BTreeMap<String, String>) -> Result<Self, SchemaError> {
        let mut table = BTreeMap::new();
        for (raw, target) in synonyms {
            let key = normalize(&raw);
            if normalize(target.as_str()) != target || target.is_empty() {
                return Err(SchemaError::BadSynonym {
                    source_value: raw,
                    target,
                });
            }
            table.insert(key, target);
        }
        if let Some((raw, target)) = table.iter().find(|(_, t)| table.contains_key(*t)) {
            return Err(SchemaError::BadSynonym {
                source_value: raw.clone(),
                target: target.clone(),
            });
        }
        Ok(Self { synonyms: table })
    }

    pub fn empty() -> Self {
        Self {
            synonyms: BTreeMap::new(),
        }
    }

    pub fn synonyms(&self) -> &BTreeMap<String, String> {
        &self.synonyms
    }

    pub fn canonicalize(&self, key: &SlotKey, raw: &str) -> Result<String, ValueError> {
        let normal = normalize(raw);
        if normal.is_empty() {
            return Err(ValueError::EmptyValue(key.clone()));
        }
        Ok(self.synonyms.get(&normal).cloned().unwrap_or(normal))
    }
}

fn normalize(raw: &str) -> String {
    let lower = raw.to_lowercase();
    let mut s = lower.as_str();
    loop {
        s = s.trim();
        let stripped = ['\'', '"', '`'].iter().find_map(|&q| {
            s.strip_prefix(q)
                .and_then(|rest| rest.strip_suffix(q))
        });
        match stripped {
            Some(inner) => s = inner,
            None => break,
        }
    }
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ");
    normalize_time(&collapsed).unwrap_or(collapsed)
}

/// `07:05` -> `7:05`; anything that is not `H:MM`/`HH:MM` is left alone.
fn normalize_time(s: &str) -> Option<String> {
    let (h, m) = s.split_once(':')?;
    let digits = |x: &str| !x.is_empty() && x.bytes().all(|b| b.is_ascii_digit());
    if !(digits(h) && digits(m)) || h.len() > 2 || m.len() != 2 {
        return None;
    }
    let hour = h.strip_prefix('0').filter(|r| !r.is_empty()).unwrap_or(h);
    Some(format!("{hour}:{m}"))
}

/// Domain/slot ontology. Domain order is significant: it fixes the order of
/// the rendered SQL tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    domains: Vec<String>,
    slots: BTreeMap<String, Vec<String>>,
    categorical: BTreeMap<SlotKey, Vec<String>>,
    canonicalizer: Canonicalizer,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    domains: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    categorical: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    synonyms: BTreeMap<String, String>,
}

impl Schema {
    pub fn new<D, S>(domains: impl IntoIterator<Item = (D, Vec<S>)>) -> Result<Self, SchemaError>
    where
        D: Into<String>,
        S: Into<String>,
    {
        let mut order = Vec::new();
        let mut slots = BTreeMap::new();
        for (domain, domain_slots) in domains {
            let domain = domain.into();
            if !is_identifier(&domain) || domain == RESERVED_DOMAIN {
                return Err(SchemaError::InvalidDomain(domain));
            }
            if slots.contains_key(&domain) {
                return Err(SchemaError::DuplicateDomain(domain));
            }
            let mut seen = BTreeSet::new();
            let mut list = Vec::new();
            for slot in domain_slots {
                let slot = slot.into();
                if !is_identifier(&slot) {
                    return Err(SchemaError::InvalidSlot { domain, slot });
                }
                if !seen.insert(slot.clone()) {
                    return Err(SchemaError::DuplicateSlot { domain, slot });
                }
                list.push(slot);
            }
            order.push(domain.clone());
            slots.insert(domain, list);
        }
        Ok(Self {
            domains: order,
            slots,
            categorical: BTreeMap::new(),
            canonicalizer: Canonicalizer::empty(),
        })
    }

    pub fn with_categorical(
        mut self,
        categorical: BTreeMap<SlotKey, Vec<String>>,
    ) -> Result<Self, SchemaError> {
        for key in categorical.keys() {
            if !self.contains(key) {
                return Err(SchemaError::UnknownCategorical(key.flat()));
            }
        }
        self.categorical = categorical;
        Ok(self)
    }

    pub fn with_canonicalizer(mut self, canonicalizer: Canonicalizer) -> Self {
        self.canonicalizer = canonicalizer;
        self
    }

    /// The bundled seven-domain MultiWOZ ontology.
    pub fn multiwoz() -> Self {
        Self::from_json_str(DEFAULT_SCHEMA_JSON).expect("bundled schema is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self, SchemaError> {
        let file: SchemaFile =
            serde_json::from_str(text).map_err(|e| SchemaError::Format(e.to_string()))?;
        let mut domains = Vec::with_capacity(file.domains.len());
        for (domain, slots) in file.domains {
            let slots: Vec<String> = serde_json::from_value(slots)
                .map_err(|e| SchemaError::Format(format!("domain {domain}: {e}")))?;
            domains.push((domain, slots));
        }
        let mut categorical = BTreeMap::new();
        for (flat, values) in file.categorical {
            categorical.insert(SlotKey::parse_flat(&flat)?, values);
        }
        Ok(Self::new(domains)?
            .with_categorical(categorical)?
            .with_canonicalizer(Canonicalizer::new(file.synonyms)?))
    }

    pub fn from_path(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SchemaError::Format(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        let mut domains = serde_json::Map::new();
        for d in &self.domains {
            domains.insert(d.clone(), serde_json::json!(self.slots[d]));
        }
        let file = SchemaFile {
            domains,
            categorical: self
                .categorical
                .iter()
                .map(|(k, v)| (k.flat(), v.clone()))
                .collect(),
            synonyms: self.canonicalizer.synonyms.clone(),
        };
        serde_json::to_string_pretty(&file).expect("schema serializes")
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn has_domain(&self, domain: &str) -> bool {
        self.slots.contains_key(domain)
    }

    pub fn slots(&self, domain: &str) -> Option<&[String]> {
        self.slots.get(domain).map(Vec::as_slice)
    }

    /// All domain-slot keys in schema order.
    pub fn keys(&self) -> impl Iterator<Item = SlotKey> + '_ {
        self.domains
            .iter()
            .flat_map(move |d| self.slots[d].iter().map(move |s| SlotKey::new(d, s)))
    }

    pub fn categorical(&self, key: &SlotKey) -> Option<&[String]> {
        self.categorical.get(key).map(Vec::as_slice)
    }

    pub fn contains(&self, key: &SlotKey) -> bool {
        self.slots
            .get(&key.domain)
            .is_some_and(|s| s.contains(&key.slot))
    }

    pub fn check(&self, key: &SlotKey) -> Result<(), SchemaError> {
        if self.contains(key) {
            Ok(())
        } else {
            Err(SchemaError::UnknownSlot(key.clone()))
        }
    }

    pub fn canonicalizer(&self) -> &Canonicalizer {
        &self.canonicalizer
    }

    pub fn canonicalize(&self, key: &SlotKey, raw: &str) -> Result<String, ValueError> {
        self.canonicalizer.canonicalize(key, raw)
    }
}

/// Cumulative dialogue state after a turn.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct DialogueState(BTreeMap<SlotKey, String>);

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<SlotKey>,
        V: Into<String>,
    {
        Self(
            pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }

    pub fn insert(&mut self, key: SlotKey, value: impl Into<String>) {
        self.0.insert(key, value.into());
    }

    pub fn remove(&mut self, key: &SlotKey) -> Option<String> {
        self.0.remove(key)
    }

    pub fn get(&self, key: &SlotKey) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SlotKey, &str)> {
        self.0.iter().map(|(k, v)| (k, v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), SchemaError> {
        self.0.keys().try_for_each(|k| schema.check(k))
    }

    /// Entries restricted to one domain.
    pub fn restrict(&self, domain: &str) -> DialogueState {
        Self(
            self.0
                .iter()
                .filter(|(k, _)| k.domain == domain)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )
    }

    /// Flat `domain-slot -> value` map.
    pub fn to_flat(&self) -> BTreeMap<String, String> {
        self.0.iter().map(|(k, v)| (k.flat(), v.clone())).collect()
    }
}

impl From<(&str, &str)> for SlotKey {
    fn from((d, s): (&str, &str)) -> Self {
        SlotKey::new(d, s)
    }
}

/// The set of slot-value pairs changed in one turn; at most one entry per key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateChange(BTreeMap<SlotKey, SlotValue>);

impl StateChange {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, K>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, SlotValue)>,
        K: Into<SlotKey>,
    {
        Self(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    /// Convenience constructor for value-only changes.
    pub fn from_values<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<SlotKey>,
        V: Into<String>,
    {
        Self::from_pairs(
            pairs
                .into_iter()
                .map(|(k, v)| (k.into(), SlotValue::Value(v.into()))),
        )
    }

    pub fn insert(&mut self, key: SlotKey, value: SlotValue) {
        self.0.insert(key, value);
    }

    pub fn remove(&mut self, key: &SlotKey) -> Option<SlotValue> {
        self.0.remove(key)
    }

    pub fn get(&self, key: &SlotKey) -> Option<&SlotValue> {
        self.0.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SlotKey, &SlotValue)> {
        self.0.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &SlotKey> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), SchemaError> {
        self.0.keys().try_for_each(|k| schema.check(k))
    }

    /// Drops deletion pairs.
    pub fn without_deletions(&self) -> StateChange {
        Self(
            self.0
                .iter()
                .filter(|(_, v)| !v.is_delete())
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )
    }

    /// Domains touched by the change, sorted by name.
    pub fn domains(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.0.keys().map(|k| k.domain.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn to_flat(&self) -> BTreeMap<String, String> {
        self.0
            .iter()
            .map(|(k, v)| (k.flat(), v.as_str().to_string()))
            .collect()
    }
}

impl FromIterator<(SlotKey, SlotValue)> for StateChange {
    fn from_iter<T: IntoIterator<Item = (SlotKey, SlotValue)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Pairs added or changed in `curr`, plus deletions for keys dropped from `prev`.
pub fn state_diff(prev: &DialogueState, curr: &DialogueState) -> StateChange {
    let mut change = StateChange::new();
    for (key, value) in curr.iter() {
        if prev.get(key) != Some(value) {
            change.insert(key.clone(), SlotValue::Value(value.to_string()));
        }
    }
    for (key, _) in prev.iter() {
        if curr.get(key).is_none() {
            change.insert(key.clone(), SlotValue::Delete);
        }
    }
    change
}

/// Applies a state change on top of `prev`.
pub fn apply_delta(
    schema: &Schema,
    prev: &DialogueState,
    delta: &StateChange,
) -> Result<DialogueState, SchemaError> {
    delta.validate(schema)?;
    let mut next = prev.clone();
    for (key, value) in delta.iter() {
        match value {
            SlotValue::Value(v) => next.insert(key.clone(), v.clone()),
            SlotValue::Delete => {
                next.remove(key);
            }
        }
    }
    Ok(next)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_schema() -> Schema {
        Schema::new([
            ("hotel", vec!["area", "stars", "name"]),
            ("train", vec!["leaveat", "arriveat", "day"]),
        ])
        .unwrap()
    }

    fn key(d: &str, s: &str) -> SlotKey {
        SlotKey::new(d, s)
    }

    #[test]
    fn diff_insertion_from_empty() {
        let curr = DialogueState::from_pairs([(("hotel", "area"), "south")]);
        let d = state_diff(&DialogueState::new(), &curr);
        assert_eq!(d, StateChange::from_values([(("hotel", "area"), "south")]));
    }

    #[test]
    fn diff_identity_is_empty() {
        let s = DialogueState::from_pairs([(("hotel", "area"), "south"), (("hotel", "stars"), "4")]);
        assert!(state_diff(&s, &s).is_empty());
    }

    #[test]
    fn diff_matches_key_by_key_comparison() {
        let prev = DialogueState::from_pairs([(("train", "leaveat"), "07:00")]);
        let curr = DialogueState::from_pairs([
            (("train", "leaveat"), "07:00"),
            (("train", "arriveat"), "10:00"),
        ]);
        let expected = StateChange::from_values([(("train", "arriveat"), "10:00")]);
        assert_eq!(state_diff(&prev, &curr), expected);
    }

    #[test]
    fn apply_adds_arrival_time() {
        let schema = small_schema();
        let prev = DialogueState::from_pairs([(("train", "leaveat"), "07:00")]);
        let delta = StateChange::from_values([(("train", "arriveat"), "10:00")]);
        let next = apply_delta(&schema, &prev, &delta).unwrap();
        assert_eq!(
            next,
            DialogueState::from_pairs([
                (("train", "leaveat"), "07:00"),
                (("train", "arriveat"), "10:00")
            ])
        );
    }

    #[test]
    fn apply_empty_and_delete() {
        let schema = small_schema();
        let prev = DialogueState::from_pairs([(("hotel", "area"), "south")]);
        assert_eq!(apply_delta(&schema, &prev, &StateChange::new()).unwrap(), prev);
        let del = StateChange::from_pairs([(key("hotel", "area"), SlotValue::Delete)]);
        assert!(apply_delta(&schema, &prev, &del).unwrap().is_empty());
    }

    #[test]
    fn apply_rejects_unknown_slot() {
        let schema = small_schema();
        let delta = StateChange::from_values([(("hotel", "parking"), "yes")]);
        assert_eq!(
            apply_delta(&schema, &DialogueState::new(), &delta),
            Err(SchemaError::UnknownSlot(key("hotel", "parking")))
        );
    }

    #[test]
    fn canonicalize_examples() {
        let c = Schema::multiwoz().canonicalizer().clone();
        assert_eq!(c.canonicalize(&key("train", "arriveby"), " 10:00 ").unwrap(), "10:00");
        assert_eq!(c.canonicalize(&key("attraction", "area"), "South").unwrap(), "south");
        assert_eq!(c.canonicalize(&key("attraction", "area"), "center").unwrap(), "centre");
        assert_eq!(c.canonicalize(&key("train", "leaveat"), "07:00").unwrap(), "7:00");
        assert_eq!(c.canonicalize(&key("hotel", "name"), "'A  and B'").unwrap(), "a and b");
        assert_eq!(c.canonicalize(&key("hotel", "area"), "Don't  Care").unwrap(), "dontcare");
        assert_eq!(
            c.canonicalize(&key("hotel", "area"), " '' "),
            Err(ValueError::EmptyValue(key("hotel", "area")))
        );
    }

    #[test]
    fn schema_rules() {
        assert!(Schema::new([("Hotel", vec!["area"])]).is_err());
        assert!(Schema::new([("none", vec!["area"])]).is_err());
        assert!(Schema::new([("hotel", vec!["area", "area"])]).is_err());
        assert!(Schema::new([("hotel", vec!["book day"])]).is_err());
        assert!(Schema::new([("hotel", vec!["a"]), ("hotel", vec!["b"])]).is_err());
        let bad_cat = Schema::from_json_str(r#"{"domains":{"hotel":["area"]},"categorical":{"hotel-stars":["1"]}}"#);
        assert_eq!(bad_cat, Err(SchemaError::UnknownCategorical("hotel-stars".into())));
        let chain = Schema::from_json_str(r#"{"domains":{"a":["b"]},"synonyms":{"x":"y","y":"z"}}"#);
        assert!(matches!(chain, Err(SchemaError::BadSynonym { .. })));
    }

    #[test]
    fn bundled_schema_has_seven_domains() {
        let s = Schema::multiwoz();
        assert_eq!(s.domains().len(), 7);
        assert!(s.contains(&key("train", "destination")));
        let again = Schema::from_json_str(&s.to_json()).unwrap();
        assert_eq!(again, s);
    }

    pub(crate) fn arb_state() -> impl Strategy<Value = DialogueState> {
        let keys = [
            key("hotel", "area"),
            key("hotel", "stars"),
            key("hotel", "name"),
            key("train", "leaveat"),
            key("train", "arriveat"),
            key("train", "day"),
        ];
        proptest::collection::vec(proptest::option::of(0u8..3), keys.len()).prop_map(move |vals| {
            let mut s = DialogueState::new();
            for (k, v) in keys.iter().zip(vals) {
                if let Some(v) = v {
                    s.insert(k.clone(), format!("v{v}"));
                }
            }
            s
        })
    }

    proptest! {
        #[test]
        fn diff_apply_round_trip(prev in arb_state(), curr in arb_state()) {
            let schema = small_schema();
            let d = state_diff(&prev, &curr);
            prop_assert_eq!(apply_delta(&schema, &prev, &d).unwrap(), curr);
        }

        #[test]
        fn diff_of_self_is_empty(s in arb_state()) {
            prop_assert!(state_diff(&s, &s).is_empty());
        }

        #[test]
        fn apply_is_idempotent(prev in arb_state(), a in arb_state(), b in arb_state()) {
            let schema = small_schema();
            let d = state_diff(&a, &b);
            let once = apply_delta(&schema, &prev, &d).unwrap();
            prop_assert_eq!(apply_delta(&schema, &once, &d).unwrap(), once);
        }

        #[test]
        fn canonicalize_is_idempotent(raw in "[ \"'`a-zA-Z0-9:]{1,12}") {
            let c = Schema::multiwoz().canonicalizer().clone();
            let k = key("hotel", "name");
            if let Ok(once) = c.canonicalize(&k, &raw) {
                prop_assert_eq!(c.canonicalize(&k, &once).unwrap(), once);
            }
        }
    }
}
