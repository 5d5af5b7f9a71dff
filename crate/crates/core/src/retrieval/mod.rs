//! In-context example retrieval.
//!
//! Queries are built from masked dialogue information: history, previous
//! state and auxiliary fields are removed, the intent is kept, and the user
//! utterance is rewritten from the intent so that implicit requests become
//! explicit. Examples are ranked by cosine similarity of embeddings; the
//! state-change similarity in [`similarity`] provides the reference ranking
//! and the labels for contrastive training pairs.

pub mod embed;
pub mod mining;
pub mod similarity;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{RetrievalExample, TurnRef};
use crate::intent::{braces, domain_suffix, AugmentedDialogueInformation, DialogueInformation, Intent};
use crate::model::{SlotKey, SlotValue};

pub use embed::{EmbedError, EmbeddingProvider, EmbeddingVector, LexicalProvider, RemoteProvider};
pub use mining::{mine_training_pairs, write_pairs_jsonl, MiningConfig, TrainingPair};
pub use similarity::{set_f1, state_change_similarity};

/// Default number of in-context examples.
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("retrieval pool is empty")]
    EmptyPool,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("pool was embedded with {pool}, query provider is {query}")]
    ProviderMismatch { pool: String, query: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// What a retrieval key is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryView {
    /// Masked information: intent, rewritten user input, domains.
    IntentMasked,
    /// Previous state plus the full utterance history.
    FullContext,
}

/// Retrieval-side view of a turn: no history, no previous state, no
/// auxiliary fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedDialogueInformation {
    pub turn_index: usize,
    pub active_domains: Vec<String>,
    pub intent: Intent,
    pub rewritten_user: String,
}

impl MaskedDialogueInformation {
    /// `[CONTEXT] { <intent pairs> } [SYS]  [USER] <rewritten> [DOMAIN] <domains>`
    pub fn serialize(&self) -> String {
        format!(
            "[CONTEXT] {} [SYS]  [USER] {} [DOMAIN]{}",
            braces(self.intent.slot_values().iter()),
            self.rewritten_user,
            domain_suffix(&self.active_domains)
        )
    }
}

pub fn mask(aug: &AugmentedDialogueInformation) -> MaskedDialogueInformation {
    let rewritten_user = if aug.intent.is_empty() {
        aug.base.user_utterance.clone()
    } else {
        rewrite_user_input(&aug.intent)
    };
    MaskedDialogueInformation {
        turn_index: aug.base.turn_index,
        active_domains: aug.base.active_domains.clone(),
        intent: aug.intent.clone(),
        rewritten_user,
    }
}

fn slot_phrase(key: &SlotKey, value: &str) -> String {
    let d = &key.domain;
    match key.slot.as_str() {
        "destination" => format!("a {d} to {value}"),
        "departure" => format!("a {d} from {value}"),
        "area" => format!("a {d} in the {value} area"),
        "leaveat" => format!("a {d} leaving at {value}"),
        "arriveby" => format!("a {d} arriving by {value}"),
        "day" => format!("a {d} on {value}"),
        "people" => format!("a {d} for {value} people"),
        "stay" => format!("a {d} for {value} nights"),
        "time" => format!("a {d} at {value}"),
        "pricerange" => format!("a {d} in the {value} price range"),
        "food" => format!("a {d} serving {value} food"),
        "stars" => format!("a {d} with {value} stars"),
        "type" => format!("a {d} of type {value}"),
        "name" => format!("a {d} called {value}"),
        "department" => format!("a {d} with a {value} department"),
        slot => format!("{d} with {slot} {value}"),
    }
}

/// Turns the intent's slot values into an explicit request, e.g.
/// `{(train, destination, hyderabad)}` -> `I want a train to hyderabad.`
///
/// An empty intent yields an empty string; [`mask`] never calls it that way.
pub fn rewrite_user_input(intent: &Intent) -> String {
    let phrases: Vec<String> = intent
        .slot_values()
        .iter()
        .filter_map(|(k, v)| match v {
            SlotValue::Value(v) => Some(slot_phrase(k, v)),
            SlotValue::Delete => None,
        })
        .collect();
    if phrases.is_empty() {
        String::new()
    } else {
        format!("I want {}.", phrases.join(" and "))
    }
}

/// Retrieval key text for a turn under the given view. `intent` is ignored
/// by [`QueryView::FullContext`]; `None` means no intent is available.
pub fn query_text(view: QueryView, info: &DialogueInformation, intent: Option<&Intent>) -> String {
    match view {
        QueryView::IntentMasked => {
            let aug = crate::intent::augment(info.clone(), intent.cloned().unwrap_or_else(Intent::empty));
            mask(&aug).serialize()
        }
        QueryView::FullContext => info.serialize_with_history(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    pub example: RetrievalExample,
    pub score: f64,
}

/// Ranking order: score descending, then source ascending.
pub fn rank_order(a: (f64, &TurnRef), b: (f64, &TurnRef)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub text: String,
    /// Turn the query was built from; excluded from the results.
    pub source: Option<TurnRef>,
}

/// The example pool with its precomputed embeddings.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    examples: Vec<RetrievalExample>,
    vectors: Vec<EmbeddingVector>,
    provider_id: String,
}

impl RetrievalIndex {
    pub fn build(
        examples: Vec<RetrievalExample>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, RetrievalError> {
        let texts: Vec<&str> = examples.iter().map(|e| e.query_text.as_str()).collect();
        let vectors = provider.embed_batch(&texts)?;
        if vectors.len() != examples.len() {
            return Err(EmbedError::Protocol("embedding count mismatch".into()).into());
        }
        Ok(Self {
            examples,
            vectors,
            provider_id: provider.id().to_string(),
        })
    }

    pub fn examples(&self) -> &[RetrievalExample] {
        &self.examples
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Top `k` examples by cosine similarity to the query embedding.
    pub fn retrieve_top_k(
        &self,
        provider: &dyn EmbeddingProvider,
        query: &RetrievalQuery,
        k: usize,
    ) -> Result<Vec<ScoredExample>, RetrievalError> {
        if self.examples.is_empty() {
            return Err(RetrievalError::EmptyPool);
        }
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if provider.id() != self.provider_id {
            return Err(RetrievalError::ProviderMismatch {
                pool: self.provider_id.clone(),
                query: provider.id().to_string(),
            });
        }
        let q = provider.embed(&query.text)?;
        let mut scored: Vec<(f64, usize)> = self
            .examples
            .iter()
            .enumerate()
            .filter(|(_, e)| query.source.as_ref() != Some(&e.source))
            .map(|(i, _)| (q.cosine(&self.vectors[i]), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            rank_order(
                (a.0, &self.examples[a.1].source),
                (b.0, &self.examples[b.1].source),
            )
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(score, i)| ScoredExample {
                example: self.examples[i].clone(),
                score,
            })
            .collect())
    }
}

/// Ranks the pool by state-change similarity to the intent's slot values.
/// This is the reference ranking retrieval quality is measured against.
pub fn brute_force_top_k_by_similarity(
    pool: &[RetrievalExample],
    intent: &Intent,
    k: usize,
    exclude: Option<&TurnRef>,
) -> Result<Vec<ScoredExample>, RetrievalError> {
    if pool.is_empty() {
        return Err(RetrievalError::EmptyPool);
    }
    let mut scored: Vec<ScoredExample> = pool
        .iter()
        .filter(|e| exclude != Some(&e.source))
        .map(|e| ScoredExample {
            score: state_change_similarity(intent.slot_values(), &e.state_change),
            example: e.clone(),
        })
        .collect();
    scored.sort_by(|a, b| rank_order((a.score, &a.example.source), (b.score, &b.example.source)));
    scored.truncate(k);
    Ok(scored)
}

/// Fraction of the reference top-`k` recovered by `retrieved`.
///
/// `reference` is a full ranking (e.g. from
/// [`brute_force_top_k_by_similarity`] with `k = pool size`). Examples tied
/// with the k-th reference score all count as relevant, so the measure does
/// not depend on how ties happen to be broken.
pub fn recall_at_k(retrieved: &[ScoredExample], reference: &[ScoredExample], k: usize) -> f64 {
    if reference.is_empty() || k == 0 {
        return 0.0;
    }
    let cutoff = reference[k.min(reference.len()) - 1].score;
    let relevant: std::collections::BTreeSet<&TurnRef> = reference
        .iter()
        .filter(|e| e.score >= cutoff)
        .map(|e| &e.example.source)
        .collect();
    let hits = retrieved
        .iter()
        .take(k)
        .filter(|e| relevant.contains(&e.example.source))
        .count();
    hits as f64 / k.min(relevant.len()) as f64
}
