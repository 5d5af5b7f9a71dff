//! End-to-end tracking loop, metrics and ablation runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{build_example_pool, DataError, Dialogue, DialogueDataset, TurnRef};
use crate::intent::{augment, oracle_intent, DialogueInformation, Intent, IntentError, NluClient};
use crate::llm::{CompletionBackend, CompletionRequest, LlmError};
use crate::model::{apply_delta, DialogueState, StateChange};
use crate::retrieval::{query_text, EmbeddingProvider, QueryView, RetrievalError, RetrievalIndex, RetrievalQuery, ScoredExample};
use crate::sql::{fit_prompt, parse_sql, schema_to_ddl, ParseTier, PromptError, SqlErrorKind, SqlSchemaText};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no turn results to score")]
    EmptyResults,
    #[error("intent backend is `model` but no NLU endpoint is configured")]
    NoNluClient,
    #[error("could not start worker pool: {0}")]
    Workers(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentSource {
    /// Gold intent derived from consecutive gold states.
    Oracle,
    /// Remote NLU endpoint.
    Model,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    IntentMasked,
    UnmaskedContext,
    Off,
}

impl RetrievalMode {
    fn view(self) -> Option<QueryView> {
        match self {
            RetrievalMode::IntentMasked => Some(QueryView::IntentMasked),
            RetrievalMode::UnmaskedContext => Some(QueryView::FullContext),
            RetrievalMode::Off => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Lexical,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    Remote,
    Replay,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub intent_backend: IntentSource,
    pub retrieval_mode: RetrievalMode,
    pub k: usize,
    pub embedding_provider: EmbeddingKind,
    pub llm_backend: LlmKind,
    pub prompt_budget: usize,
    pub seed: u64,
    /// Thread the gold previous state instead of the predicted one.
    pub gold_threading: bool,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            intent_backend: IntentSource::Oracle,
            retrieval_mode: RetrievalMode::IntentMasked,
            k: crate::retrieval::DEFAULT_K,
            embedding_provider: EmbeddingKind::Lexical,
            llm_backend: LlmKind::Oracle,
            prompt_budget: crate::sql::DEFAULT_PROMPT_BUDGET,
            seed: 0,
            gold_threading: false,
            workers: 4,
        }
    }
}

/// Live services a run talks to.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub llm: &'a dyn CompletionBackend,
    pub embedder: &'a dyn EmbeddingProvider,
    pub nlu: Option<&'a NluClient>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ParseStatus {
    Ok { tier: ParseTier },
    Sentinel { tier: ParseTier },
    Error { kind: SqlErrorKind, message: String },
}

impl ParseStatus {
    pub fn is_error(&self) -> bool {
        matches!(self, ParseStatus::Error { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStats {
    pub examples: usize,
    pub dropped_for_budget: usize,
    pub token_estimate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnResult {
    pub turn: TurnRef,
    pub intent: Option<Intent>,
    pub completion: String,
    pub predicted_delta: StateChange,
    pub predicted_state: DialogueState,
    pub gold_state: DialogueState,
    pub parse_status: ParseStatus,
    pub prompt_stats: PromptStats,
}

impl TurnResult {
    pub fn is_exact(&self) -> bool {
        self.predicted_state == self.gold_state
    }
}

/// Results of one dialogue. `aborted` holds the error that stopped it, in
/// which case `turns` covers only the turns before the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueRun {
    pub dialogue_id: String,
    pub turns: Vec<TurnResult>,
    pub aborted: Option<String>,
}

/// A configured pipeline: schema DDL plus the example index for the
/// configured retrieval view.
pub struct Tracker<'a> {
    config: PipelineConfig,
    backends: Backends<'a>,
    schema: crate::model::Schema,
    ddl: SqlSchemaText,
    index: Option<RetrievalIndex>,
}

impl<'a> Tracker<'a> {
    /// Builds the example pool from `pool` (the few-shot training data).
    pub fn new(config: PipelineConfig, backends: Backends<'a>, pool: &DialogueDataset) -> Result<Self, EvalError> {
        if config.intent_backend == IntentSource::Model && backends.nlu.is_none() {
            return Err(EvalError::NoNluClient);
        }
        let index = match (config.retrieval_mode.view(), config.k) {
            (None, _) | (_, 0) => None,
            (Some(view), _) => Some(RetrievalIndex::build(build_example_pool(pool, view)?, backends.embedder)?),
        };
        Ok(Self {
            ddl: schema_to_ddl(&pool.schema),
            schema: pool.schema.clone(),
            config,
            backends,
            index,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn intent_for(&self, dialogue: &Dialogue, turn: usize, info: &DialogueInformation) -> Result<Option<Intent>, EvalError> {
        Ok(match self.config.intent_backend {
            IntentSource::Off => None,
            IntentSource::Oracle => Some(oracle_intent(&dialogue.gold_before(turn), &dialogue.turns[turn].gold_state)),
            IntentSource::Model => {
                let nlu = self.backends.nlu.ok_or(EvalError::NoNluClient)?;
                let parsed = nlu.model_intent(info, &self.schema)?;
                if let Some(e) = &parsed.error {
                    log::warn!("{}#{turn}: {e}", dialogue.dialogue_id);
                }
                Some(parsed.intent)
            }
        })
    }

    fn examples_for(&self, source: TurnRef, info: &DialogueInformation, intent: Option<&Intent>) -> Result<Vec<ScoredExample>, EvalError> {
        let (Some(index), Some(view)) = (&self.index, self.config.retrieval_mode.view()) else {
            return Ok(Vec::new());
        };
        if index.is_empty() {
            return Ok(Vec::new());
        }
        let query = RetrievalQuery {
            text: query_text(view, info, intent),
            source: Some(source),
        };
        match index.retrieve_top_k(self.backends.embedder, &query, self.config.k) {
            Ok(found) => Ok(found),
            Err(RetrievalError::EmptyPool) => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    fn track_turn(&self, dialogue: &Dialogue, turn: usize, prev: DialogueState) -> Result<TurnResult, EvalError> {
        let source = TurnRef::new(&dialogue.dialogue_id, turn);
        let info = DialogueInformation::from_dialogue(dialogue, turn, prev.clone());
        let intent = self.intent_for(dialogue, turn, &info)?;
        let examples = self.examples_for(source.clone(), &info, intent.as_ref())?;
        let context = match &intent {
            Some(i) => augment(info, i.clone()).serialize_context(),
            None => info.serialize_context(),
        };
        let (prompt, dropped) = fit_prompt(&self.ddl, &examples, &context, self.config.prompt_budget)?;
        let request = CompletionRequest::new(prompt.text).for_turn(source.clone());
        let completion = self.backends.llm.complete(&request)?.text;

        let (parse_status, delta) = match parse_sql(&completion, &self.schema) {
            Ok(p) if p.sentinel => (ParseStatus::Sentinel { tier: p.tier }, StateChange::new()),
            Ok(p) => (ParseStatus::Ok { tier: p.tier }, p.where_pairs),
            Err(e) => (
                ParseStatus::Error {
                    kind: e.kind,
                    message: e.message,
                },
                StateChange::new(),
            ),
        };
        let predicted_state = apply_delta(&self.schema, &prev, &delta).expect("parsed deltas are schema-valid");
        Ok(TurnResult {
            turn: source,
            intent,
            completion,
            predicted_delta: delta,
            predicted_state,
            gold_state: dialogue.turns[turn].gold_state.clone(),
            parse_status,
            prompt_stats: PromptStats {
                examples: prompt.example_count,
                dropped_for_budget: dropped,
                token_estimate: prompt.token_estimate,
            },
        })
    }

    /// Tracks one dialogue turn by turn, threading the predicted state (or
    /// the gold one under `gold_threading`).
    pub fn track_dialogue(&self, dialogue: &Dialogue) -> DialogueRun {
        let mut turns: Vec<TurnResult> = Vec::with_capacity(dialogue.turns.len());
        for t in 0..dialogue.turns.len() {
            let prev = match (self.config.gold_threading, turns.last()) {
                (true, _) => dialogue.gold_before(t),
                (false, Some(last)) => last.predicted_state.clone(),
                (false, None) => DialogueState::new(),
            };
            match self.track_turn(dialogue, t, prev) {
                Ok(r) => turns.push(r),
                Err(e) => {
                    log::error!("{}#{t}: {e}", dialogue.dialogue_id);
                    return DialogueRun {
                        dialogue_id: dialogue.dialogue_id.clone(),
                        turns,
                        aborted: Some(e.to_string()),
                    };
                }
            }
        }
        DialogueRun {
            dialogue_id: dialogue.dialogue_id.clone(),
            turns,
            aborted: None,
        }
    }

    /// Tracks every dialogue on `config.workers` threads. Output order is by
    /// dialogue id regardless of scheduling.
    pub fn run(&self, dataset: &DialogueDataset) -> Result<Vec<DialogueRun>, EvalError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers.max(1))
            .build()
            .map_err(|e| EvalError::Workers(e.to_string()))?;
        let mut runs: Vec<DialogueRun> = pool.install(|| dataset.dialogues.par_iter().map(|d| self.track_dialogue(d)).collect());
        runs.sort_by(|a, b| a.dialogue_id.cmp(&b.dialogue_id));
        Ok(runs)
    }

    pub fn evaluate(&self, dataset: &DialogueDataset) -> Result<Evaluation, EvalError> {
        let runs = self.run(dataset)?;
        let report = EvalReport::from_runs(&self.config, &runs)?;
        Ok(Evaluation { report, runs })
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Fraction of turns whose predicted state equals the gold state exactly.
pub fn joint_goal_accuracy(results: &[TurnResult]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    Ok(results.iter().filter(|r| r.is_exact()).count() as f64 / results.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro-averaged precision, recall and F1 over (turn, slot, value) triples.
pub fn slot_prf(results: &[TurnResult]) -> Result<SlotPrf, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let (mut predicted, mut gold, mut correct) = (0usize, 0usize, 0usize);
    for r in results {
        predicted += r.predicted_state.len();
        gold += r.gold_state.len();
        correct += r
            .predicted_state
            .iter()
            .filter(|(k, v)| r.gold_state.get(k) == Some(*v))
            .count();
    }
    if predicted == 0 && gold == 0 {
        return Ok(SlotPrf {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        });
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(correct, predicted);
    let recall = ratio(correct, gold);
    // 2pr/(p+r) simplified to 2c/(P+G), which avoids rounding in p and r.
    let f1 = ratio(2 * correct, predicted + gold);
    Ok(SlotPrf { precision, recall, f1 })
}

/// JGA restricted to one domain, over the turns where that domain appears
/// in the gold or the predicted state.
pub fn per_domain_jga(results: &[TurnResult]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in results {
        let domains: std::collections::BTreeSet<&str> = r
            .gold_state
            .iter()
            .chain(r.predicted_state.iter())
            .map(|(k, _)| k.domain.as_str())
            .collect();
        for d in domains {
            let entry = counts.entry(d.to_string()).or_default();
            entry.1 += 1;
            if r.gold_state.restrict(d) == r.predicted_state.restrict(d) {
                entry.0 += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(d, (hit, n))| (d, hit as f64 / n as f64))
        .collect()
}

pub fn parser_error_rate(results: &[TurnResult]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    Ok(results.iter().filter(|r| r.parse_status.is_error()).count() as f64 / results.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: PipelineConfig,
    pub dialogue_count: usize,
    pub turn_count: usize,
    pub aborted_dialogues: Vec<String>,
    pub jga: f64,
    pub slot_precision: f64,
    pub slot_recall: f64,
    pub slot_f1: f64,
    pub per_domain_jga: BTreeMap<String, f64>,
    pub parser_error_rate: f64,
    pub parse_errors: usize,
    pub sentinel_turns: usize,
}

impl EvalReport {
    pub fn from_runs(config: &PipelineConfig, runs: &[DialogueRun]) -> Result<Self, EvalError> {
        let results: Vec<TurnResult> = runs.iter().flat_map(|r| r.turns.iter().cloned()).collect();
        let prf = slot_prf(&results)?;
        Ok(Self {
            config: config.clone(),
            dialogue_count: runs.len(),
            turn_count: results.len(),
            aborted_dialogues: runs
                .iter()
                .filter(|r| r.aborted.is_some())
                .map(|r| r.dialogue_id.clone())
                .collect(),
            jga: joint_goal_accuracy(&results)?,
            slot_precision: prf.precision,
            slot_recall: prf.recall,
            slot_f1: prf.f1,
            per_domain_jga: per_domain_jga(&results),
            parser_error_rate: parser_error_rate(&results)?,
            parse_errors: results.iter().filter(|r| r.parse_status.is_error()).count(),
            sentinel_turns: results
                .iter()
                .filter(|r| matches!(r.parse_status, ParseStatus::Sentinel { .. }))
                .count(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Plain-text summary table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mut row = |k: &str, v: String| {
            let _ = writeln!(out, "{k:<20} {v}");
        };
        row("dialogues", self.dialogue_count.to_string());
        row("turns", self.turn_count.to_string());
        row("aborted", self.aborted_dialogues.len().to_string());
        row("JGA", format!("{:.4}", self.jga));
        row("slot precision", format!("{:.4}", self.slot_precision));
        row("slot recall", format!("{:.4}", self.slot_recall));
        row("slot F1", format!("{:.4}", self.slot_f1));
        row("parser error rate", format!("{:.4}", self.parser_error_rate));
        for (d, v) in &self.per_domain_jga {
            row(&format!("JGA[{d}]"), format!("{v:.4}"));
        }
        out
    }
}

pub struct Evaluation {
    pub report: EvalReport,
    pub runs: Vec<DialogueRun>,
}

/// One trace line per turn. Latency is left out so traces of replayed runs
/// are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub dialogue_id: String,
    pub turn: usize,
    pub intent: Option<String>,
    pub completion: String,
    pub parse: ParseStatus,
    pub predicted_delta: BTreeMap<String, String>,
    pub predicted_state: BTreeMap<String, String>,
    pub gold_state: BTreeMap<String, String>,
    pub prompt: PromptStats,
}

impl From<&TurnResult> for TraceRecord {
    fn from(r: &TurnResult) -> Self {
        Self {
            dialogue_id: r.turn.dialogue_id.clone(),
            turn: r.turn.turn_index,
            intent: r.intent.as_ref().map(Intent::render),
            completion: r.completion.clone(),
            parse: r.parse_status.clone(),
            predicted_delta: r.predicted_delta.to_flat(),
            predicted_state: r.predicted_state.to_flat(),
            gold_state: r.gold_state.to_flat(),
            prompt: r.prompt_stats,
        }
    }
}

pub fn write_trace_jsonl<W: Write>(runs: &[DialogueRun], mut out: W) -> std::io::Result<()> {
    for r in runs.iter().flat_map(|r| &r.turns) {
        serde_json::to_writer(&mut out, &TraceRecord::from(r))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub report: EvalReport,
}

/// The three rows: no intent with unmasked retrieval, intent with unmasked
/// retrieval, intent with masked retrieval. The "intent on" rows use the
/// base configuration's intent source, or the oracle when it is off.
pub fn ablation_configs(base: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
    let on = match base.intent_backend {
        IntentSource::Off => IntentSource::Oracle,
        other => other,
    };
    let row = |intent_backend, retrieval_mode| PipelineConfig {
        intent_backend,
        retrieval_mode,
        ..base.clone()
    };
    vec![
        ("baseline".to_string(), row(IntentSource::Off, RetrievalMode::UnmaskedContext)),
        ("+intent".to_string(), row(on, RetrievalMode::UnmaskedContext)),
        ("+intent +masked retrieval".to_string(), row(on, RetrievalMode::IntentMasked)),
    ]
}

pub fn run_ablation(
    base: &PipelineConfig,
    backends: Backends<'_>,
    pool: &DialogueDataset,
    dataset: &DialogueDataset,
) -> Result<Vec<AblationRow>, EvalError> {
    ablation_configs(base)
        .into_iter()
        .map(|(label, config)| {
            let report = Tracker::new(config, backends, pool)?.evaluate(dataset)?.report;
            Ok(AblationRow { label, report })
        })
        .collect()
}

/// Comparison table with JGA and slot F1 deltas against the first row.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<28} {:>8} {:>8} {:>8} {:>8}\n", "configuration", "JGA", "dJGA", "F1", "dF1");
    let (jga0, f10) = rows
        .first()
        .map(|r| (r.report.jga, r.report.slot_f1))
        .unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{:<28} {:>8.4} {:>+8.4} {:>8.4} {:>+8.4}",
            r.label,
            r.report.jga,
            r.report.jga - jga0,
            r.report.slot_f1,
            r.report.slot_f1 - f10
        );
    }
    out
}
