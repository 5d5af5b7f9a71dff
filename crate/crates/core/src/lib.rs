//! Few-shot dialogue state tracking with intent-driven in-context learning.
//!
//! The pipeline predicts a turn's intent, masks the dialogue information down
//! to that intent, retrieves labelled turns with similar intents, and asks a
//! completion model for the state change as a SQL statement. The predicted
//! change is parsed back and applied to the running state.

pub mod data;
pub mod eval;
pub mod http;
pub mod intent;
pub mod llm;
pub mod model;
pub mod retrieval;
pub mod sql;
pub mod toy;

pub use data::{Dialogue, DialogueDataset, DialogueTurn, RetrievalExample, Split, TurnRef};
pub use intent::{AugmentedDialogueInformation, DialogueInformation, Intent};
pub use model::{apply_delta, state_diff, DialogueState, Schema, SlotKey, SlotValue, StateChange};
