//! Prompt assembly: schema DDL, instruction, in-context examples, and the
//! current turn.

use thiserror::Error;

use super::SqlSchemaText;
use crate::intent::AugmentedDialogueInformation;
use crate::retrieval::ScoredExample;

pub const INSTRUCTION: &str =
    "-- Using valid SQL, complete the dialogue state change for the conversation below.";

pub const DEFAULT_PROMPT_BUDGET: usize = 3500;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("prompt needs ~{estimate} tokens, budget is {budget}")]
    TooLarge { estimate: usize, budget: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub text: String,
    pub example_count: usize,
    /// Rough token count: one token per four characters, rounded up.
    pub token_estimate: usize,
}

fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn render(ddl: &SqlSchemaText, examples: &[ScoredExample], context: &str) -> Prompt {
    let mut text = String::new();
    if !ddl.ddl.is_empty() {
        text.push_str(&ddl.ddl);
        text.push_str("\n\n");
    }
    text.push_str(INSTRUCTION);
    text.push_str("\n\n");
    for (i, ex) in examples.iter().enumerate() {
        text.push_str(&format!("Example #{}\n{}\n\n", i + 1, ex.example.prompt_block));
    }
    text.push_str(context);
    text.push_str("\nSQL:");
    Prompt {
        token_estimate: estimate_tokens(&text),
        example_count: examples.len(),
        text,
    }
}

/// Renders the prompt for the current turn from its context line (the
/// serialized augmented dialogue information, or the plain one when no
/// intent is available).
pub fn build_prompt(
    ddl: &SqlSchemaText,
    examples: &[ScoredExample],
    context: &str,
    budget: usize,
) -> Result<Prompt, PromptError> {
    let prompt = render(ddl, examples, context);
    if prompt.token_estimate > budget {
        return Err(PromptError::TooLarge {
            estimate: prompt.token_estimate,
            budget,
        });
    }
    Ok(prompt)
}

impl AugmentedDialogueInformation {
    pub fn build_prompt(
        &self,
        ddl: &SqlSchemaText,
        examples: &[ScoredExample],
        budget: usize,
    ) -> Result<Prompt, PromptError> {
        build_prompt(ddl, examples, &self.serialize_context(), budget)
    }
}

/// Drops lowest-ranked examples until the prompt fits the budget. Returns
/// the prompt and the number of dropped examples; fails only when even the
/// example-free prompt is too large.
pub fn fit_prompt(
    ddl: &SqlSchemaText,
    examples: &[ScoredExample],
    context: &str,
    budget: usize,
) -> Result<(Prompt, usize), PromptError> {
    let mut n = examples.len();
    loop {
        match build_prompt(ddl, &examples[..n], context, budget) {
            Ok(p) => return Ok((p, examples.len() - n)),
            Err(e) if n == 0 => return Err(e),
            Err(_) => n -= 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{RetrievalExample, TurnRef};
    use crate::model::StateChange;

    fn ddl() -> SqlSchemaText {
        SqlSchemaText {
            ddl: "CREATE TABLE hotel(area text);".into(),
        }
    }

    fn ex(i: usize) -> ScoredExample {
        ScoredExample {
            example: RetrievalExample {
                source: TurnRef::new(format!("d{i}"), 0),
                query_text: format!("[CONTEXT] {{}} [SYS]  [USER] u{i} [DOMAIN] hotel"),
                state_change: StateChange::new(),
                prompt_block: format!("[CONTEXT] {{}} [SYS]  [USER] u{i} [DOMAIN] hotel\nSQL: SELECT * FROM none;"),
            },
            score: 1.0 / (i + 1) as f64,
        }
    }

    #[test]
    fn zero_examples_layout() {
        let p = build_prompt(&ddl(), &[], "CTX", 1000).unwrap();
        assert_eq!(
            p.text,
            format!("CREATE TABLE hotel(area text);\n\n{INSTRUCTION}\n\nCTX\nSQL:")
        );
        assert_eq!(p.example_count, 0);
        assert!(p.token_estimate * 4 >= p.text.chars().count());
    }

    #[test]
    fn counts_examples_and_is_deterministic() {
        let exs: Vec<_> = (0..3).map(ex).collect();
        let a = build_prompt(&ddl(), &exs, "CTX", 1000).unwrap();
        let b = build_prompt(&ddl(), &exs, "CTX", 1000).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.example_count, 3);
        assert_eq!(a.text.matches("Example #").count(), 3);
        assert!(a.text.contains("Example #3\n[CONTEXT] {} [SYS]  [USER] u2"));
    }

    #[test]
    fn budget_drops_lowest_ranked() {
        let exs: Vec<_> = (0..5).map(ex).collect();
        let full = build_prompt(&ddl(), &exs, "CTX", usize::MAX).unwrap();
        let two = build_prompt(&ddl(), &exs[..2], "CTX", usize::MAX).unwrap();
        assert!(matches!(
            build_prompt(&ddl(), &exs, "CTX", two.token_estimate),
            Err(PromptError::TooLarge { .. })
        ));
        let (p, dropped) = fit_prompt(&ddl(), &exs, "CTX", two.token_estimate).unwrap();
        assert_eq!((p.example_count, dropped), (2, 3));
        assert!(p.text.contains("u1") && !p.text.contains("u2"));
        assert!(full.token_estimate > two.token_estimate);
        assert!(fit_prompt(&ddl(), &exs, "CTX", 5).is_err());
    }
}
