//! Seeded generator of small MultiWOZ-like corpora for tests and demos.
//!
//! Each dialogue books one or two domains. Turns inform a few slots in
//! templated English, sometimes revise a value, sometimes drop a
//! constraint, and sometimes only chat. Gold states are exact.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{from_canonical_jsonl, Dialogue, DialogueDataset, DialogueTurn, Split};
use crate::model::{state_diff, DialogueState, Schema, SlotKey};

fn vocabulary(slot: &str) -> &'static [&'static str] {
    match slot {
        "area" => &["centre", "north", "south", "east", "west"],
        "day" => &["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"],
        "internet" | "parking" => &["yes", "no"],
        "pricerange" => &["cheap", "moderate", "expensive"],
        "stars" => &["2", "3", "4", "5"],
        "people" => &["1", "2", "3", "4", "5", "6"],
        "stay" => &["1", "2", "3", "4", "5"],
        "time" => &["11:30", "12:15", "13:00", "17:45", "18:30", "19:00"],
        "leaveat" => &["8:15", "9:30", "10:00", "14:45", "16:00"],
        "arriveby" => &["10:15", "12:00", "15:30", "18:00", "20:45"],
        "food" => &["italian", "indian", "chinese", "british", "french", "thai"],
        "departure" | "destination" => &["cambridge", "london kings cross", "ely", "stevenage", "norwich", "peterborough"],
        "department" => &["cardiology", "neurology", "paediatrics", "oncology"],
        _ => &[],
    }
}

fn domain_vocabulary(domain: &str, slot: &str) -> &'static [&'static str] {
    match (domain, slot) {
        ("hotel", "type") => &["hotel", "guesthouse"],
        ("attraction", "type") => &["museum", "college", "park", "theatre", "nightclub"],
        ("hotel", "name") => &["acorn guest house", "the lensfield hotel", "alpha-milton guest house"],
        ("restaurant", "name") => &["pizza hut city centre", "the golden curry", "nando's"],
        ("attraction", "name") => &["kettle's yard", "the fitzwilliam museum", "clare college"],
        ("police", "name") => &["parkside police station"],
        ("taxi", "departure") | ("taxi", "destination") => {
            &["the golden curry", "clare college", "acorn guest house", "kettle's yard"]
        }
        _ => vocabulary(slot),
    }
}

fn phrase(key: &SlotKey, value: &str, rng: &mut ChaCha8Rng) -> String {
    let d = key.domain.as_str();
    let options: Vec<String> = match key.slot.as_str() {
        "area" => vec![format!("in the {value}"), format!("somewhere in the {value} part of town")],
        "day" => vec![format!("on {value}"), format!("for {value}")],
        "people" => vec![format!("for {value} people"), format!("for a group of {value}")],
        "stay" => vec![format!("for {value} nights")],
        "time" => vec![format!("at {value}")],
        "leaveat" => vec![format!("leaving after {value}")],
        "arriveby" => vec![format!("arriving by {value}")],
        "departure" => vec![format!("departing from {value}"), format!("from {value}")],
        "destination" => vec![format!("going to {value}"), format!("to {value}")],
        "pricerange" => vec![format!("in the {value} price range"), format!("that is {value}")],
        "stars" => vec![format!("with {value} stars"), format!("rated {value} stars")],
        "food" => vec![format!("serving {value} food"), format!("that does {value}")],
        "internet" => vec![if value == "yes" { "with free wifi".into() } else { "without internet".into() }],
        "parking" => vec![if value == "yes" { "with free parking".into() } else { "without parking".into() }],
        "type" => vec![format!("that is a {value}")],
        "name" => vec![format!("called {value}")],
        "department" => vec![format!("with the {value} department")],
        slot => vec![format!("with {slot} {value}")],
    };
    let p = options.choose(rng).cloned().unwrap_or_default();
    if rng.gen_bool(0.5) {
        format!("a {d} {p}")
    } else {
        p
    }
}

const OPENERS: &[&str] = &["i am looking for", "can you help me find", "i need", "please find me", "i would like"];
const CHITCHAT: &[&str] = &[
    "thanks , that is all i need .",
    "great , thank you very much .",
    "could you give me the phone number ?",
    "what is the address please ?",
    "no , that will be all .",
];
const SYSTEM: &[&str] = &[
    "i have several options for you .",
    "sure , what else can i do for you ?",
    "i found a match . shall i book it ?",
    "do you have any other preferences ?",
    "booking was successful .",
];

/// Canonical JSONL of `generate(&Schema::multiwoz(), 20, 20)`.
pub const BUNDLED_FIXTURE: &str = include_str!("../data/toy20.jsonl");

/// The bundled 20-dialogue corpus.
pub fn bundled_fixture() -> DialogueDataset {
    from_canonical_jsonl(BUNDLED_FIXTURE.as_bytes(), &Schema::multiwoz(), Split::Test)
        .expect("bundled fixture is valid")
}

/// Generates `n` dialogues with ids `toy{seed}-{i:04}`, ordered by id.
pub fn generate(schema: &Schema, n: usize, seed: u64) -> DialogueDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domains: Vec<String> = schema
        .domains()
        .iter()
        .filter(|d| schema.slots(d).unwrap_or_default().iter().any(|s| !domain_vocabulary(d, s).is_empty()))
        .cloned()
        .collect();
    let dialogues = (0..n)
        .map(|i| generate_dialogue(schema, &domains, format!("toy{seed}-{i:04}"), &mut rng))
        .collect();
    DialogueDataset {
        split: Split::Train,
        dialogues,
        schema: schema.clone(),
    }
}

fn generate_dialogue(schema: &Schema, domains: &[String], id: String, rng: &mut ChaCha8Rng) -> Dialogue {
    let n_domains = if rng.gen_bool(0.35) { 2 } else { 1 };
    let chosen: Vec<&String> = domains.choose_multiple(rng, n_domains.min(domains.len())).collect();
    let n_turns = rng.gen_range(2..=6);
    let mut state = DialogueState::new();
    let mut turns = Vec::with_capacity(n_turns);
    let mut system = String::new();

    for t in 0..n_turns {
        let domain = chosen[(t * chosen.len()) / n_turns].as_str();
        let slots: Vec<&String> = schema
            .slots(domain)
            .unwrap_or_default()
            .iter()
            .filter(|s| !domain_vocabulary(domain, s).is_empty())
            .collect();
        let prev = state.clone();
        let roll: f64 = rng.gen();
        let mut parts = Vec::new();
        if t > 0 && roll < 0.15 {
            // chit-chat turn, no change
        } else if t > 0 && roll < 0.22 && !state.is_empty() {
            let victim = state.iter().map(|(k, _)| k.clone()).collect::<Vec<_>>().choose(rng).cloned();
            if let Some(k) = victim {
                state.remove(&k);
                parts.push(format!("actually , forget about the {} .", k.slot));
            }
        } else {
            let count = rng.gen_range(1..=3usize).min(slots.len());
            for slot in slots.choose_multiple(rng, count) {
                let key = SlotKey::new(domain, slot.as_str());
                let value = domain_vocabulary(domain, slot)
                    .choose(rng)
                    .copied()
                    .unwrap_or_default()
                    .to_string();
                parts.push(phrase(&key, &value, rng));
                state.insert(key, value);
            }
        }
        let user = if parts.is_empty() {
            CHITCHAT.choose(rng).copied().unwrap_or_default().to_string()
        } else if parts[0].starts_with("actually") {
            parts.join(" ")
        } else {
            format!("{} {} .", OPENERS.choose(rng).copied().unwrap_or_default(), parts.join(" and "))
        };
        let changed = state_diff(&prev, &state);
        let active_domains = if changed.is_empty() {
            turns.last().map(|x: &DialogueTurn| x.active_domains.clone()).unwrap_or_default()
        } else {
            changed.domains()
        };
        turns.push(DialogueTurn {
            turn_index: t,
            user_utterance: user,
            system_utterance: std::mem::take(&mut system),
            gold_state: state.clone(),
            active_domains,
        });
        system = SYSTEM.choose(rng).copied().unwrap_or_default().to_string();
    }
    Dialogue { dialogue_id: id, turns }
}
