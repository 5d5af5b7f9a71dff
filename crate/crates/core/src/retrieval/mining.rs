//! Contrastive training-pair mining for retriever fine-tuning.
//!
//! Each pool example acts once as an anchor. Its highest-scoring peers become
//! positives and a uniform sample of low-scoring peers become negatives; every
//! record is labelled with the state-change similarity of the two examples.

use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rank_order;
use super::similarity::state_change_similarity;
use crate::data::RetrievalExample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub text_a: String,
    pub text_b: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningConfig {
    pub positives_per_anchor: usize,
    pub negatives_per_anchor: usize,
    /// Peers scoring strictly below this are negative candidates.
    pub negative_threshold: f64,
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            positives_per_anchor: 2,
            negatives_per_anchor: 4,
            negative_threshold: 0.2,
            seed: 0,
        }
    }
}

pub fn mine_training_pairs(pool: &[RetrievalExample], config: &MiningConfig) -> Vec<TrainingPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::new();
    for (i, anchor) in pool.iter().enumerate() {
        let mut peers: Vec<(f64, usize)> = pool
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, e)| (state_change_similarity(&anchor.state_change, &e.state_change), j))
            .collect();
        peers.sort_by(|a, b| rank_order((a.0, &pool[a.1].source), (b.0, &pool[b.1].source)));

        let positives = config.positives_per_anchor.min(peers.len());
        let negatives: Vec<(f64, usize)> = peers[positives..]
            .iter()
            .copied()
            .filter(|(s, _)| *s < config.negative_threshold)
            .collect();
        let take = config.negatives_per_anchor.min(negatives.len());
        let picked = sample(&mut rng, negatives.len(), take);

        let record = |(score, j): (f64, usize)| TrainingPair {
            text_a: anchor.query_text.clone(),
            text_b: pool[j].query_text.clone(),
            score,
        };
        out.extend(peers[..positives].iter().copied().map(record));
        out.extend(picked.iter().map(|n| record(negatives[n])));
    }
    out
}

/// One JSON object per line: `{"text_a": .., "text_b": .., "score": ..}`.
pub fn write_pairs_jsonl<W: Write>(pairs: &[TrainingPair], mut writer: W) -> std::io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut writer, p)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
