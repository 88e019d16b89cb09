//! End-to-end summarization: encode, predict and sharpen salience, fuse it
//! into cross-attention and run the constrained search.

use serde::{Deserialize, Serialize};

use crate::data::{PreparedExample, Vocab};
use crate::decode::{beam_search, greedy, DecodeConfig};
use crate::model::{ConditionedDecoder, ModelError, Parameters};

/// One generated summary, as serialized to JSON lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub id: String,
    pub summary: String,
}

/// Generated token ids for one prepared example (soft salience path).
pub fn summarize_ids(
    params: &Parameters,
    prepared: &PreparedExample,
    cfg: &DecodeConfig,
) -> Result<Vec<u32>, ModelError> {
    let decoder = ConditionedDecoder::new(params, &prepared.input_ids, cfg.temperature)?;
    let mut effective = cfg.clone();
    // Generated content plus BOS/EOS must fit the target budget.
    effective.max_len = cfg
        .max_len
        .min(params.config.max_tgt_len.saturating_sub(2).max(1));
    Ok(beam_search(&decoder, &effective))
}

/// Greedy counterpart of [`summarize_ids`].
pub fn summarize_ids_greedy(
    params: &Parameters,
    prepared: &PreparedExample,
    cfg: &DecodeConfig,
) -> Result<Vec<u32>, ModelError> {
    let decoder = ConditionedDecoder::new(params, &prepared.input_ids, cfg.temperature)?;
    let mut effective = cfg.clone();
    effective.max_len = cfg
        .max_len
        .min(params.config.max_tgt_len.saturating_sub(2).max(1));
    Ok(greedy(&decoder, &effective))
}

/// Full text pipeline for one example.
pub fn summarize_text(
    params: &Parameters,
    vocab: &Vocab,
    prepared: &PreparedExample,
    cfg: &DecodeConfig,
    use_greedy: bool,
) -> Result<SummaryRecord, ModelError> {
    let ids = if use_greedy || cfg.beam_width == 1 {
        summarize_ids_greedy(params, prepared, cfg)?
    } else {
        summarize_ids(params, prepared, cfg)?
    };
    Ok(SummaryRecord {
        id: prepared.id.clone(),
        summary: vocab.detokenize(&ids),
    })
}
