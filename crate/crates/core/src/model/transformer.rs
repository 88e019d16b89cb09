//! Graph construction for the encoder-decoder: self-attention stacks, the
//! salience classifier over marker states, salience-aware cross-attention
//! (salience embeddings added to projected keys), the multi-task loss and
//! the step-wise decoder used at inference time.

use std::collections::HashMap;

use ndarray::{Array1, Array2};

use super::tape::{log_softmax_row, softmax_rows, NodeId, Tape};
use super::{position_encoding, AttentionParams, EncodedDocument, ModelError, Parameters};
use crate::data::{PreparedExample, BOS_ID, EOS_ID, MARKER_ID};
use crate::decode::SeqModel;
use crate::salience::{expected_salience_embedding, SalienceDistribution};

const MASK_OFF: f64 = -1e30;

/// Parameter tensors registered on a tape, addressable by canonical name.
struct ParamNodes {
    by_name: HashMap<String, NodeId>,
    order: Vec<NodeId>,
}

impl ParamNodes {
    fn get(&self, name: &str) -> NodeId {
        *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter tensor {name:?}"))
    }

    fn attn(&self, prefix: &str) -> AttnNodes {
        AttnNodes {
            wq: self.get(&format!("{prefix}.wq")),
            wk: self.get(&format!("{prefix}.wk")),
            wv: self.get(&format!("{prefix}.wv")),
            wo: self.get(&format!("{prefix}.wo")),
            bq: self.get(&format!("{prefix}.bq")),
            bk: self.get(&format!("{prefix}.bk")),
            bv: self.get(&format!("{prefix}.bv")),
            bo: self.get(&format!("{prefix}.bo")),
        }
    }

    fn layer_norm(&self, tape: &mut Tape, prefix: &str, x: NodeId) -> NodeId {
        let gain = self.get(&format!("{prefix}.gain"));
        let bias = self.get(&format!("{prefix}.bias"));
        tape.layer_norm_rows(x, gain, bias)
    }
}

/// Registers every tensor; `trainable` decides whether gradients flow.
fn register_params(tape: &mut Tape, params: &Parameters, trainable: bool) -> ParamNodes {
    let mut by_name = HashMap::new();
    let mut order = Vec::new();
    params.for_each(&mut |name, tensor| {
        let id = if trainable {
            tape.param(tensor.clone())
        } else {
            tape.constant(tensor.clone())
        };
        by_name.insert(name, id);
        order.push(id);
    });
    ParamNodes { by_name, order }
}

#[derive(Clone, Copy)]
struct AttnNodes {
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
    wo: NodeId,
    bq: NodeId,
    bk: NodeId,
    bv: NodeId,
    bo: NodeId,
}

/// Scaled dot-product multi-head attention. `key_addition`, when present,
/// is added to the projected keys before head splitting — values and
/// queries stay untouched. Returns the attended output and the per-head
/// attention weight nodes.
fn attention_block(
    tape: &mut Tape,
    nodes: AttnNodes,
    queries_in: NodeId,
    keys_in: NodeId,
    n_heads: usize,
    mask: Option<NodeId>,
    key_addition: Option<NodeId>,
) -> (NodeId, Vec<NodeId>) {
    let q_proj = tape.matmul(queries_in, nodes.wq);
    let q = tape.add_row_broadcast(q_proj, nodes.bq);
    let k_proj = tape.matmul(keys_in, nodes.wk);
    let mut k = tape.add_row_broadcast(k_proj, nodes.bk);
    if let Some(extra) = key_addition {
        k = tape.add(k, extra);
    }
    let v_proj = tape.matmul(keys_in, nodes.wv);
    let v = tape.add_row_broadcast(v_proj, nodes.bv);

    let d_model = tape.value(q).ncols();
    let head_dim = d_model / n_heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
        let qh = tape.slice_cols(q, lo, hi);
        let kh = tape.slice_cols(k, lo, hi);
        let vh = tape.slice_cols(v, lo, hi);
        let kt = tape.transpose(kh);
        let raw = tape.matmul(qh, kt);
        let mut scores = tape.scale(raw, scale);
        if let Some(m) = mask {
            scores = tape.add(scores, m);
        }
        let attn = tape.softmax_rows(scores);
        weights.push(attn);
        heads.push(tape.matmul(attn, vh));
    }
    let merged = tape.concat_cols(&heads);
    let projected = tape.matmul(merged, nodes.wo);
    let out = tape.add_row_broadcast(projected, nodes.bo);
    (out, weights)
}

fn ffn_block(tape: &mut Tape, nodes: &ParamNodes, prefix: &str, x: NodeId) -> NodeId {
    let w1 = nodes.get(&format!("{prefix}.w1"));
    let b1 = nodes.get(&format!("{prefix}.b1"));
    let w2 = nodes.get(&format!("{prefix}.w2"));
    let b2 = nodes.get(&format!("{prefix}.b2"));
    let h_lin = tape.matmul(x, w1);
    let h_shift = tape.add_row_broadcast(h_lin, b1);
    let h = tape.gelu(h_shift);
    let out_lin = tape.matmul(h, w2);
    tape.add_row_broadcast(out_lin, b2)
}

/// Token + sinusoidal position embeddings.
fn embed(tape: &mut Tape, nodes: &ParamNodes, ids: &[u32], d_model: usize) -> NodeId {
    let indices: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
    let tok = tape.select_rows(nodes.get("tok_emb"), &indices);
    let pos = tape.constant(position_encoding(ids.len(), d_model));
    tape.add(tok, pos)
}

/// Post-norm encoder stack; zero layers means raw embeddings.
fn build_encoder(
    tape: &mut Tape,
    nodes: &ParamNodes,
    params: &Parameters,
    input_ids: &[u32],
) -> NodeId {
    let mut x = embed(tape, nodes, input_ids, params.config.d_model);
    for i in 0..params.config.enc_layers {
        let attn = nodes.attn(&format!("enc{i}.attn"));
        let (attn_out, _) =
            attention_block(tape, attn, x, x, params.config.n_heads, None, None);
        let res = tape.add(x, attn_out);
        x = nodes.layer_norm(tape, &format!("enc{i}.ln_attn"), res);
        let ffn = ffn_block(tape, nodes, &format!("enc{i}.ffn"), x);
        let res = tape.add(x, ffn);
        x = nodes.layer_norm(tape, &format!("enc{i}.ln_ffn"), res);
    }
    x
}

/// Decoder stack: causal self-attention, then cross-attention over the
/// encoder states with the salience rows fused into the keys, then FFN.
fn build_decoder(
    tape: &mut Tape,
    nodes: &ParamNodes,
    params: &Parameters,
    dec_input_ids: &[u32],
    enc_hidden: NodeId,
    key_addition: Option<NodeId>,
) -> NodeId {
    let len = dec_input_ids.len();
    let mut x = embed(tape, nodes, dec_input_ids, params.config.d_model);
    let causal = tape.constant(Array2::from_shape_fn((len, len), |(r, c)| {
        if c > r {
            MASK_OFF
        } else {
            0.0
        }
    }));
    for i in 0..params.config.dec_layers {
        let self_attn = nodes.attn(&format!("dec{i}.self"));
        let (self_out, _) =
            attention_block(tape, self_attn, x, x, params.config.n_heads, Some(causal), None);
        let res = tape.add(x, self_out);
        x = nodes.layer_norm(tape, &format!("dec{i}.ln_self"), res);

        let cross = nodes.attn(&format!("dec{i}.cross"));
        let (cross_out, _) = attention_block(
            tape,
            cross,
            x,
            enc_hidden,
            params.config.n_heads,
            None,
            key_addition,
        );
        let res = tape.add(x, cross_out);
        x = nodes.layer_norm(tape, &format!("dec{i}.ln_cross"), res);

        let ffn = ffn_block(tape, nodes, &format!("dec{i}.ffn"), x);
        let res = tape.add(x, ffn);
        x = nodes.layer_norm(tape, &format!("dec{i}.ln_ffn"), res);
    }
    x
}

/// Logits against the tied token embedding.
fn tied_logits(tape: &mut Tape, nodes: &ParamNodes, dec_hidden: NodeId) -> NodeId {
    let emb_t = tape.transpose(nodes.get("tok_emb"));
    tape.matmul(dec_hidden, emb_t)
}

/// Salience logits at the marker positions.
fn salience_logits(
    tape: &mut Tape,
    nodes: &ParamNodes,
    enc_hidden: NodeId,
    marker_positions: &[usize],
) -> NodeId {
    let picked = tape.select_rows(enc_hidden, marker_positions);
    let proj = tape.matmul(picked, nodes.get("cls_w"));
    tape.add_row_broadcast(proj, nodes.get("cls_b"))
}

/// Marker positions and the sentence index of every token, derived from
/// where the marker id sits in the input.
fn sentence_layout(input_ids: &[u32]) -> (Vec<usize>, Vec<usize>) {
    let mut markers = Vec::new();
    let mut sentence_of_token = Vec::with_capacity(input_ids.len());
    for (pos, &id) in input_ids.iter().enumerate() {
        if id == MARKER_ID {
            markers.push(pos);
        }
        sentence_of_token.push(markers.len().saturating_sub(1));
    }
    (markers, sentence_of_token)
}

fn validate_input(params: &Parameters, input_ids: &[u32]) -> Result<(), ModelError> {
    if input_ids.len() > params.config.max_src_len {
        return Err(ModelError::InputTooLong {
            len: input_ids.len(),
            max: params.config.max_src_len,
        });
    }
    if input_ids.is_empty() {
        return Err(ModelError::ShapeMismatch("empty input".into()));
    }
    if let Some(&bad) = input_ids
        .iter()
        .find(|&&id| id as usize >= params.config.vocab_size)
    {
        return Err(ModelError::ShapeMismatch(format!(
            "token id {bad} outside vocabulary of {}",
            params.config.vocab_size
        )));
    }
    if !input_ids.contains(&MARKER_ID) {
        return Err(ModelError::NoMarkers);
    }
    Ok(())
}

/// Runs the encoder and returns hidden states plus sentence bookkeeping.
pub fn encode(params: &Parameters, input_ids: &[u32]) -> Result<EncodedDocument, ModelError> {
    validate_input(params, input_ids)?;
    let (marker_positions, sentence_of_token) = sentence_layout(input_ids);
    let mut tape = Tape::new();
    let nodes = register_params(&mut tape, params, false);
    let enc = build_encoder(&mut tape, &nodes, params, input_ids);
    Ok(EncodedDocument {
        hidden: tape.value(enc).clone(),
        marker_positions,
        sentence_of_token,
    })
}

/// Softmax of the linear salience classifier at every marker state.
pub fn predict_salience(params: &Parameters, enc: &EncodedDocument) -> SalienceDistribution {
    let mut logits = Array2::zeros((enc.marker_positions.len(), params.config.degrees));
    for (row, &pos) in enc.marker_positions.iter().enumerate() {
        let h = enc.hidden.row(pos);
        for k in 0..params.config.degrees {
            let mut z = params.cls_b[(0, k)];
            for d in 0..params.config.d_model {
                z += h[d] * params.cls_w[(d, k)];
            }
            logits[(row, k)] = z;
        }
    }
    let probs = softmax_rows(&logits);
    SalienceDistribution {
        probs: (0..probs.nrows()).map(|r| probs.row(r).to_vec()).collect(),
    }
}

/// Per-sentence salience fed into the cross-attention keys: hard oracle
/// degrees during training, a soft predicted distribution at inference.
pub enum SalienceInput<'a> {
    Hard(&'a [usize]),
    Soft(&'a SalienceDistribution),
}

/// The `src_len × d_model` rows added to the projected cross-attention
/// keys: every token inherits its sentence's salience embedding (hard) or
/// expected salience embedding (soft).
fn salience_rows(
    sal_table: &Array2<f64>,
    sentence_of_token: &[usize],
    salience: &SalienceInput,
    sentence_count: usize,
) -> Result<Array2<f64>, ModelError> {
    let degrees = sal_table.nrows();
    let per_sentence: Vec<Array1<f64>> = match salience {
        SalienceInput::Hard(levels) => {
            if levels.len() != sentence_count {
                return Err(ModelError::MissingOracleLevels {
                    expected: sentence_count,
                    got: levels.len(),
                });
            }
            levels
                .iter()
                .map(|&l| {
                    if l >= degrees {
                        return Err(ModelError::ShapeMismatch(format!(
                            "salience level {l} outside 0..{degrees}"
                        )));
                    }
                    Ok(sal_table.row(l).to_owned())
                })
                .collect::<Result<_, _>>()?
        }
        SalienceInput::Soft(dist) => {
            if dist.probs.len() != sentence_count {
                return Err(ModelError::MissingOracleLevels {
                    expected: sentence_count,
                    got: dist.probs.len(),
                });
            }
            dist.probs
                .iter()
                .map(|p| {
                    expected_salience_embedding(p, sal_table).map_err(|e| {
                        ModelError::ShapeMismatch(format!("salience distribution: {e}"))
                    })
                })
                .collect::<Result<_, _>>()?
        }
    };
    let mut rows = Array2::zeros((sentence_of_token.len(), sal_table.ncols()));
    for (t, &s) in sentence_of_token.iter().enumerate() {
        rows.row_mut(t).assign(&per_sentence[s]);
    }
    Ok(rows)
}

/// Attention output plus the per-head weight matrices (each row sums to 1).
pub struct AttentionOutput {
    pub context: Array2<f64>,
    pub weights: Vec<Array2<f64>>,
}

/// One salience-aware cross-attention block in isolation: projects queries
/// and encoder states, adds each token's sentence-level salience embedding
/// to its key, and attends.
pub fn saca_attention(
    attn: &AttentionParams,
    sal_table: &Array2<f64>,
    queries: &Array2<f64>,
    enc: &EncodedDocument,
    salience: &SalienceInput,
    n_heads: usize,
) -> Result<AttentionOutput, ModelError> {
    let d = queries.ncols();
    if d != enc.hidden.ncols() || d % n_heads != 0 || sal_table.ncols() != d {
        return Err(ModelError::ShapeMismatch(format!(
            "queries {d}-dim vs encoder {}-dim, {n_heads} heads",
            enc.hidden.ncols()
        )));
    }
    let rows = salience_rows(
        sal_table,
        &enc.sentence_of_token,
        salience,
        enc.marker_positions.len(),
    )?;
    run_cross_block(attn, queries, &enc.hidden, Some(&rows), n_heads)
}

/// Vanilla cross-attention over the same projections, no salience fusion.
pub fn cross_attention(
    attn: &AttentionParams,
    queries: &Array2<f64>,
    enc: &EncodedDocument,
    n_heads: usize,
) -> Result<AttentionOutput, ModelError> {
    if queries.ncols() != enc.hidden.ncols() || queries.ncols() % n_heads != 0 {
        return Err(ModelError::ShapeMismatch(
            "query/encoder dimension mismatch".into(),
        ));
    }
    run_cross_block(attn, queries, &enc.hidden, None, n_heads)
}

fn run_cross_block(
    attn: &AttentionParams,
    queries: &Array2<f64>,
    enc_hidden: &Array2<f64>,
    key_addition: Option<&Array2<f64>>,
    n_heads: usize,
) -> Result<AttentionOutput, ModelError> {
    let mut tape = Tape::new();
    let nodes = AttnNodes {
        wq: tape.constant(attn.wq.clone()),
        wk: tape.constant(attn.wk.clone()),
        wv: tape.constant(attn.wv.clone()),
        wo: tape.constant(attn.wo.clone()),
        bq: tape.constant(attn.bq.clone()),
        bk: tape.constant(attn.bk.clone()),
        bv: tape.constant(attn.bv.clone()),
        bo: tape.constant(attn.bo.clone()),
    };
    let q = tape.constant(queries.clone());
    let k_src = tape.constant(enc_hidden.clone());
    let addition = key_addition.map(|rows| tape.constant(rows.clone()));
    let (out, weight_nodes) = attention_block(&mut tape, nodes, q, k_src, n_heads, None, addition);
    Ok(AttentionOutput {
        context: tape.value(out).clone(),
        weights: weight_nodes
            .into_iter()
            .map(|w| tape.value(w).clone())
            .collect(),
    })
}

/// The three components of the multi-task objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    /// Token-level cross-entropy of the teacher-forced decoder.
    pub nll: f64,
    /// Sentence-level cross-entropy of the salience classifier.
    pub sal_ce: f64,
    /// `nll + lambda_sal · sal_ce`.
    pub total: f64,
}

fn validate_example(params: &Parameters, ex: &PreparedExample) -> Result<(), ModelError> {
    validate_input(params, &ex.input_ids)?;
    let (markers, _) = sentence_layout(&ex.input_ids);
    if markers != ex.marker_positions {
        return Err(ModelError::ShapeMismatch(format!(
            "marker positions {:?} do not match input ids",
            ex.marker_positions
        )));
    }
    if ex.oracle_levels.len() != markers.len() {
        return Err(ModelError::MissingOracleLevels {
            expected: markers.len(),
            got: ex.oracle_levels.len(),
        });
    }
    if ex.oracle_levels.iter().any(|&l| l >= params.config.degrees) {
        return Err(ModelError::ShapeMismatch(
            "oracle level outside configured degree count".into(),
        ));
    }
    if ex.target_ids.len() < 2 || ex.target_ids[0] != BOS_ID {
        return Err(ModelError::ShapeMismatch(
            "target must start with BOS and contain at least one step".into(),
        ));
    }
    if ex.target_ids.len() > params.config.max_tgt_len {
        return Err(ModelError::InputTooLong {
            len: ex.target_ids.len(),
            max: params.config.max_tgt_len,
        });
    }
    if ex
        .target_ids
        .iter()
        .any(|&id| id as usize >= params.config.vocab_size)
    {
        return Err(ModelError::ShapeMismatch(
            "target id outside vocabulary".into(),
        ));
    }
    Ok(())
}

/// Full training graph for one example. Returns the tape, the canonical
/// parameter node order and the two summed cross-entropy roots.
struct ExampleGraph {
    tape: Tape,
    param_order: Vec<NodeId>,
    ce_tok: NodeId,
    ce_sal: NodeId,
}

fn build_example_graph(
    params: &Parameters,
    ex: &PreparedExample,
    trainable: bool,
) -> Result<ExampleGraph, ModelError> {
    validate_example(params, ex)?;
    let mut tape = Tape::new();
    let nodes = register_params(&mut tape, params, trainable);

    let enc = build_encoder(&mut tape, &nodes, params, &ex.input_ids);
    let sal_logits = salience_logits(&mut tape, &nodes, enc, &ex.marker_positions);
    let ce_sal = tape.cross_entropy_rows(sal_logits, &ex.oracle_levels);

    // Training fuses the hard oracle degrees into the keys (teacher salience).
    let per_token_levels: Vec<usize> = ex
        .sentence_of_token
        .iter()
        .map(|&s| ex.oracle_levels[s])
        .collect();
    let key_addition = tape.select_rows(nodes.get("sal_emb"), &per_token_levels);

    let dec_input = &ex.target_ids[..ex.target_ids.len() - 1];
    let labels: Vec<usize> = ex.target_ids[1..].iter().map(|&t| t as usize).collect();
    let dec_hidden = build_decoder(&mut tape, &nodes, params, dec_input, enc, Some(key_addition));
    let logits = tied_logits(&mut tape, &nodes, dec_hidden);
    let ce_tok = tape.cross_entropy_rows(logits, &labels);

    Ok(ExampleGraph {
        tape,
        param_order: nodes.order,
        ce_tok,
        ce_sal,
    })
}

/// Multi-task loss over a batch: `nll` averages token cross-entropy over
/// all target steps in the batch, `sal_ce` averages over all sentences.
pub fn batch_loss(params: &Parameters, batch: &[&PreparedExample]) -> Result<LossParts, ModelError> {
    let (loss, _) = batch_forward(params, batch, false)?;
    Ok(loss)
}

/// Loss plus exact gradients for every parameter tensor, in the canonical
/// `Parameters::for_each` order.
pub fn batch_loss_and_grads(
    params: &Parameters,
    batch: &[&PreparedExample],
) -> Result<(LossParts, Vec<Array2<f64>>), ModelError> {
    let (loss, grads) = batch_forward(params, batch, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

fn batch_forward(
    params: &Parameters,
    batch: &[&PreparedExample],
    with_grads: bool,
) -> Result<(LossParts, Option<Vec<Array2<f64>>>), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let total_tokens: usize = batch.iter().map(|ex| ex.target_ids.len() - 1).sum();
    let total_sents: usize = batch.iter().map(|ex| ex.oracle_levels.len()).sum();
    let lambda = params.config.lambda_sal;

    let mut grad_accum: Option<Vec<Array2<f64>>> = if with_grads {
        Some(
            params
                .named_tensors()
                .into_iter()
                .map(|(_, t)| Array2::zeros(t.dim()))
                .collect(),
        )
    } else {
        None
    };
    let mut nll = 0.0;
    let mut sal_ce = 0.0;
    for ex in batch {
        let graph = build_example_graph(params, ex, with_grads)?;
        let mut tape = graph.tape;
        let ce_tok_scaled = tape.scale(graph.ce_tok, 1.0 / total_tokens as f64);
        let ce_sal_scaled = tape.scale(graph.ce_sal, lambda / total_sents.max(1) as f64);
        let root = tape.add(ce_tok_scaled, ce_sal_scaled);

        nll += tape.scalar(graph.ce_tok) / total_tokens as f64;
        sal_ce += tape.scalar(graph.ce_sal) / total_sents.max(1) as f64;

        if let Some(accum) = grad_accum.as_mut() {
            let grads = tape.backward(root);
            for (slot, &node) in accum.iter_mut().zip(&graph.param_order) {
                if let Some(g) = &grads[node] {
                    *slot += g;
                }
            }
        }
    }
    let total = nll + lambda * sal_ce;
    if !total.is_finite() {
        return Err(ModelError::NonFiniteLoss(format!(
            "nll={nll}, sal_ce={sal_ce}"
        )));
    }
    Ok((
        LossParts { nll, sal_ce, total },
        grad_accum,
    ))
}

/// A document-conditioned step decoder: encodes once, predicts and sharpens
/// the salience allocation, and then scores next tokens for the search.
pub struct ConditionedDecoder<'a> {
    params: &'a Parameters,
    enc_hidden: Array2<f64>,
    key_addition: Option<Array2<f64>>,
}

impl<'a> ConditionedDecoder<'a> {
    /// The inference path: soft expected salience, sharpened at
    /// `temperature`.
    pub fn new(
        params: &'a Parameters,
        input_ids: &[u32],
        temperature: f64,
    ) -> Result<Self, ModelError> {
        let enc = encode(params, input_ids)?;
        let predicted = predict_salience(params, &enc);
        let sharpened = predicted
            .sharpen(temperature)
            .expect("softmax rows are positive");
        let rows = salience_rows(
            &params.sal_emb,
            &enc.sentence_of_token,
            &SalienceInput::Soft(&sharpened),
            enc.marker_positions.len(),
        )?;
        Ok(ConditionedDecoder {
            params,
            enc_hidden: enc.hidden,
            key_addition: Some(rows),
        })
    }

    /// Teacher-salience path: fuse the given hard degrees.
    pub fn with_hard_levels(
        params: &'a Parameters,
        input_ids: &[u32],
        levels: &[usize],
    ) -> Result<Self, ModelError> {
        let enc = encode(params, input_ids)?;
        let rows = salience_rows(
            &params.sal_emb,
            &enc.sentence_of_token,
            &SalienceInput::Hard(levels),
            enc.marker_positions.len(),
        )?;
        Ok(ConditionedDecoder {
            params,
            enc_hidden: enc.hidden,
            key_addition: Some(rows),
        })
    }

    /// No salience fusion at all: plain cross-attention.
    pub fn vanilla(params: &'a Parameters, input_ids: &[u32]) -> Result<Self, ModelError> {
        let enc = encode(params, input_ids)?;
        Ok(ConditionedDecoder {
            params,
            enc_hidden: enc.hidden,
            key_addition: None,
        })
    }

    /// Decoder hidden states for a full prefix (testing hook).
    pub fn decoder_hidden(&self, prefix: &[u32]) -> Array2<f64> {
        let (tape, hidden) = self.run(prefix);
        tape.value(hidden).clone()
    }

    fn run(&self, prefix: &[u32]) -> (Tape, NodeId) {
        let mut tape = Tape::new();
        let nodes = register_params(&mut tape, self.params, false);
        let enc = tape.constant(self.enc_hidden.clone());
        let addition = self
            .key_addition
            .as_ref()
            .map(|rows| tape.constant(rows.clone()));
        let mut dec_input = vec![BOS_ID];
        dec_input.extend_from_slice(prefix);
        let hidden = build_decoder(&mut tape, &nodes, self.params, &dec_input, enc, addition);
        let logits = tied_logits(&mut tape, &nodes, hidden);
        (tape, logits)
    }
}

impl SeqModel for ConditionedDecoder<'_> {
    fn vocab_size(&self) -> usize {
        self.params.config.vocab_size
    }

    fn eos_id(&self) -> u32 {
        EOS_ID
    }

    fn next_log_probs(&self, prefix: &[u32]) -> Vec<f64> {
        let (tape, logits) = self.run(prefix);
        let values = tape.value(logits);
        let last: Vec<f64> = values.row(values.nrows() - 1).to_vec();
        log_softmax_row(&last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Parameters};
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn example_for(config: &ModelConfig, seed: u64) -> PreparedExample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sentences = rng.random_range(2..4usize);
        let mut input_ids = Vec::new();
        let mut marker_positions = Vec::new();
        let mut sentence_of_token = Vec::new();
        let mut oracle_levels = Vec::new();
        for s in 0..sentences {
            input_ids.push(MARKER_ID);
            marker_positions.push(input_ids.len() - 1);
            sentence_of_token.push(s);
            for _ in 0..rng.random_range(1..4usize) {
                input_ids.push(rng.random_range(5..config.vocab_size as u32));
                sentence_of_token.push(s);
            }
            oracle_levels.push(rng.random_range(0..config.degrees));
        }
        let mut target_ids = vec![BOS_ID];
        for _ in 0..rng.random_range(1..(config.max_tgt_len - 2).min(5)) {
            target_ids.push(rng.random_range(5..config.vocab_size as u32));
        }
        target_ids.push(EOS_ID);
        PreparedExample {
            id: format!("ex{seed}"),
            input_ids,
            target_ids,
            marker_positions,
            sentence_of_token,
            oracle_levels,
            oracle_scores: vec![0.0; sentences],
            unk_count: 0,
            lookup_count: 0,
        }
    }

    #[test]
    fn encode_shape_and_metadata() {
        let config = ModelConfig::tiny(1);
        let params = Parameters::init(&config).unwrap();
        let ex = example_for(&config, 2);
        let enc = encode(&params, &ex.input_ids).unwrap();
        assert_eq!(enc.hidden.dim(), (ex.input_ids.len(), config.d_model));
        assert_eq!(enc.marker_positions, ex.marker_positions);
        assert_eq!(enc.sentence_of_token, ex.sentence_of_token);
        assert!(enc.hidden.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn encode_rejects_bad_inputs() {
        let config = ModelConfig::tiny(1);
        let params = Parameters::init(&config).unwrap();
        assert!(matches!(
            encode(&params, &[5, 6, 7]),
            Err(ModelError::NoMarkers)
        ));
        let long = vec![MARKER_ID; config.max_src_len + 1];
        assert!(matches!(
            encode(&params, &long),
            Err(ModelError::InputTooLong { .. })
        ));
    }

    #[test]
    fn zero_layer_encoder_returns_embeddings() {
        let mut config = ModelConfig::tiny(3);
        config.enc_layers = 0;
        let params = Parameters::init(&config).unwrap();
        let ids = [MARKER_ID, 6, 7];
        let enc = encode(&params, &ids).unwrap();
        let pos = position_encoding(ids.len(), config.d_model);
        for (t, &id) in ids.iter().enumerate() {
            for d in 0..config.d_model {
                let expected = params.tok_emb[(id as usize, d)] + pos[(t, d)];
                assert!((enc.hidden[(t, d)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permuting_sentences_moves_markers_consistently() {
        let config = ModelConfig::tiny(4);
        let params = Parameters::init(&config).unwrap();
        // Sentences of length 2 and 3 (including markers).
        let forward = [MARKER_ID, 6, MARKER_ID, 7, 8];
        let swapped = [MARKER_ID, 7, 8, MARKER_ID, 6];
        let enc_f = encode(&params, &forward).unwrap();
        let enc_s = encode(&params, &swapped).unwrap();
        assert_eq!(enc_f.marker_positions, vec![0, 2]);
        assert_eq!(enc_s.marker_positions, vec![0, 3]);
        assert_eq!(enc_f.sentence_of_token, vec![0, 0, 1, 1, 1]);
        assert_eq!(enc_s.sentence_of_token, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn salience_rows_sum_to_one() {
        let config = ModelConfig::tiny(5);
        let params = Parameters::init(&config).unwrap();
        let ex = example_for(&config, 6);
        let enc = encode(&params, &ex.input_ids).unwrap();
        let dist = predict_salience(&params, &enc);
        assert_eq!(dist.probs.len(), ex.marker_positions.len());
        for row in &dist.probs {
            assert_eq!(row.len(), config.degrees);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_classifier_predicts_uniform() {
        let config = ModelConfig::tiny(7);
        let mut params = Parameters::init(&config).unwrap();
        params.cls_w.fill(0.0);
        params.cls_b.fill(0.0);
        let ex = example_for(&config, 8);
        let enc = encode(&params, &ex.input_ids).unwrap();
        let dist = predict_salience(&params, &enc);
        for row in &dist.probs {
            for &p in row {
                assert!((p - 1.0 / config.degrees as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn saturated_bias_predicts_one_hot() {
        let config = ModelConfig::tiny(9);
        let mut params = Parameters::init(&config).unwrap();
        params.cls_w.fill(0.0);
        params.cls_b.fill(0.0);
        params.cls_b[(0, 0)] = 50.0;
        let ex = example_for(&config, 10);
        let enc = encode(&params, &ex.input_ids).unwrap();
        let dist = predict_salience(&params, &enc);
        for row in &dist.probs {
            assert!(row[0] > 0.9999);
        }
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-0.5..0.5))
    }

    fn random_attention(rng: &mut ChaCha8Rng, d: usize) -> AttentionParams {
        AttentionParams {
            wq: random_matrix(rng, d, d),
            wk: random_matrix(rng, d, d),
            wv: random_matrix(rng, d, d),
            wo: random_matrix(rng, d, d),
            bq: random_matrix(rng, 1, d),
            bk: random_matrix(rng, 1, d),
            bv: random_matrix(rng, 1, d),
            bo: random_matrix(rng, 1, d),
        }
    }

    fn random_encoded(rng: &mut ChaCha8Rng, d: usize) -> EncodedDocument {
        let sentences = rng.random_range(1..4usize);
        let mut sentence_of_token = Vec::new();
        let mut marker_positions = Vec::new();
        for s in 0..sentences {
            marker_positions.push(sentence_of_token.len());
            for _ in 0..rng.random_range(1..4usize) {
                sentence_of_token.push(s);
            }
        }
        EncodedDocument {
            hidden: random_matrix(rng, sentence_of_token.len(), d),
            marker_positions,
            sentence_of_token,
        }
    }

    #[test]
    fn saca_with_zero_table_is_vanilla_cross_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let d = 8;
            let attn = random_attention(&mut rng, d);
            let enc = random_encoded(&mut rng, d);
            let queries = random_matrix(&mut rng, 3, d);
            let zero_table = Array2::zeros((4, d));
            let levels: Vec<usize> = (0..enc.marker_positions.len())
                .map(|_| rng.random_range(0..4usize))
                .collect();
            let fused = saca_attention(
                &attn,
                &zero_table,
                &queries,
                &enc,
                &SalienceInput::Hard(&levels),
                2,
            )
            .unwrap();
            let vanilla = cross_attention(&attn, &queries, &enc, 2).unwrap();
            let diff = (&fused.context - &vanilla.context)
                .iter()
                .map(|v| v.abs())
                .fold(0.0f64, f64::max);
            assert!(diff < 1e-9, "max deviation {diff}");
        }
    }

    #[test]
    fn hard_levels_equal_soft_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = 8;
        let attn = random_attention(&mut rng, d);
        let enc = random_encoded(&mut rng, d);
        let queries = random_matrix(&mut rng, 2, d);
        let table = random_matrix(&mut rng, 4, d);
        let levels: Vec<usize> = (0..enc.marker_positions.len())
            .map(|_| rng.random_range(0..4usize))
            .collect();
        let one_hot = SalienceDistribution {
            probs: levels
                .iter()
                .map(|&l| {
                    let mut row = vec![0.0; 4];
                    row[l] = 1.0;
                    row
                })
                .collect(),
        };
        let hard = saca_attention(&attn, &table, &queries, &enc, &SalienceInput::Hard(&levels), 2)
            .unwrap();
        let soft =
            saca_attention(&attn, &table, &queries, &enc, &SalienceInput::Soft(&one_hot), 2)
                .unwrap();
        let diff = (&hard.context - &soft.context)
            .iter()
            .map(|v| v.abs())
            .fold(0.0f64, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn attention_weights_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d = 8;
        let attn = random_attention(&mut rng, d);
        let enc = random_encoded(&mut rng, d);
        let queries = random_matrix(&mut rng, 4, d);
        let table = random_matrix(&mut rng, 4, d);
        let levels = vec![1usize; enc.marker_positions.len()];
        let out = saca_attention(&attn, &table, &queries, &enc, &SalienceInput::Hard(&levels), 2)
            .unwrap();
        assert_eq!(out.weights.len(), 2);
        for head in &out.weights {
            assert_eq!(head.dim(), (4, enc.hidden.nrows()));
            for r in 0..head.nrows() {
                let sum: f64 = head.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_source_token_gets_full_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let d = 8;
        let attn = random_attention(&mut rng, d);
        let enc = EncodedDocument {
            hidden: random_matrix(&mut rng, 1, d),
            marker_positions: vec![0],
            sentence_of_token: vec![0],
        };
        let queries = random_matrix(&mut rng, 3, d);
        let table = random_matrix(&mut rng, 4, d);
        let out = saca_attention(&attn, &table, &queries, &enc, &SalienceInput::Hard(&[2]), 2)
            .unwrap();
        for head in &out.weights {
            assert!(head.iter().all(|w| (w - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn lambda_zero_total_is_nll() {
        let mut config = ModelConfig::tiny(15);
        config.lambda_sal = 0.0;
        let params = Parameters::init(&config).unwrap();
        let ex = example_for(&config, 16);
        let loss = batch_loss(&params, &[&ex]).unwrap();
        assert_eq!(loss.total, loss.nll);
        assert!(loss.total >= 0.0);
    }

    #[test]
    fn zero_embedding_gives_uniform_nll() {
        let config = ModelConfig::tiny(17);
        let mut params = Parameters::init(&config).unwrap();
        // Tied output projection: zero token embeddings force uniform logits.
        params.tok_emb.fill(0.0);
        let ex = example_for(&config, 18);
        let loss = batch_loss(&params, &[&ex]).unwrap();
        assert!((loss.nll - (config.vocab_size as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn total_is_affine_in_lambda() {
        let config = ModelConfig::tiny(19);
        let params = Parameters::init(&config).unwrap();
        let ex = example_for(&config, 20);
        let at = |lambda: f64| {
            let mut p = params.clone();
            p.config.lambda_sal = lambda;
            batch_loss(&p, &[&ex]).unwrap()
        };
        let (l0, l1, l2) = (at(0.0), at(1.0), at(2.0));
        assert!((l1.total - (l0.total + l1.sal_ce)).abs() < 1e-12);
        assert!(((l2.total - l1.total) - (l1.total - l0.total)).abs() < 1e-9);
        assert_eq!(l0.nll, l1.nll);
        assert_eq!(l0.sal_ce, l2.sal_ce);
    }

    #[test]
    fn missing_oracle_levels_rejected() {
        let config = ModelConfig::tiny(21);
        let params = Parameters::init(&config).unwrap();
        let mut ex = example_for(&config, 22);
        ex.oracle_levels.pop();
        assert!(matches!(
            batch_loss(&params, &[&ex]),
            Err(ModelError::MissingOracleLevels { .. })
        ));
    }

    #[test]
    fn unused_salience_rows_get_zero_gradient() {
        let config = ModelConfig::tiny(23);
        let params = Parameters::init(&config).unwrap();
        let mut ex = example_for(&config, 24);
        // Pin every sentence to level 0: rows 1..K of the table are unused.
        for l in ex.oracle_levels.iter_mut() {
            *l = 0;
        }
        let (_, grads) = batch_loss_and_grads(&params, &[&ex]).unwrap();
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let sal_idx = names.iter().position(|n| n == "sal_emb").unwrap();
        let g = &grads[sal_idx];
        assert!(g.row(0).iter().any(|v| v.abs() > 0.0));
        for level in 1..config.degrees {
            assert!(g.row(level).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn gradient_linearity_in_lambda() {
        let config = ModelConfig::tiny(25);
        let params = Parameters::init(&config).unwrap();
        let ex = example_for(&config, 26);
        let grads_at = |lambda: f64| {
            let mut p = params.clone();
            p.config.lambda_sal = lambda;
            batch_loss_and_grads(&p, &[&ex]).unwrap().1
        };
        let g0 = grads_at(0.0);
        let g1 = grads_at(1.0);
        let g2 = grads_at(2.0);
        for ((a, b), c) in g0.iter().zip(&g1).zip(&g2) {
            // g2 - g1 == g1 - g0 element-wise (same salience gradient).
            let lhs = c - b;
            let rhs = b - a;
            let diff = (&lhs - &rhs).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
            assert!(diff < 1e-9);
        }
    }

    #[test]
    fn batch_loss_is_deterministic() {
        let config = ModelConfig::tiny(27);
        let params = Parameters::init(&config).unwrap();
        let ex = example_for(&config, 28);
        let a = batch_loss(&params, &[&ex]).unwrap();
        let b = batch_loss(&params, &[&ex]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let config = ModelConfig::tiny(29);
        let params = Parameters::init(&config).unwrap();
        let batch = [example_for(&config, 30), example_for(&config, 31)];
        let refs: Vec<&PreparedExample> = batch.iter().collect();
        let (_, grads) = batch_loss_and_grads(&params, &refs).unwrap();

        let eps = 1e-4;
        let named = params.named_tensors();
        let mut worst = 0.0f64;
        for (tensor_idx, (name, tensor)) in named.iter().enumerate() {
            for r in 0..tensor.nrows() {
                for c in 0..tensor.ncols() {
                    let mut plus = params.clone();
                    let mut minus = params.clone();
                    let mut which = 0usize;
                    plus.for_each_mut(&mut |_, t| {
                        if which == tensor_idx {
                            t[(r, c)] += eps;
                        }
                        which += 1;
                    });
                    which = 0;
                    minus.for_each_mut(&mut |_, t| {
                        if which == tensor_idx {
                            t[(r, c)] -= eps;
                        }
                        which += 1;
                    });
                    let lp = batch_loss(&plus, &refs).unwrap().total;
                    let lm = batch_loss(&minus, &refs).unwrap().total;
                    let numeric = (lp - lm) / (2.0 * eps);
                    let analytic = grads[tensor_idx][(r, c)];
                    let rel = (analytic - numeric).abs() / numeric.abs().max(1.0);
                    assert!(
                        rel < 1e-4,
                        "{name}[{r},{c}]: analytic {analytic} vs numeric {numeric}"
                    );
                    worst = worst.max(rel);
                }
            }
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn conditioned_decoder_paths_agree_on_zero_table() {
        let config = ModelConfig::tiny(33);
        let mut params = Parameters::init(&config).unwrap();
        params.sal_emb.fill(0.0);
        let ex = example_for(&config, 34);
        let soft = ConditionedDecoder::new(&params, &ex.input_ids, 0.5).unwrap();
        let vanilla = ConditionedDecoder::vanilla(&params, &ex.input_ids).unwrap();
        let prefix = [5u32, 6];
        let a = soft.next_log_probs(&prefix);
        let b = vanilla.next_log_probs(&prefix);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
