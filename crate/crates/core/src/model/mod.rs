//! A small encoder-decoder transformer with a per-sentence salience
//! classifier over the encoder and salience-aware cross-attention in the
//! decoder.
//!
//! All math is `f64` and every gradient comes from the reverse-mode tape in
//! [`tape`], which keeps the finite-difference checks tight. Training feeds
//! the hard oracle salience levels into the cross-attention keys; inference
//! feeds the temperature-sharpened soft prediction.

mod checkpoint;
pub mod tape;
mod train;
mod transformer;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{train, EpochStats, TrainConfig};
pub use transformer::{
    batch_loss, batch_loss_and_grads, cross_attention, encode, predict_salience, saca_attention,
    AttentionOutput, ConditionedDecoder, LossParts, SalienceInput,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input of {len} tokens exceeds max_src_len {max}")]
    InputTooLong { len: usize, max: usize },
    #[error("input contains no sentence-marker tokens")]
    NoMarkers,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("example provides {got} oracle levels for {expected} sentences")]
    MissingOracleLevels { expected: usize, got: usize },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Hyperparameters of the toy summarization transformer.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    /// Number of salience degrees (K).
    pub degrees: usize,
    /// Weight of the salience-classification term in the multi-task loss.
    pub lambda_sal: f64,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 2,
            enc_layers: 2,
            dec_layers: 2,
            ffn_dim: 128,
            vocab_size: 8000,
            degrees: 4,
            lambda_sal: 0.5,
            max_src_len: 512,
            max_tgt_len: 100,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A deliberately small setup for gradient checks and unit tests.
    pub fn tiny(seed: u64) -> Self {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            ffn_dim: 16,
            vocab_size: 12,
            degrees: 4,
            lambda_sal: 0.5,
            max_src_len: 32,
            max_tgt_len: 16,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_heads == 0 || self.ffn_dim == 0 || self.degrees == 0 {
            return Err(ModelError::BadConfig("dimensions must be >= 1".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size < 5 {
            return Err(ModelError::BadConfig(
                "vocab_size must be >= 5 to hold the reserved tokens".into(),
            ));
        }
        if self.lambda_sal < 0.0 {
            return Err(ModelError::BadConfig("lambda_sal must be >= 0".into()));
        }
        if self.max_src_len == 0 || self.max_tgt_len == 0 {
            return Err(ModelError::BadConfig("length limits must be >= 1".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bq: Array2<f64>,
    pub bk: Array2<f64>,
    pub bv: Array2<f64>,
    pub bo: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Array2<f64>,
    pub bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub attn: AttentionParams,
    pub ln_attn: LayerNormParams,
    pub ffn: FfnParams,
    pub ln_ffn: LayerNormParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayerParams {
    pub self_attn: AttentionParams,
    pub ln_self: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln_cross: LayerNormParams,
    pub ffn: FfnParams,
    pub ln_ffn: LayerNormParams,
}

/// Every trainable tensor of the model. The output projection is tied to
/// `tok_emb`; sinusoidal position encodings are constants and live outside.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    /// Token embeddings, `vocab_size × d_model`.
    pub tok_emb: Array2<f64>,
    /// Salience-degree embedding table, `degrees × d_model`.
    pub sal_emb: Array2<f64>,
    /// Salience classifier, `d_model × degrees` plus `1 × degrees` bias.
    pub cls_w: Array2<f64>,
    pub cls_b: Array2<f64>,
    pub encoder: Vec<EncoderLayerParams>,
    pub decoder: Vec<DecoderLayerParams>,
}

impl Parameters {
    /// Deterministic initialization from `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            d: config.d_model,
            f: config.ffn_dim,
        };
        let tok_emb = init.uniform(config.vocab_size, config.d_model, 0.1);
        let sal_emb = init.uniform(config.degrees, config.d_model, 0.1);
        let cls_w = init.xavier(config.d_model, config.degrees);
        let cls_b = Array2::zeros((1, config.degrees));
        let encoder = (0..config.enc_layers)
            .map(|_| EncoderLayerParams {
                attn: init.attn(),
                ln_attn: init.layer_norm(),
                ffn: init.ffn(),
                ln_ffn: init.layer_norm(),
            })
            .collect();
        let decoder = (0..config.dec_layers)
            .map(|_| DecoderLayerParams {
                self_attn: init.attn(),
                ln_self: init.layer_norm(),
                cross_attn: init.attn(),
                ln_cross: init.layer_norm(),
                ffn: init.ffn(),
                ln_ffn: init.layer_norm(),
            })
            .collect();

        Ok(Parameters {
            config: config.clone(),
            tok_emb,
            sal_emb,
            cls_w,
            cls_b,
            encoder,
            decoder,
        })
    }

    /// Visits every tensor with a stable name, in a canonical order shared
    /// by gradient extraction, the optimizer and the checkpoint format.
    pub fn for_each(&self, f: &mut dyn FnMut(String, &Array2<f64>)) {
        f("tok_emb".into(), &self.tok_emb);
        f("sal_emb".into(), &self.sal_emb);
        f("cls_w".into(), &self.cls_w);
        f("cls_b".into(), &self.cls_b);
        for (i, layer) in self.encoder.iter().enumerate() {
            let p = format!("enc{i}");
            visit_attn(&format!("{p}.attn"), &layer.attn, f);
            visit_ln(&format!("{p}.ln_attn"), &layer.ln_attn, f);
            visit_ffn(&format!("{p}.ffn"), &layer.ffn, f);
            visit_ln(&format!("{p}.ln_ffn"), &layer.ln_ffn, f);
        }
        for (i, layer) in self.decoder.iter().enumerate() {
            let p = format!("dec{i}");
            visit_attn(&format!("{p}.self"), &layer.self_attn, f);
            visit_ln(&format!("{p}.ln_self"), &layer.ln_self, f);
            visit_attn(&format!("{p}.cross"), &layer.cross_attn, f);
            visit_ln(&format!("{p}.ln_cross"), &layer.ln_cross, f);
            visit_ffn(&format!("{p}.ffn"), &layer.ffn, f);
            visit_ln(&format!("{p}.ln_ffn"), &layer.ln_ffn, f);
        }
    }

    /// Mutable twin of [`Parameters::for_each`], same order.
    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
        f("tok_emb".into(), &mut self.tok_emb);
        f("sal_emb".into(), &mut self.sal_emb);
        f("cls_w".into(), &mut self.cls_w);
        f("cls_b".into(), &mut self.cls_b);
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            let p = format!("enc{i}");
            visit_attn_mut(&format!("{p}.attn"), &mut layer.attn, f);
            visit_ln_mut(&format!("{p}.ln_attn"), &mut layer.ln_attn, f);
            visit_ffn_mut(&format!("{p}.ffn"), &mut layer.ffn, f);
            visit_ln_mut(&format!("{p}.ln_ffn"), &mut layer.ln_ffn, f);
        }
        for (i, layer) in self.decoder.iter_mut().enumerate() {
            let p = format!("dec{i}");
            visit_attn_mut(&format!("{p}.self"), &mut layer.self_attn, f);
            visit_ln_mut(&format!("{p}.ln_self"), &mut layer.ln_self, f);
            visit_attn_mut(&format!("{p}.cross"), &mut layer.cross_attn, f);
            visit_ln_mut(&format!("{p}.ln_cross"), &mut layer.ln_cross, f);
            visit_ffn_mut(&format!("{p}.ffn"), &mut layer.ffn, f);
            visit_ln_mut(&format!("{p}.ln_ffn"), &mut layer.ln_ffn, f);
        }
    }

    /// Named tensors in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, Array2<f64>)> {
        let mut out = Vec::new();
        self.for_each(&mut |name, tensor| out.push((name, tensor.clone())));
        out
    }

    pub fn tensor_count(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, _| n += 1);
        n
    }

    pub fn scalar_count(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, t| n += t.len());
        n
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(&mut |_, t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Seeded weight initializer; draw order is part of the determinism
/// contract, so new tensors must be appended, never reordered.
struct Init {
    rng: ChaCha8Rng,
    d: usize,
    f: usize,
}

impl Init {
    fn uniform(&mut self, rows: usize, cols: usize, limit: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| self.rng.random_range(-limit..limit))
    }

    fn xavier(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        self.uniform(rows, cols, limit)
    }

    fn attn(&mut self) -> AttentionParams {
        let d = self.d;
        AttentionParams {
            wq: self.xavier(d, d),
            wk: self.xavier(d, d),
            wv: self.xavier(d, d),
            wo: self.xavier(d, d),
            bq: Array2::zeros((1, d)),
            bk: Array2::zeros((1, d)),
            bv: Array2::zeros((1, d)),
            bo: Array2::zeros((1, d)),
        }
    }

    fn layer_norm(&mut self) -> LayerNormParams {
        LayerNormParams {
            gain: Array2::ones((1, self.d)),
            bias: Array2::zeros((1, self.d)),
        }
    }

    fn ffn(&mut self) -> FfnParams {
        FfnParams {
            w1: self.xavier(self.d, self.f),
            b1: Array2::zeros((1, self.f)),
            w2: self.xavier(self.f, self.d),
            b2: Array2::zeros((1, self.d)),
        }
    }
}

fn visit_attn(prefix: &str, a: &AttentionParams, f: &mut dyn FnMut(String, &Array2<f64>)) {
    f(format!("{prefix}.wq"), &a.wq);
    f(format!("{prefix}.wk"), &a.wk);
    f(format!("{prefix}.wv"), &a.wv);
    f(format!("{prefix}.wo"), &a.wo);
    f(format!("{prefix}.bq"), &a.bq);
    f(format!("{prefix}.bk"), &a.bk);
    f(format!("{prefix}.bv"), &a.bv);
    f(format!("{prefix}.bo"), &a.bo);
}

fn visit_attn_mut(prefix: &str, a: &mut AttentionParams, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
    f(format!("{prefix}.wq"), &mut a.wq);
    f(format!("{prefix}.wk"), &mut a.wk);
    f(format!("{prefix}.wv"), &mut a.wv);
    f(format!("{prefix}.wo"), &mut a.wo);
    f(format!("{prefix}.bq"), &mut a.bq);
    f(format!("{prefix}.bk"), &mut a.bk);
    f(format!("{prefix}.bv"), &mut a.bv);
    f(format!("{prefix}.bo"), &mut a.bo);
}

fn visit_ln(prefix: &str, l: &LayerNormParams, f: &mut dyn FnMut(String, &Array2<f64>)) {
    f(format!("{prefix}.gain"), &l.gain);
    f(format!("{prefix}.bias"), &l.bias);
}

fn visit_ln_mut(prefix: &str, l: &mut LayerNormParams, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
    f(format!("{prefix}.gain"), &mut l.gain);
    f(format!("{prefix}.bias"), &mut l.bias);
}

fn visit_ffn(prefix: &str, p: &FfnParams, f: &mut dyn FnMut(String, &Array2<f64>)) {
    f(format!("{prefix}.w1"), &p.w1);
    f(format!("{prefix}.b1"), &p.b1);
    f(format!("{prefix}.w2"), &p.w2);
    f(format!("{prefix}.b2"), &p.b2);
}

fn visit_ffn_mut(prefix: &str, p: &mut FfnParams, f: &mut dyn FnMut(String, &mut Array2<f64>)) {
    f(format!("{prefix}.w1"), &mut p.w1);
    f(format!("{prefix}.b1"), &mut p.b1);
    f(format!("{prefix}.w2"), &mut p.w2);
    f(format!("{prefix}.b2"), &mut p.b2);
}

/// Encoder output for one document: final hidden states plus the sentence
/// bookkeeping the salience classifier and cross-attention rely on.
#[derive(Debug, Clone)]
pub struct EncodedDocument {
    /// `src_len × d_model` hidden states.
    pub hidden: Array2<f64>,
    /// Positions of the sentence-marker tokens, strictly ascending.
    pub marker_positions: Vec<usize>,
    /// Sentence index of every source token, non-decreasing.
    pub sentence_of_token: Vec<usize>,
}

impl EncodedDocument {
    pub fn sentence_count(&self) -> usize {
        self.marker_positions.len()
    }
}

/// Sinusoidal position table, `len × d_model`. Constant, never trained.
pub fn position_encoding(len: usize, d_model: usize) -> Array2<f64> {
    let mut table = Array2::zeros((len, d_model));
    for pos in 0..len {
        for i in 0..d_model {
            let exponent = (2 * (i / 2)) as f64 / d_model as f64;
            let rate = pos as f64 / 10_000f64.powf(exponent);
            table[(pos, i)] = if i % 2 == 0 { rate.sin() } else { rate.cos() };
        }
    }
    table
}
