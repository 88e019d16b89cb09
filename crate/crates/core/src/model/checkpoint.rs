//! Versioned binary checkpoints: model config, every parameter tensor with
//! shape headers, and the vocabulary, so a saved model summarizes on its
//! own. Round-trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{ModelConfig, ModelError, Parameters};
use crate::data::Vocab;

const MAGIC: &[u8; 8] = b"SEASONK\x01";

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &Parameters,
    vocab: &Vocab,
) -> Result<(), ModelError> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    write_config(&mut out, &params.config);

    let tensors = params.named_tensors();
    write_u64(&mut out, tensors.len() as u64);
    for (name, tensor) in &tensors {
        write_str(&mut out, name);
        write_u64(&mut out, tensor.nrows() as u64);
        write_u64(&mut out, tensor.ncols() as u64);
        for v in tensor.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    let tokens = vocab.id_ordered_tokens();
    write_u64(&mut out, tokens.len() as u64);
    for tok in tokens {
        write_str(&mut out, tok);
    }

    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Parameters, Vocab), ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, at: 0 };

    let magic = r.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(ModelError::CheckpointFormat(
            "bad magic bytes (not a checkpoint, or an incompatible version)".into(),
        ));
    }
    let config = read_config(&mut r)?;
    config.validate()?;

    // Start from a zeroed skeleton with the right shapes, then fill by name.
    let mut params = Parameters::init(&config)?;
    params.for_each_mut(&mut |_, tensor| tensor.fill(0.0));
    let tensor_count = r.u64()? as usize;
    if tensor_count != params.tensor_count() {
        return Err(ModelError::CheckpointFormat(format!(
            "checkpoint has {tensor_count} tensors, config implies {}",
            params.tensor_count()
        )));
    }
    for _ in 0..tensor_count {
        let name = r.string()?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let mut tensor = Array2::zeros((rows, cols));
        for v in tensor.iter_mut() {
            *v = r.f64()?;
        }
        let mut placed = false;
        params.for_each_mut(&mut |n, t| {
            if n == name {
                if t.dim() != tensor.dim() {
                    // Shape mismatch surfaces below via `placed`.
                    return;
                }
                t.assign(&tensor);
                placed = true;
            }
        });
        if !placed {
            return Err(ModelError::CheckpointFormat(format!(
                "unknown or misshapen tensor {name:?}"
            )));
        }
    }

    let token_count = r.u64()? as usize;
    if token_count < 5 {
        return Err(ModelError::CheckpointFormat("vocabulary too small".into()));
    }
    let mut tokens = Vec::with_capacity(token_count);
    for _ in 0..token_count {
        tokens.push(r.string()?);
    }
    if tokens.len() > config.vocab_size {
        return Err(ModelError::CheckpointFormat(format!(
            "vocabulary of {} tokens exceeds configured vocab_size {}",
            tokens.len(),
            config.vocab_size
        )));
    }
    Ok((params, Vocab::from_id_order(tokens)))
}

fn write_config(out: &mut Vec<u8>, c: &ModelConfig) {
    for v in [
        c.d_model as u64,
        c.n_heads as u64,
        c.enc_layers as u64,
        c.dec_layers as u64,
        c.ffn_dim as u64,
        c.vocab_size as u64,
        c.degrees as u64,
        c.max_src_len as u64,
        c.max_tgt_len as u64,
        c.seed,
    ] {
        write_u64(out, v);
    }
    out.extend_from_slice(&c.lambda_sal.to_le_bytes());
}

fn read_config(r: &mut Reader) -> Result<ModelConfig, ModelError> {
    Ok(ModelConfig {
        d_model: r.u64()? as usize,
        n_heads: r.u64()? as usize,
        enc_layers: r.u64()? as usize,
        dec_layers: r.u64()? as usize,
        ffn_dim: r.u64()? as usize,
        vocab_size: r.u64()? as usize,
        degrees: r.u64()? as usize,
        max_src_len: r.u64()? as usize,
        max_tgt_len: r.u64()? as usize,
        seed: r.u64()?,
        lambda_sal: r.f64()?,
    })
}

fn write_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    write_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.at + n > self.bytes.len() {
            return Err(ModelError::CheckpointFormat("truncated checkpoint".into()));
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let len = self.u64()? as usize;
        if len > 1 << 20 {
            return Err(ModelError::CheckpointFormat("absurd string length".into()));
        }
        let b = self.take(len)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| ModelError::CheckpointFormat("non-UTF-8 string".into()))
    }
}
