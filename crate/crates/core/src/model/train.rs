//! Multi-task training: Adam over the exact tape gradients, deterministic
//! shuffling, per-epoch loss logging, and an abort on non-finite loss.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::transformer::batch_loss_and_grads;
use super::{ModelError, Parameters};
use crate::data::PreparedExample;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 8,
        }
    }
}

/// Losses observed over one epoch (running means over the shuffled stream).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub nll: f64,
    pub sal_ce: f64,
    pub total: f64,
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(params: &Parameters) -> Self {
        let shapes: Vec<Array2<f64>> = params
            .named_tensors()
            .into_iter()
            .map(|(_, t)| Array2::zeros(t.dim()))
            .collect();
        Adam {
            m: shapes.clone(),
            v: shapes,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn update(&mut self, params: &mut Parameters, grads: &[Array2<f64>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut idx = 0;
        params.for_each_mut(&mut |_, tensor| {
            let g = &grads[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for ((t, m), (v, g)) in tensor
                .iter_mut()
                .zip(m.iter_mut())
                .zip(v.iter_mut().zip(g.iter()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *t -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            idx += 1;
        });
    }
}

/// Trains in place. Deterministic given `(params.config.seed, corpus,
/// config)`: the shuffle stream is seeded and batches are visited in order.
pub fn train(
    params: &mut Parameters,
    corpus: &[PreparedExample],
    config: &TrainConfig,
) -> Result<Vec<EpochStats>, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if config.epochs == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.config.seed.wrapping_add(0x5eed));
    let mut optimizer = Adam::new(params);
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut rng);

        let mut tok_ce_sum = 0.0;
        let mut tok_count = 0usize;
        let mut sal_ce_sum = 0.0;
        let mut sal_count = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&PreparedExample> = chunk.iter().map(|&i| &corpus[i]).collect();
            let (loss, grads) = batch_loss_and_grads(params, &batch)?;
            if !loss.total.is_finite() {
                return Err(ModelError::NonFiniteLoss(format!(
                    "epoch {epoch}: nll={}, sal_ce={}",
                    loss.nll, loss.sal_ce
                )));
            }
            let batch_tokens: usize = batch.iter().map(|ex| ex.target_ids.len() - 1).sum();
            let batch_sents: usize = batch.iter().map(|ex| ex.oracle_levels.len()).sum();
            tok_ce_sum += loss.nll * batch_tokens as f64;
            tok_count += batch_tokens;
            sal_ce_sum += loss.sal_ce * batch_sents as f64;
            sal_count += batch_sents;
            optimizer.update(params, &grads, config.learning_rate);
        }
        if !params.all_finite() {
            return Err(ModelError::NonFiniteLoss(format!(
                "epoch {epoch}: parameters diverged"
            )));
        }
        let nll = tok_ce_sum / tok_count.max(1) as f64;
        let sal_ce = sal_ce_sum / sal_count.max(1) as f64;
        log.push(EpochStats {
            epoch,
            nll,
            sal_ce,
            total: nll + params.config.lambda_sal * sal_ce,
        });
    }
    Ok(log)
}
