//! Supervised next-token training with validation-perplexity early stopping.

use ampforge_numerics::{clip_grad_norm, AdamConfig, AdamState};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{perplexity, sft_loss, PolicyModel, TokenBatch};
use crate::rng::substream;
use crate::seq::Peptide;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub adam: AdamConfig,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            max_epochs: 30,
            batch_size: 16,
            patience: 3,
            grad_clip: 1.0,
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftReport {
    /// Mean per-token training loss of each epoch.
    pub train_loss: Vec<f64>,
    pub val_perplexity: Vec<f64>,
    /// Zero-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_perplexity: f64,
}

/// Trains `model` in place and leaves it at the best-validation epoch.
pub fn train_sft(
    model: &mut PolicyModel,
    train: &[Peptide],
    val: &[Peptide],
    cfg: &SftConfig,
    seed: u64,
) -> Result<SftReport> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyInput("training and validation sets must be non-empty".into()));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(Error::Config("batch_size and max_epochs must be positive".into()));
    }
    // Fail early on sequences the model cannot hold.
    TokenBatch::from_peptides(train, model.max_len())?;
    TokenBatch::from_peptides(val, model.max_len())?;

    let mut rng = substream(seed, "sft_shuffle");
    let mut adam = AdamState::new(cfg.adam, model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = SftReport {
        train_loss: Vec::new(),
        val_perplexity: Vec::new(),
        best_epoch: 0,
        best_val_perplexity: f64::INFINITY,
    };
    let mut best = model.clone();
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let peps: Vec<Peptide> = chunk.iter().map(|&i| train[i].clone()).collect();
            let batch = TokenBatch::from_peptides(&peps, model.max_len())?;
            let mut loss = sft_loss(model, &batch)?;
            loss_sum += loss.sum;
            tokens += loss.tokens;
            if cfg.grad_clip > 0.0 {
                clip_grad_norm(&mut loss.grads, cfg.grad_clip);
            }
            adam.step(model.params_mut(), &loss.grads)?;
        }
        let ppl = perplexity(model, val)?;
        report.train_loss.push(loss_sum / tokens as f64);
        report.val_perplexity.push(ppl);
        log::info!("sft epoch {epoch}: train loss {:.4}, val perplexity {ppl:.4}", loss_sum / tokens as f64);
        if ppl < report.best_val_perplexity {
            report.best_val_perplexity = ppl;
            report.best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
    }
    *model = best;
    Ok(report)
}
