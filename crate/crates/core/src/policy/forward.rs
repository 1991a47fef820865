//! Differentiable forward pass over a batch of action sequences.
//!
//! Sequences are stacked without padding; attention is computed per
//! sequence and per head on row/column slices of the stacked projections.

use ampforge_numerics::{Binding, Graph, Var};

use super::{PolicyModel, Projection, TokenBatch, NUM_ACTIONS};
use crate::seq::Peptide;
use crate::Result;

/// Graph handles produced by [`PolicyModel::forward_graph`].
pub struct GraphForward {
    /// `[tokens, NUM_ACTIONS]` logits, rows in batch order.
    pub logits: Var,
    /// `[tokens, 1]` value predictions.
    pub values: Var,
    /// Row offset of each sequence.
    pub offsets: Vec<usize>,
}

impl PolicyModel {
    fn var(&self, b: &Binding, name: &str) -> Var {
        b.var(self.params.index_of(name).unwrap_or_else(|| panic!("parameter {name} exists")))
    }

    fn linear(&self, g: &mut Graph, b: &Binding, x: Var, prefix: &str, proj: Option<Projection>) -> Result<Var> {
        let w = self.var(b, &format!("{prefix}.weight"));
        let mut y = g.matmul(x, w)?;
        if let Some(i) = self.params.index_of(&format!("{prefix}.bias")) {
            y = g.add_row(y, b.var(i))?;
        }
        if let (Some(lora), Some(p)) = (&self.lora, proj) {
            if lora.has(p) {
                let a = self.var(b, &format!("{prefix}.lora_a"));
                let bb = self.var(b, &format!("{prefix}.lora_b"));
                let t = g.matmul(x, a)?;
                let t = g.matmul(t, bb)?;
                let t = g.scale(t, lora.scale())?;
                y = g.add(y, t)?;
            }
        }
        Ok(y)
    }

    fn norm(&self, g: &mut Graph, b: &Binding, x: Var, prefix: &str) -> Result<Var> {
        let gain = self.var(b, &format!("{prefix}.gain"));
        let bias = self.var(b, &format!("{prefix}.bias"));
        Ok(g.layer_norm(x, gain, bias)?)
    }

    /// Builds logits and values for every action position of `batch`.
    /// `binding` must come from `self.params().bind(g)`.
    pub fn forward_graph(&self, g: &mut Graph, binding: &Binding, batch: &TokenBatch) -> Result<GraphForward> {
        let cfg = &self.config;
        let mut ids = Vec::with_capacity(batch.num_tokens());
        let mut positions = Vec::with_capacity(batch.num_tokens());
        let mut offsets = Vec::with_capacity(batch.len());
        for s in batch.sequences() {
            offsets.push(ids.len());
            ids.extend(TokenBatch::inputs(s));
            positions.extend(0..s.len());
        }
        let tok = g.gather(self.var(binding, "tok_emb"), &ids)?;
        let pos = g.gather(self.var(binding, "pos_emb"), &positions)?;
        let mut x = g.add(tok, pos)?;
        let dh = cfg.head_dim();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        for l in 0..cfg.layers {
            let h = self.norm(g, binding, x, &format!("layers.{l}.ln1"))?;
            let q = self.linear(g, binding, h, &Projection::Q.prefix(l), Some(Projection::Q))?;
            let k = self.linear(g, binding, h, &Projection::K.prefix(l), Some(Projection::K))?;
            let v = self.linear(g, binding, h, &Projection::V.prefix(l), Some(Projection::V))?;
            let mut per_seq = Vec::with_capacity(batch.len());
            for (s, &off) in batch.sequences().iter().zip(&offsets) {
                let len = s.len();
                let mut heads = Vec::with_capacity(cfg.heads);
                for hd in 0..cfg.heads {
                    let qs = g.slice(q, off, len, hd * dh, dh)?;
                    let ks = g.slice(k, off, len, hd * dh, dh)?;
                    let vs = g.slice(v, off, len, hd * dh, dh)?;
                    let kt = g.transpose(ks)?;
                    let scores = g.matmul(qs, kt)?;
                    let scores = g.scale(scores, inv_sqrt)?;
                    let scores = g.causal_mask(scores)?;
                    let attn = g.softmax(scores)?;
                    heads.push(g.matmul(attn, vs)?);
                }
                per_seq.push(if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? });
            }
            let att = if per_seq.len() == 1 { per_seq[0] } else { g.concat_rows(&per_seq)? };
            let o = self.linear(g, binding, att, &Projection::O.prefix(l), Some(Projection::O))?;
            x = g.add(x, o)?;
            let h2 = self.norm(g, binding, x, &format!("layers.{l}.ln2"))?;
            let f = self.linear(g, binding, h2, &Projection::Ff1.prefix(l), Some(Projection::Ff1))?;
            let f = g.gelu(f)?;
            let f = self.linear(g, binding, f, &Projection::Ff2.prefix(l), Some(Projection::Ff2))?;
            x = g.add(x, f)?;
        }
        let fin = self.norm(g, binding, x, "ln_f")?;
        let logits = self.linear(g, binding, fin, "head", None)?;
        let values = self.linear(g, binding, fin, "value", None)?;
        Ok(GraphForward {
            logits,
            values,
            offsets,
        })
    }
}

/// Summed next-token negative log-likelihood with gradients for every
/// trainable parameter (store order, `None` for frozen ones).
pub struct SftLoss {
    pub sum: f64,
    pub tokens: usize,
    pub grads: Vec<Option<ampforge_numerics::Tensor>>,
}

impl SftLoss {
    pub fn per_token(&self) -> f64 {
        self.sum / self.tokens as f64
    }
}

fn targets(batch: &TokenBatch) -> Vec<usize> {
    batch.sequences().iter().flatten().copied().collect()
}

/// L = −Σᵢ Σₜ log P(x_{i,t} | x_{i,<t}) over all action positions.
pub fn sft_loss(model: &PolicyModel, batch: &TokenBatch) -> Result<SftLoss> {
    let mut g = Graph::new();
    let binding = model.params.bind(&mut g);
    let out = model.forward_graph(&mut g, &binding, batch)?;
    let logp = g.log_softmax(out.logits)?;
    let picked = g.pick(logp, &targets(batch))?;
    let total = g.sum(picked)?;
    let loss = g.scale(total, -1.0)?;
    let mut grads = g.backward(loss)?;
    Ok(SftLoss {
        sum: g.value(loss).item(),
        tokens: batch.num_tokens(),
        grads: model.params.collect_grads(&binding, &mut grads),
    })
}

/// Per-action log-probabilities for each sequence, evaluated on the graph
/// (no gradients are taken).
pub fn action_log_probs(model: &PolicyModel, batch: &TokenBatch) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let binding = model.params.bind(&mut g);
    let out = model.forward_graph(&mut g, &binding, batch)?;
    let logp = g.log_softmax(out.logits)?;
    let picked = g.pick(logp, &targets(batch))?;
    let flat = g.value(picked).data();
    let mut res = Vec::with_capacity(batch.len());
    for (s, &off) in batch.sequences().iter().zip(&out.offsets) {
        res.push(flat[off..off + s.len()].to_vec());
    }
    debug_assert_eq!(g.value(out.logits).cols(), NUM_ACTIONS);
    Ok(res)
}

/// Per-token log-probabilities of a peptide, including the closing EOS.
pub fn log_probs(model: &PolicyModel, p: &Peptide) -> Result<Vec<f64>> {
    let batch = TokenBatch::from_peptides(std::slice::from_ref(p), model.max_len())?;
    Ok(action_log_probs(model, &batch)?.remove(0))
}

const EVAL_CHUNK: usize = 64;

/// exp(mean per-token negative log-likelihood) over `peptides`.
pub fn perplexity(model: &PolicyModel, peptides: &[Peptide]) -> Result<f64> {
    if peptides.is_empty() {
        return Err(crate::Error::EmptyInput("perplexity dataset".into()));
    }
    let (mut nll, mut tokens) = (0.0, 0usize);
    for chunk in peptides.chunks(EVAL_CHUNK) {
        let batch = TokenBatch::from_peptides(chunk, model.max_len())?;
        for lp in action_log_probs(model, &batch)? {
            tokens += lp.len();
            nll -= lp.iter().sum::<f64>();
        }
    }
    Ok((nll / tokens as f64).exp())
}
