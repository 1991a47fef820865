//! Graph-free incremental decoding with a key/value cache.
//!
//! Adapter deltas are merged into the base weights once; the arithmetic
//! otherwise mirrors the graph forward pass, so log-probabilities agree with
//! [`super::action_log_probs`] to rounding.

use ampforge_numerics::kernels::{gelu, layer_norm_row, log_softmax_in_place, softmax_in_place};
use ampforge_numerics::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PolicyModel, Projection, BOS, EOS, NUM_ACTIONS};
use crate::{Error, Result};

struct Linear {
    w: Vec<f64>,
    b: Vec<f64>,
    d_in: usize,
    d_out: usize,
}

impl Linear {
    fn new(w: Tensor, b: Option<&Tensor>) -> Self {
        let (d_in, d_out) = (w.rows(), w.cols());
        Self {
            b: b.map_or_else(|| vec![0.0; d_out], |b| b.data().to_vec()),
            w: w.into_data(),
            d_in,
            d_out,
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.d_out, 0.0);
        for (i, &xi) in x.iter().enumerate().take(self.d_in) {
            let row = &self.w[i * self.d_out..(i + 1) * self.d_out];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        for (o, &b) in out.iter_mut().zip(&self.b) {
            *o += b;
        }
    }
}

struct Norm {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

impl Norm {
    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.resize(x.len(), 0.0);
        layer_norm_row(x, &self.gain, &self.bias, out);
    }
}

struct Layer {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
}

/// Read-only snapshot of a policy for sampling and scoring.
pub struct InferenceModel {
    dim: usize,
    heads: usize,
    max_len: usize,
    tok_emb: Tensor,
    pos_emb: Tensor,
    layers: Vec<Layer>,
    ln_f: Norm,
    head: Linear,
    value: Linear,
}

/// Cached keys and values, one `[position, dim]` buffer per layer.
pub struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl InferenceModel {
    pub fn new(model: &PolicyModel) -> Result<Self> {
        let cfg = model.config();
        let t = |name: &str| model.tensor(name);
        let norm = |prefix: &str| -> Result<Norm> {
            Ok(Norm {
                gain: t(&format!("{prefix}.gain"))?.data().to_vec(),
                bias: t(&format!("{prefix}.bias"))?.data().to_vec(),
            })
        };
        let proj = |p: Projection, l: usize| -> Result<Linear> {
            Ok(Linear::new(
                model.effective_weight(p, l)?,
                t(&format!("{}.bias", p.prefix(l))).ok(),
            ))
        };
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            layers.push(Layer {
                ln1: norm(&format!("layers.{l}.ln1"))?,
                q: proj(Projection::Q, l)?,
                k: proj(Projection::K, l)?,
                v: proj(Projection::V, l)?,
                o: proj(Projection::O, l)?,
                ln2: norm(&format!("layers.{l}.ln2"))?,
                ff1: proj(Projection::Ff1, l)?,
                ff2: proj(Projection::Ff2, l)?,
            });
        }
        Ok(Self {
            dim: cfg.dim,
            heads: cfg.heads,
            max_len: cfg.max_len,
            tok_emb: t("tok_emb")?.clone(),
            pos_emb: t("pos_emb")?.clone(),
            layers,
            ln_f: norm("ln_f")?,
            head: Linear::new(t("head.weight")?.clone(), Some(t("head.bias")?)),
            value: Linear::new(t("value.weight")?.clone(), Some(t("value.bias")?)),
        })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache {
            keys: vec![Vec::new(); self.layers.len()],
            values: vec![Vec::new(); self.layers.len()],
            len: 0,
        }
    }

    /// Feeds one input token and returns (logits over actions, value).
    pub fn step(&self, cache: &mut KvCache, token: usize) -> Result<(Vec<f64>, f64)> {
        let pos = cache.len;
        if pos >= self.pos_emb.rows() {
            return Err(Error::Config(format!("position {pos} exceeds the model context")));
        }
        let d = self.dim;
        let dh = d / self.heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut x: Vec<f64> = self
            .tok_emb
            .row(token)
            .iter()
            .zip(self.pos_emb.row(pos))
            .map(|(a, b)| a + b)
            .collect();
        let (mut h, mut q, mut k, mut v, mut tmp, mut tmp2) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let n = pos + 1;
        let mut scores = vec![0.0; n];
        let mut att = vec![0.0; d];
        for (layer, (kc, vc)) in self
            .layers
            .iter()
            .zip(cache.keys.iter_mut().zip(cache.values.iter_mut()))
        {
            layer.ln1.apply(&x, &mut h);
            layer.q.apply(&h, &mut q);
            layer.k.apply(&h, &mut k);
            layer.v.apply(&h, &mut v);
            kc.extend_from_slice(&k);
            vc.extend_from_slice(&v);
            for hd in 0..self.heads {
                let c0 = hd * dh;
                for (j, s) in scores.iter_mut().enumerate() {
                    let kr = &kc[j * d + c0..j * d + c0 + dh];
                    let dot: f64 = q[c0..c0 + dh].iter().zip(kr).map(|(a, b)| a * b).sum();
                    *s = dot * inv_sqrt;
                }
                softmax_in_place(&mut scores);
                let out = &mut att[c0..c0 + dh];
                out.iter_mut().for_each(|o| *o = 0.0);
                for (j, &a) in scores.iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&vc[j * d + c0..j * d + c0 + dh]) {
                        *o += a * vv;
                    }
                }
            }
            layer.o.apply(&att, &mut tmp);
            x.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
            layer.ln2.apply(&x, &mut h);
            layer.ff1.apply(&h, &mut tmp);
            tmp.iter_mut().for_each(|a| *a = gelu(*a));
            layer.ff2.apply(&tmp, &mut tmp2);
            x.iter_mut().zip(&tmp2).for_each(|(a, b)| *a += b);
        }
        cache.len += 1;
        self.ln_f.apply(&x, &mut h);
        let mut logits = Vec::new();
        self.head.apply(&h, &mut logits);
        self.value.apply(&h, &mut tmp);
        Ok((logits, tmp[0]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub temperature: f64,
    /// Keep only the k most likely actions; 0 disables the filter.
    pub top_k: usize,
    /// Argmax decoding; temperature and top-k are ignored.
    pub greedy: bool,
    /// Residue cap; `None` uses the model's maximum.
    pub max_len: Option<usize>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 0,
            greedy: false,
            max_len: None,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.greedy && !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("temperature must be positive unless greedy".into()));
        }
        if self.max_len == Some(0) {
            return Err(Error::Config("max_len must be positive".into()));
        }
        Ok(())
    }
}

/// One generated trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledSequence {
    /// Actions including the final EOS when one was sampled.
    pub actions: Vec<usize>,
    /// Log-probability of each action under the untempered model.
    pub log_probs: Vec<f64>,
    /// Value-head prediction at each decision point.
    pub values: Vec<f64>,
    /// Entropy of the untempered action distribution at each step.
    pub entropies: Vec<f64>,
}

impl SampledSequence {
    /// Residue actions only (EOS dropped).
    pub fn residues(&self) -> &[usize] {
        match self.actions.last() {
            Some(&EOS) => &self.actions[..self.actions.len() - 1],
            _ => &self.actions,
        }
    }

    pub fn ended_with_eos(&self) -> bool {
        self.actions.last() == Some(&EOS)
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_nonzero
}

impl InferenceModel {
    /// Generates one sequence; stops at EOS or at the residue cap.
    pub fn sample_one<R: Rng + ?Sized>(&self, cfg: &SamplingConfig, rng: &mut R) -> Result<SampledSequence> {
        let cap = cfg.max_len.unwrap_or(self.max_len).min(self.max_len);
        let mut cache = self.new_cache();
        let mut out = SampledSequence {
            actions: Vec::new(),
            log_probs: Vec::new(),
            values: Vec::new(),
            entropies: Vec::new(),
        };
        let mut token = BOS;
        while out.actions.len() < cap {
            let (logits, value) = self.step(&mut cache, token)?;
            let mut logp = logits.clone();
            log_softmax_in_place(&mut logp);
            let action = if cfg.greedy {
                argmax(&logits)
            } else {
                let mut scaled: Vec<f64> = logits.iter().map(|l| l / cfg.temperature).collect();
                if cfg.top_k > 0 && cfg.top_k < NUM_ACTIONS {
                    let mut order: Vec<usize> = (0..NUM_ACTIONS).collect();
                    order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]).then(a.cmp(&b)));
                    for &i in &order[cfg.top_k..] {
                        scaled[i] = f64::NEG_INFINITY;
                    }
                }
                softmax_in_place(&mut scaled);
                draw(&scaled, rng)
            };
            out.entropies.push(-logp.iter().map(|&l| l.exp() * l).sum::<f64>());
            out.log_probs.push(logp[action]);
            out.values.push(value);
            out.actions.push(action);
            if action == EOS {
                break;
            }
            token = action;
        }
        Ok(out)
    }
}

/// Draws `n` sequences in order from one random stream.
pub fn sample<R: Rng + ?Sized>(
    model: &PolicyModel,
    n: usize,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<Vec<SampledSequence>> {
    cfg.validate()?;
    let inf = InferenceModel::new(model)?;
    (0..n).map(|_| inf.sample_one(cfg, rng)).collect()
}
