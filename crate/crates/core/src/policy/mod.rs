//! Autoregressive peptide generator: a small pre-norm causal transformer over
//! residue tokens with optional low-rank adapters.
//!
//! Token ids 0..20 are residues in alphabet order, 20 is EOS, 21 is BOS and
//! 22 is PAD. The output head covers the 21 actions a generator can take
//! (20 residues plus EOS).

mod forward;
mod infer;
mod sft;

use std::path::Path;

use ampforge_numerics::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::fsio;
use crate::rng::substream;
use crate::seq::{Peptide, Source};
use crate::{Error, Result};

pub use forward::{action_log_probs, log_probs, perplexity, sft_loss, GraphForward, SftLoss};
pub use infer::{sample, InferenceModel, KvCache, SampledSequence, SamplingConfig};
pub use sft::{train_sft, SftConfig, SftReport};

pub const EOS: usize = 20;
pub const BOS: usize = 21;
pub const PAD: usize = 22;
pub const VOCAB: usize = 23;
pub const NUM_ACTIONS: usize = 21;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `dim`.
    pub ff_mult: usize,
    /// Maximum residues per sequence; generation stops here without EOS.
    pub max_len: usize,
    pub init_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            layers: 4,
            heads: 4,
            ff_mult: 4,
            max_len: 50,
            init_std: 0.02,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.layers == 0 || self.heads == 0 || self.ff_mult == 0 || self.max_len == 0 {
            return Err(Error::Config("policy dimensions must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn ff_dim(&self) -> usize {
        self.dim * self.ff_mult
    }

    /// Input positions: BOS plus up to `max_len` residues.
    pub fn positions(&self) -> usize {
        self.max_len + 1
    }

    /// Closed-form parameter count of the base model (no adapters).
    pub fn parameter_count(&self) -> usize {
        let d = self.dim;
        let f = self.ff_dim();
        let per_layer = 2 * d + 4 * d * d + 3 * d + 2 * d + (d * f + f) + (f * d + d);
        VOCAB * d + self.positions() * d + self.layers * per_layer + 2 * d + (d * NUM_ACTIONS + NUM_ACTIONS) + (d + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Q,
    K,
    V,
    O,
    Ff1,
    Ff2,
}

impl Projection {
    pub const ALL: [Projection; 6] = [Self::Q, Self::K, Self::V, Self::O, Self::Ff1, Self::Ff2];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "q" => Self::Q,
            "k" => Self::K,
            "v" => Self::V,
            "o" => Self::O,
            "ff1" => Self::Ff1,
            "ff2" => Self::Ff2,
            other => return Err(Error::Config(format!("unknown adapter target '{other}'"))),
        })
    }

    /// Parameter-name prefix of this projection in layer `l`.
    pub fn prefix(self, l: usize) -> String {
        match self {
            Self::Q => format!("layers.{l}.attn.q"),
            Self::K => format!("layers.{l}.attn.k"),
            Self::V => format!("layers.{l}.attn.v"),
            Self::O => format!("layers.{l}.attn.o"),
            Self::Ff1 => format!("layers.{l}.ff1"),
            Self::Ff2 => format!("layers.{l}.ff2"),
        }
    }

    pub fn shape(self, cfg: &PolicyConfig) -> (usize, usize) {
        match self {
            Self::Ff1 => (cfg.dim, cfg.ff_dim()),
            Self::Ff2 => (cfg.ff_dim(), cfg.dim),
            _ => (cfg.dim, cfg.dim),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<Projection>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 16.0,
            targets: vec![Projection::Q, Projection::V],
        }
    }
}

impl LoraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("adapter rank must be at least 1".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("adapter needs at least one target".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config("adapter alpha must be positive".into()));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn has(&self, p: Projection) -> bool {
        self.targets.contains(&p)
    }

    /// Σ over targeted projections of r·(d_in + d_out).
    pub fn parameter_count(&self, cfg: &PolicyConfig) -> usize {
        let per_layer: usize = Projection::ALL
            .iter()
            .filter(|p| self.has(**p))
            .map(|p| {
                let (i, o) = p.shape(cfg);
                self.rank * (i + o)
            })
            .sum();
        per_layer * cfg.layers
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    config: PolicyConfig,
    lora: Option<LoraConfig>,
    params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    config: PolicyConfig,
    lora: Option<LoraConfig>,
}

const MODEL_KIND: &str = "policy";

impl PolicyModel {
    /// Fresh model with seeded scaled-normal weights. Residual output
    /// projections are further scaled by 1/√(2·layers); the value head
    /// starts at zero.
    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, "policy_init");
        let d = config.dim;
        let std = config.init_std;
        let resid_std = std / (2.0 * config.layers as f64).sqrt();
        let mut ps = ParamStore::new();
        ps.insert("tok_emb", Tensor::randn(&[VOCAB, d], std, &mut rng), true)?;
        ps.insert("pos_emb", Tensor::randn(&[config.positions(), d], std, &mut rng), true)?;
        let mut linear = |ps: &mut ParamStore, name: String, d_in: usize, d_out: usize, s: f64| -> Result<()> {
            ps.insert(format!("{name}.weight"), Tensor::randn(&[d_in, d_out], s, &mut rng), true)?;
            // A key bias shifts every score of a query row equally, which the
            // softmax cancels, so keys carry none.
            if !name.ends_with("attn.k") {
                ps.insert(format!("{name}.bias"), Tensor::zeros(&[d_out]), true)?;
            }
            Ok(())
        };
        let norm = |ps: &mut ParamStore, name: String| -> Result<()> {
            ps.insert(format!("{name}.gain"), Tensor::full(&[d], 1.0), true)?;
            ps.insert(format!("{name}.bias"), Tensor::zeros(&[d]), true)?;
            Ok(())
        };
        for l in 0..config.layers {
            norm(&mut ps, format!("layers.{l}.ln1"))?;
            for p in [Projection::Q, Projection::K, Projection::V, Projection::O] {
                let s = if p == Projection::O { resid_std } else { std };
                linear(&mut ps, p.prefix(l), d, d, s)?;
            }
            norm(&mut ps, format!("layers.{l}.ln2"))?;
            linear(&mut ps, Projection::Ff1.prefix(l), d, config.ff_dim(), std)?;
            linear(&mut ps, Projection::Ff2.prefix(l), config.ff_dim(), d, resid_std)?;
        }
        norm(&mut ps, "ln_f".into())?;
        linear(&mut ps, "head".into(), d, NUM_ACTIONS, std)?;
        ps.insert("value.weight", Tensor::zeros(&[d, 1]), true)?;
        ps.insert("value.bias", Tensor::zeros(&[1]), true)?;
        Ok(Self {
            config,
            lora: None,
            params: ps,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn lora(&self) -> Option<&LoraConfig> {
        self.lora.as_ref()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn max_len(&self) -> usize {
        self.config.max_len
    }

    /// Adds zero-initialised low-rank deltas to the targeted projections and
    /// freezes every other parameter. The `A` factor is random, `B` is zero,
    /// so the model output is unchanged.
    pub fn attach_lora(&mut self, lora: LoraConfig, seed: u64) -> Result<()> {
        lora.validate()?;
        if self.lora.is_some() {
            return Err(Error::Config("adapters are already attached".into()));
        }
        self.params.set_all_trainable(false);
        let mut rng = substream(seed, "lora_init");
        for l in 0..self.config.layers {
            for p in Projection::ALL {
                if !lora.has(p) {
                    continue;
                }
                let (d_in, d_out) = p.shape(&self.config);
                let prefix = p.prefix(l);
                let a = Tensor::randn(&[d_in, lora.rank], 1.0 / (d_in as f64).sqrt(), &mut rng);
                self.params.insert(format!("{prefix}.lora_a"), a, true)?;
                self.params
                    .insert(format!("{prefix}.lora_b"), Tensor::zeros(&[lora.rank, d_out]), true)?;
            }
        }
        self.lora = Some(lora);
        Ok(())
    }

    pub fn set_value_head_trainable(&mut self, trainable: bool) {
        for name in ["value.weight", "value.bias"] {
            if let Some(p) = self.params.get_mut(name) {
                p.trainable = trainable;
            }
        }
    }

    pub fn is_adapter_param(name: &str) -> bool {
        name.ends_with(".lora_a") || name.ends_with(".lora_b")
    }

    /// Effective weight of a projection: W + (alpha/r)·A·B.
    pub fn effective_weight(&self, p: Projection, layer: usize) -> Result<Tensor> {
        let prefix = p.prefix(layer);
        let w = self.tensor(&format!("{prefix}.weight"))?.clone();
        match &self.lora {
            Some(lora) if lora.has(p) => {
                let a = self.tensor(&format!("{prefix}.lora_a"))?;
                let b = self.tensor(&format!("{prefix}.lora_b"))?;
                Ok(w.add(&a.matmul(b)?.scale(lora.scale()))?)
            }
            _ => Ok(w),
        }
    }

    pub(crate) fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = ModelMeta {
            kind: MODEL_KIND.into(),
            config: self.config.clone(),
            lora: self.lora.clone(),
        };
        fsio::save_bundle(path, &self.params, serde_json::to_value(meta)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = fsio::load_bundle(path)?;
        let meta: ModelMeta = serde_json::from_value(meta)?;
        if meta.kind != MODEL_KIND {
            return Err(Error::Config(format!(
                "{} holds a '{}' model, expected a policy",
                path.display(),
                meta.kind
            )));
        }
        let reference = {
            let mut m = Self::init(meta.config.clone(), 0)?;
            if let Some(l) = &meta.lora {
                m.attach_lora(l.clone(), 0)?;
            }
            m
        };
        let expected: Vec<(&str, &[usize])> = reference.params.iter().map(|(n, p)| (n, p.value.shape())).collect();
        let actual: Vec<(&str, &[usize])> = params.iter().map(|(n, p)| (n, p.value.shape())).collect();
        if expected != actual {
            return Err(Error::Config(format!(
                "{} does not match the layout of its configuration",
                path.display()
            )));
        }
        Ok(Self {
            config: meta.config,
            lora: meta.lora,
            params,
        })
    }
}

/// Action ids for a peptide: residues, then EOS unless the peptide already
/// fills `max_len` (generation stops there without emitting EOS).
pub fn peptide_actions(p: &Peptide, max_len: usize) -> Result<Vec<usize>> {
    if p.len() > max_len {
        return Err(Error::Config(format!(
            "sequence {} has {} residues, model maximum is {max_len}",
            p.id(),
            p.len()
        )));
    }
    let mut out: Vec<usize> = p.indices().collect();
    if out.len() < max_len {
        out.push(EOS);
    }
    Ok(out)
}

/// Residues of an action sequence (everything before EOS).
pub fn actions_to_peptide(id: impl Into<String>, actions: &[usize], source: Source) -> Result<Peptide> {
    let residues: Vec<usize> = actions.iter().copied().take_while(|&a| a != EOS).collect();
    Peptide::from_indices(id, &residues, source)
}

/// Sequences as action-id lists; see [`peptide_actions`].
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    seqs: Vec<Vec<usize>>,
}

impl TokenBatch {
    pub fn from_peptides(peptides: &[Peptide], max_len: usize) -> Result<Self> {
        let seqs = peptides
            .iter()
            .map(|p| peptide_actions(p, max_len))
            .collect::<Result<Vec<_>>>()?;
        Self::from_actions(seqs, max_len)
    }

    /// Each sequence must be non-empty, contain EOS only as its last action,
    /// and hold at most `max_len` residues.
    pub fn from_actions(seqs: Vec<Vec<usize>>, max_len: usize) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::EmptyInput("token batch".into()));
        }
        for s in &seqs {
            let Some((&last, body)) = s.split_last() else {
                return Err(Error::EmptyInput("action sequence".into()));
            };
            if body.iter().any(|&a| a >= EOS) || last > EOS {
                return Err(Error::Config("EOS may only end a sequence".into()));
            }
            let residues = body.len() + usize::from(last != EOS);
            if residues > max_len || (residues == max_len && last == EOS) {
                return Err(Error::Config(format!("sequence exceeds {max_len} residues")));
            }
        }
        Ok(Self { seqs })
    }

    pub fn sequences(&self) -> &[Vec<usize>] {
        &self.seqs
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.seqs.iter().map(Vec::len).sum()
    }

    /// Model inputs for one sequence: BOS followed by all but the last action.
    pub fn inputs(actions: &[usize]) -> Vec<usize> {
        let mut x = Vec::with_capacity(actions.len());
        x.push(BOS);
        x.extend_from_slice(&actions[..actions.len() - 1]);
        x
    }

    /// N×(max_len+2) matrix view: BOS, actions, then PAD.
    pub fn padded(&self, max_len: usize) -> Vec<Vec<usize>> {
        self.seqs
            .iter()
            .map(|s| {
                let mut row = vec![PAD; max_len + 2];
                row[0] = BOS;
                row[1..=s.len()].copy_from_slice(s);
                row
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::validate_sequence;

    fn toy() -> PolicyConfig {
        PolicyConfig {
            dim: 16,
            layers: 2,
            heads: 2,
            ff_mult: 2,
            max_len: 12,
            init_std: 0.1,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = PolicyModel::init(toy(), 3).unwrap();
        let b = PolicyModel::init(toy(), 3).unwrap();
        let c = PolicyModel::init(toy(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_count_matches_formula() {
        let cfg = PolicyConfig::default();
        let m = PolicyModel::init(cfg.clone(), 0).unwrap();
        // Written out independently for the default shape (d=128, f=512, 4 layers).
        let d = 128;
        let f = 512;
        let layer = 2 * d + 4 * d * d + 3 * d + 2 * d + d * f + f + f * d + d;
        let expected = 23 * d + 51 * d + 4 * layer + 2 * d + 21 * d + 21 + d + 1;
        assert_eq!(m.params().num_elements(false), expected);
        assert_eq!(cfg.parameter_count(), expected);
    }

    #[test]
    fn lora_validation_and_counts() {
        let mut m = PolicyModel::init(toy(), 0).unwrap();
        let bad = LoraConfig {
            rank: 0,
            ..LoraConfig::default()
        };
        assert!(m.attach_lora(bad, 0).is_err());
        assert!(Projection::parse("gate").is_err());
        let lora = LoraConfig {
            rank: 3,
            alpha: 6.0,
            targets: vec![Projection::Q, Projection::V, Projection::Ff1],
        };
        m.attach_lora(lora.clone(), 1).unwrap();
        // q and v: 3·(16+16) each; ff1: 3·(16+32); two layers.
        assert_eq!(m.params().num_elements(true), 2 * (96 + 96 + 144));
        assert_eq!(lora.parameter_count(&toy()), m.params().num_elements(true));
        assert!(m.attach_lora(lora, 1).is_err());
    }

    #[test]
    fn token_batch_rules() {
        let p = validate_sequence("KLK").unwrap();
        assert_eq!(peptide_actions(&p, 5).unwrap(), vec![8, 9, 8, EOS]);
        assert_eq!(peptide_actions(&p, 3).unwrap(), vec![8, 9, 8]);
        assert!(peptide_actions(&p, 2).is_err());
        assert!(TokenBatch::from_actions(vec![vec![EOS, 1]], 5).is_err());
        assert!(TokenBatch::from_actions(vec![vec![]], 5).is_err());
        assert!(TokenBatch::from_actions(vec![], 5).is_err());
        let b = TokenBatch::from_actions(vec![vec![EOS], vec![1, 2, EOS]], 5).unwrap();
        assert_eq!(b.num_tokens(), 4);
        let padded = b.padded(5);
        assert_eq!(padded[1], vec![BOS, 1, 2, EOS, PAD, PAD, PAD]);
        for row in &padded {
            assert_eq!(row.iter().filter(|&&t| t == EOS).count(), 1);
        }
        assert_eq!(TokenBatch::inputs(&[1, 2, EOS]), vec![BOS, 1, 2]);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = PolicyModel::init(toy(), 5).unwrap();
        m.attach_lora(LoraConfig::default(), 6).unwrap();
        let path = dir.path().join("p.ckpt");
        m.save(&path).unwrap();
        assert_eq!(PolicyModel::load(&path).unwrap(), m);
    }
}
