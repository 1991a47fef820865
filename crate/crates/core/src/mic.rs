//! Activity classifier: peptide embedding, standardisation, and a
//! feed-forward network trained with focal loss. The output s ∈ (0,1) is
//! the probability that a peptide is active.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use ampforge_numerics::{kernels, AdamConfig, AdamState, Graph, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::fsio;
use crate::physchem::{descriptor_vector, ScaleTable};
use crate::rng::substream;
use crate::seq::{validate_sequence, Peptide};
use crate::{Error, Result};

/// 5 descriptors + 20 residue frequencies + 400 dipeptide frequencies.
pub const BUILTIN_DIM: usize = 5 + 20 + 400;

/// Where embeddings come from; this is what gets persisted with a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    BuiltinFeatures,
    ExternalTable { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Embedder {
    Builtin(ScaleTable),
    External {
        path: PathBuf,
        dim: usize,
        table: HashMap<String, Vec<f64>>,
    },
}

#[derive(Deserialize)]
struct ExternalRow {
    sequence: String,
    vector: Vec<f64>,
}

impl Embedder {
    /// Loads `{"sequence": ..., "vector": [...]}` lines.
    pub fn load_external(path: &Path) -> Result<Self> {
        let reader = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut table = HashMap::new();
        let mut dim = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ExternalRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let seq = validate_sequence(&row.sequence).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if *dim.get_or_insert(row.vector.len()) != row.vector.len() || row.vector.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "embedding dimension differs from earlier rows".into(),
                });
            }
            if row.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "embedding has non-finite values".into(),
                });
            }
            table.insert(seq.residues().to_string(), row.vector);
        }
        let dim = dim.ok_or_else(|| Error::EmptyInput(format!("embedding table {}", path.display())))?;
        Ok(Self::External {
            path: path.to_path_buf(),
            dim,
            table,
        })
    }

    pub fn spec(&self) -> EmbedderSpec {
        match self {
            Self::Builtin(_) => EmbedderSpec::BuiltinFeatures,
            Self::External { path, .. } => EmbedderSpec::ExternalTable { path: path.clone() },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Builtin(_) => BUILTIN_DIM,
            Self::External { dim, .. } => *dim,
        }
    }

    /// Raw (unstandardised) feature vector.
    pub fn embed(&self, p: &Peptide) -> Result<Vec<f64>> {
        match self {
            Self::Builtin(scale) => Ok(builtin_features(p, scale)),
            Self::External { table, .. } => table
                .get(p.residues())
                .cloned()
                .ok_or_else(|| Error::MissingEmbedding(p.residues().to_string())),
        }
    }
}

fn builtin_features(p: &Peptide, scale: &ScaleTable) -> Vec<f64> {
    let mut out = Vec::with_capacity(BUILTIN_DIM);
    out.extend(descriptor_vector(p, scale).as_array());
    let idx: Vec<usize> = p.indices().collect();
    let mut comp = [0.0; 20];
    for &i in &idx {
        comp[i] += 1.0;
    }
    out.extend(comp.iter().map(|c| c / idx.len() as f64));
    let mut di = vec![0.0; 400];
    let pairs = idx.len().saturating_sub(1);
    for w in idx.windows(2) {
        di[w[0] * 20 + w[1]] += 1.0;
    }
    if pairs > 0 {
        di.iter_mut().for_each(|v| *v /= pairs as f64);
    }
    out.extend(di);
    out
}

/// Per-feature mean and standard deviation frozen at training time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map(Vec::len).ok_or_else(|| Error::EmptyInput("feature matrix".into()))?;
        let mut mean = vec![0.0; dim];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        // Constant features are left centred but unscaled.
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd < 1e-12 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

/// Anything that maps a peptide to an activity score in [0, 1].
pub trait ActivityScorer {
    fn activity(&self, p: &Peptide) -> Result<f64>;
}

impl<F: Fn(&Peptide) -> Result<f64>> ActivityScorer for F {
    fn activity(&self, p: &Peptide) -> Result<f64> {
        self(p)
    }
}

/// Whether a labelled peptide is active (MIC ≤ 32 µmol L⁻¹).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPeptide {
    pub peptide: Peptide,
    pub active: bool,
}

fn parse_label(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "active" | "true" | "pos" | "positive" => Some(true),
        "0" | "inactive" | "false" | "neg" | "negative" => Some(false),
        _ => None,
    }
}

/// Reads `sequence<TAB>label` rows; an optional header starting with
/// `sequence` is skipped.
pub fn read_labeled<R: BufRead>(r: R) -> Result<Vec<LabeledPeptide>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if i == 0 && cells[0].trim().eq_ignore_ascii_case("sequence") {
            continue;
        }
        if cells.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 2 columns (sequence, label), found {}", cells.len()),
            });
        }
        let peptide = validate_sequence(cells[0])
            .map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?
            .with_id(format!("row{line_no}"));
        let active = parse_label(cells[1]).ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("unrecognised label '{}'", cells[1]),
        })?;
        out.push(LabeledPeptide { peptide, active });
    }
    Ok(out)
}

pub fn write_labeled<W: std::io::Write>(mut w: W, rows: &[LabeledPeptide]) -> Result<()> {
    writeln!(w, "sequence\tlabel")?;
    for r in rows {
        writeln!(w, "{}\t{}", r.peptide.residues(), u8::from(r.active))?;
    }
    Ok(())
}

/// −(1/N) Σ αᵢ (1−pᵢ)^γ ln pᵢ, with pᵢ the probability of the true class.
pub fn focal_loss(probs: &[f64], labels: &[bool], alphas: &[f64], gamma: f64) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyInput("focal loss batch".into()));
    }
    if probs.len() != labels.len() || probs.len() != alphas.len() {
        return Err(Error::Config("focal loss inputs differ in length".into()));
    }
    let mut total = 0.0;
    for ((&p, &y), &a) in probs.iter().zip(labels).zip(alphas) {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!("probability {p} is outside (0, 1)")));
        }
        let pt = if y { p } else { 1.0 - p };
        total -= a * (1.0 - pt).powf(gamma) * pt.ln();
    }
    Ok(total / probs.len() as f64)
}

/// Per-class weights (α_active, α_inactive): inverse class frequency,
/// normalised so the per-sample mean is 1.
pub fn inverse_frequency_alpha(labels: &[bool]) -> Result<(f64, f64)> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let n = labels.len() as f64;
    Ok((n / (2.0 * pos as f64), n / (2.0 * neg as f64)))
}

/// AUROC as the normalised Mann–Whitney rank statistic with tied scores
/// sharing their average rank. `None` when only one class is present.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 || scores.len() != labels.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks are doubled so tie averages stay integral.
    let mut rank_sum2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum2 += avg2;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as u64, neg as u64);
    let u2 = rank_sum2 - p * (p + 1);
    Some(u2 as f64 / (2 * p * n) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auroc: Option<f64>,
    pub accuracy: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn classification_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Metrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = scores.len().max(1) as f64;
    let f1_den = 2 * tp + fp + fn_;
    Metrics {
        auroc: auroc(scores, labels),
        accuracy: (tp + tn) as f64 / n,
        f1: if f1_den == 0 { 0.0 } else { 2.0 * tp as f64 / f1_den as f64 },
        tp,
        fp,
        tn,
        fn_,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    /// Explicit (α_active, α_inactive); inverse class frequency when absent.
    pub alpha: Option<(f64, f64)>,
    pub decision_threshold: f64,
    pub screening_cutoff: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub adam: AdamConfig,
}

impl Default for MicConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 64],
            gamma: 2.0,
            alpha: None,
            decision_threshold: 0.5,
            screening_cutoff: 0.4,
            epochs: 40,
            batch_size: 64,
            patience: 8,
            adam: AdamConfig::default(),
        }
    }
}

impl MicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config("focal gamma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicHistory {
    pub train_loss: Vec<f64>,
    pub val_auroc: Vec<Option<f64>>,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicModel {
    pub embedder: Embedder,
    pub standardizer: Standardizer,
    pub config: MicConfig,
    params: ParamStore,
}

impl ActivityScorer for MicModel {
    fn activity(&self, p: &Peptide) -> Result<f64> {
        self.score(p)
    }
}

#[derive(Serialize, Deserialize)]
struct MicMeta {
    kind: String,
    embedder: EmbedderSpec,
    standardizer: Standardizer,
    config: MicConfig,
}

const MIC_KIND: &str = "mic_classifier";

impl MicModel {
    fn init(embedder: Embedder, standardizer: Standardizer, config: MicConfig, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, "mic_init");
        let mut ps = ParamStore::new();
        let mut dims = vec![embedder.dim()];
        dims.extend(&config.hidden);
        dims.push(1);
        for (i, w) in dims.windows(2).enumerate() {
            let std = 1.0 / (w[0] as f64).sqrt();
            ps.insert(format!("mlp.{i}.weight"), Tensor::randn(&[w[0], w[1]], std, &mut rng), true)?;
            ps.insert(format!("mlp.{i}.bias"), Tensor::zeros(&[w[1]]), true)?;
        }
        Ok(Self {
            embedder,
            standardizer,
            config,
            params: ps,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    fn num_layers(&self) -> usize {
        self.params.len() / 2
    }

    pub fn features(&self, p: &Peptide) -> Result<Vec<f64>> {
        let mut f = self.embedder.embed(p)?;
        self.standardizer.apply(&mut f);
        Ok(f)
    }

    /// Logits `[N,1]` on a graph for standardised feature rows.
    fn logits_graph(&self, g: &mut Graph, x: &[Vec<f64>]) -> Result<(Var, ampforge_numerics::Binding)> {
        let binding = self.params.bind(g);
        let dim = self.embedder.dim();
        let data: Vec<f64> = x.iter().flatten().copied().collect();
        let mut h = g.constant(Tensor::matrix(x.len(), dim, data)?);
        let layers = self.num_layers();
        for l in 0..layers {
            h = g.matmul(h, binding.var(2 * l))?;
            h = g.add_row(h, binding.var(2 * l + 1))?;
            if l + 1 < layers {
                h = g.gelu(h)?;
            }
        }
        Ok((h, binding))
    }

    fn logit(&self, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        let layers = self.num_layers();
        for l in 0..layers {
            let w = &self.params.by_index(2 * l).value;
            let b = &self.params.by_index(2 * l + 1).value;
            let mut out = b.data().to_vec();
            for (i, &hi) in h.iter().enumerate() {
                for (o, &wv) in out.iter_mut().zip(w.row(i)) {
                    *o += hi * wv;
                }
            }
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = kernels::gelu(*v));
            }
            h = out;
        }
        h[0]
    }

    /// Activity score s = σ(logit); depends on residues only.
    pub fn score(&self, p: &Peptide) -> Result<f64> {
        Ok(kernels::sigmoid(self.logit(&self.features(p)?)))
    }

    pub fn score_all(&self, peptides: &[Peptide]) -> Result<Vec<f64>> {
        peptides.iter().map(|p| self.score(p)).collect()
    }

    pub fn evaluate(&self, test: &[LabeledPeptide]) -> Result<Metrics> {
        if test.is_empty() {
            return Err(Error::EmptyInput("evaluation set".into()));
        }
        let peps: Vec<Peptide> = test.iter().map(|r| r.peptide.clone()).collect();
        let scores = self.score_all(&peps)?;
        let labels: Vec<bool> = test.iter().map(|r| r.active).collect();
        Ok(classification_metrics(&scores, &labels, self.config.decision_threshold))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = MicMeta {
            kind: MIC_KIND.into(),
            embedder: self.embedder.spec(),
            standardizer: self.standardizer.clone(),
            config: self.config.clone(),
        };
        let mut meta = serde_json::to_value(meta)?;
        if let Embedder::Builtin(scale) = &self.embedder {
            meta["scale_table"] = serde_json::to_value(scale)?;
        }
        fsio::save_bundle(path, &self.params, meta)
    }

    /// Loads a model; `external_table` overrides the stored embedding path.
    pub fn load(path: &Path, external_table: Option<&Path>) -> Result<Self> {
        let (params, meta_value) = fsio::load_bundle(path)?;
        let meta: MicMeta = serde_json::from_value(meta_value.clone())?;
        if meta.kind != MIC_KIND {
            return Err(Error::Config(format!(
                "{} holds a '{}' model, expected a classifier",
                path.display(),
                meta.kind
            )));
        }
        let embedder = match &meta.embedder {
            EmbedderSpec::BuiltinFeatures => {
                let scale = match meta_value.get("scale_table") {
                    Some(v) => serde_json::from_value(v.clone())?,
                    None => ScaleTable::default(),
                };
                Embedder::Builtin(scale)
            }
            EmbedderSpec::ExternalTable { path: stored } => {
                Embedder::load_external(external_table.unwrap_or(stored.as_path()))?
            }
        };
        let model = Self {
            embedder,
            standardizer: meta.standardizer,
            config: meta.config,
            params,
        };
        let reference = Self::init(model.embedder.clone(), model.standardizer.clone(), model.config.clone(), 0)?;
        let shapes = |m: &Self| -> Vec<(String, Vec<usize>)> {
            m.params.iter().map(|(n, p)| (n.to_string(), p.value.shape().to_vec())).collect()
        };
        if shapes(&reference) != shapes(&model) {
            return Err(Error::Config(format!("{} does not match its configuration", path.display())));
        }
        Ok(model)
    }
}

fn focal_graph(
    g: &mut Graph,
    logits: Var,
    labels: &[bool],
    alphas: &[f64],
    gamma: f64,
) -> ampforge_numerics::Result<Var> {
    let n = labels.len();
    let signs = Tensor::matrix(n, 1, labels.iter().map(|&y| if y { 1.0 } else { -1.0 }).collect())?;
    let signs = g.constant(signs);
    let alpha = g.constant(Tensor::matrix(n, 1, alphas.to_vec())?);
    let signed = g.mul(logits, signs)?;
    // log p_true = ln σ(±z);  (1 − p_true)^γ = exp(γ · ln σ(∓z)).
    let log_pt = g.log_sigmoid(signed)?;
    let neg = g.scale(signed, -1.0)?;
    let log_1m = g.log_sigmoid(neg)?;
    let mod_log = g.scale(log_1m, gamma)?;
    let modulator = g.exp(mod_log)?;
    let weighted = g.mul(modulator, log_pt)?;
    let weighted = g.mul(weighted, alpha)?;
    let m = g.mean(weighted)?;
    g.scale(m, -1.0)
}

/// Trains a classifier and returns it at its best validation AUROC.
pub fn train(
    embedder: Embedder,
    train_set: &[LabeledPeptide],
    val_set: &[LabeledPeptide],
    config: &MicConfig,
    seed: u64,
) -> Result<(MicModel, MicHistory)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyInput("training and validation sets must be non-empty".into()));
    }
    let labels: Vec<bool> = train_set.iter().map(|r| r.active).collect();
    let (a_pos, a_neg) = match config.alpha {
        Some(a) => {
            inverse_frequency_alpha(&labels)?;
            a
        }
        None => inverse_frequency_alpha(&labels)?,
    };
    let raw: Vec<Vec<f64>> = train_set
        .iter()
        .map(|r| embedder.embed(&r.peptide))
        .collect::<Result<_>>()?;
    let standardizer = Standardizer::fit(&raw)?;
    let mut model = MicModel::init(embedder, standardizer, config.clone(), seed)?;
    let features: Vec<Vec<f64>> = raw
        .into_iter()
        .map(|mut f| {
            model.standardizer.apply(&mut f);
            f
        })
        .collect();
    let val_labels: Vec<bool> = val_set.iter().map(|r| r.active).collect();
    let val_peps: Vec<Peptide> = val_set.iter().map(|r| r.peptide.clone()).collect();

    let mut rng = substream(seed, "mic_shuffle");
    let mut adam = AdamState::new(config.adam, &model.params);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut history = MicHistory {
        train_loss: Vec::new(),
        val_auroc: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, MicModel)> = None;
    let mut since_best = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x: Vec<Vec<f64>> = chunk.iter().map(|&i| features[i].clone()).collect();
            let y: Vec<bool> = chunk.iter().map(|&i| labels[i]).collect();
            let a: Vec<f64> = y.iter().map(|&v| if v { a_pos } else { a_neg }).collect();
            let mut g = Graph::new();
            let (logits, binding) = model.logits_graph(&mut g, &x)?;
            let loss = focal_graph(&mut g, logits, &y, &a, config.gamma)?;
            loss_total += g.value(loss).item() * chunk.len() as f64;
            let mut grads = g.backward(loss)?;
            let grads = model.params.collect_grads(&binding, &mut grads);
            adam.step(&mut model.params, &grads)?;
        }
        let scores = model.score_all(&val_peps)?;
        let val = auroc(&scores, &val_labels);
        history.train_loss.push(loss_total / features.len() as f64);
        history.val_auroc.push(val);
        // A single-class validation set falls back to keeping the latest epoch.
        let key = val.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _)) => key > *b,
        };
        if improved {
            best = Some((key, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        log::info!("mic epoch {epoch}: loss {:.5}, val auroc {:?}", history.train_loss[epoch], val);
        if since_best >= config.patience {
            break;
        }
    }
    let (_, model) = best.expect("at least one epoch ran");
    Ok((model, history))
}

/// Convenience for tests and tools: the focal loss of a trained model on a
/// labelled set, evaluated in plain arithmetic.
pub fn dataset_focal_loss(model: &MicModel, set: &[LabeledPeptide], alphas: (f64, f64)) -> Result<f64> {
    let probs: Vec<f64> = set.iter().map(|r| model.score(&r.peptide)).collect::<Result<_>>()?;
    let labels: Vec<bool> = set.iter().map(|r| r.active).collect();
    let a: Vec<f64> = labels.iter().map(|&y| if y { alphas.0 } else { alphas.1 }).collect();
    focal_loss(&probs, &labels, &a, model.config.gamma)
}
