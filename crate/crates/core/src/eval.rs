//! Distribution-fidelity metrics comparing a generated set with a reference.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::mic::Embedder;
use crate::physchem::{descriptor_vector, ScaleTable};
use crate::seq::{Peptide, ALPHABET};
use crate::{Error, Result};

/// Pooled residue frequencies over a set, indexed like [`ALPHABET`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AaFrequency(pub [f64; 20]);

impl AaFrequency {
    pub fn get(&self, residue: u8) -> f64 {
        ALPHABET
            .iter()
            .position(|&b| b == residue)
            .map_or(0.0, |i| self.0[i])
    }
}

pub fn aa_frequency(peptides: &[Peptide]) -> Result<AaFrequency> {
    let mut counts = [0u64; 20];
    for p in peptides {
        for i in p.indices() {
            counts[i] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyInput("no residues to count".into()));
    }
    Ok(AaFrequency(counts.map(|c| c as f64 / total as f64)))
}

fn kl(p: &[f64], m: &[f64], base: f64) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).log(base))
        .sum()
}

/// Jensen–Shannon divergence in the given log base; 0·log 0 = 0.
pub fn js_divergence_base(p: &[f64], q: &[f64], base: f64) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Config("distributions must have equal, non-zero length".into()));
    }
    if !(base > 1.0) {
        return Err(Error::Config("log base must exceed 1".into()));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * kl(p, &m, base) + 0.5 * kl(q, &m, base)).max(0.0))
}

/// Base-2 Jensen–Shannon divergence, in [0, 1].
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    js_divergence_base(p, q, 2.0)
}

/// Sample correlation; `None` when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Config("pearson needs two equal-length lists of at least 2".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Equal-width bins over `[lo, hi]`; values outside land in the end bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl BinSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || !(self.lo < self.hi) {
            return Err(Error::Config(format!(
                "histogram needs lo < hi and bins > 0 (got {}..{} in {})",
                self.lo, self.hi, self.bins
            )));
        }
        Ok(())
    }

    pub fn edges(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.bins as f64;
        (0..=self.bins).map(|i| self.lo + w * i as f64).collect()
    }

    pub fn histogram(&self, values: &[f64]) -> Histogram {
        let mut counts = vec![0usize; self.bins];
        let w = (self.hi - self.lo) / self.bins as f64;
        for &v in values {
            let b = ((v - self.lo) / w).floor();
            let b = if b.is_nan() { 0 } else { (b.max(0.0) as usize).min(self.bins - 1) };
            counts[b] += 1;
        }
        Histogram {
            edges: self.edges(),
            counts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub log_base: f64,
    pub distance_thresholds: Vec<f64>,
    pub length_bins: BinSpec,
    pub hydrophobicity_bins: BinSpec,
    pub moment_bins: BinSpec,
    pub charge_bins: BinSpec,
    pub pi_bins: BinSpec,
    pub distance_bins: BinSpec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let b = |lo, hi, bins| BinSpec { lo, hi, bins };
        Self {
            log_base: 2.0,
            distance_thresholds: vec![1.0, 3.0],
            length_bins: b(0.0, 60.0, 30),
            hydrophobicity_bins: b(-1.5, 1.5, 30),
            moment_bins: b(0.0, 1.0, 20),
            charge_bins: b(-10.0, 20.0, 30),
            pi_bins: b(0.0, 14.0, 28),
            distance_bins: b(0.0, 10.0, 20),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.log_base > 1.0) {
            return Err(Error::Config("log_base must exceed 1".into()));
        }
        if self.distance_thresholds.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Config("distance thresholds must be non-negative".into()));
        }
        for b in self.descriptor_bins().iter().map(|(_, b)| *b).chain([&self.distance_bins]) {
            b.validate()?;
        }
        Ok(())
    }

    fn descriptor_bins(&self) -> [(&'static str, &BinSpec); 5] {
        [
            ("length", &self.length_bins),
            ("hydrophobicity", &self.hydrophobicity_bins),
            ("hydrophobic_moment", &self.moment_bins),
            ("net_charge", &self.charge_bins),
            ("isoelectric_point", &self.pi_bins),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorStats {
    pub descriptor: String,
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub histogram: Histogram,
}

/// Linear interpolation between order statistics of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn describe(name: &str, values: &[f64], bins: &BinSpec) -> Result<DescriptorStats> {
    if values.is_empty() {
        return Err(Error::EmptyInput(format!("no values for {name}")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(DescriptorStats {
        descriptor: name.to_string(),
        n: values.len(),
        mean,
        std: var.sqrt(),
        min: sorted[0],
        q25: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q75: quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        histogram: bins.histogram(values),
    })
}

pub fn property_summary(peptides: &[Peptide], scale: &ScaleTable, cfg: &EvalConfig) -> Result<Vec<DescriptorStats>> {
    if peptides.is_empty() {
        return Err(Error::EmptyInput("property summary of an empty set".into()));
    }
    let rows: Vec<[f64; 5]> = peptides.iter().map(|p| descriptor_vector(p, scale).as_array()).collect();
    cfg.descriptor_bins()
        .iter()
        .enumerate()
        .map(|(k, (name, bins))| {
            let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            describe(name, &col, bins)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceProfile {
    /// Distance from each generated peptide to its nearest reference.
    pub distances: Vec<f64>,
    /// `(threshold, fraction of distances ≤ threshold)`.
    pub fractions: Vec<(f64, f64)>,
    pub histogram: Histogram,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn embedding_distance_profile(
    generated: &[Peptide],
    reference: &[Peptide],
    embedder: &Embedder,
    cfg: &EvalConfig,
) -> Result<DistanceProfile> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::EmptyInput("distance profile needs both sets".into()));
    }
    let refs: Vec<Vec<f64>> = reference.iter().map(|p| embedder.embed(p)).collect::<Result<_>>()?;
    let mut distances = Vec::with_capacity(generated.len());
    for p in generated {
        let e = embedder.embed(p)?;
        distances.push(refs.iter().map(|r| euclidean(&e, r)).fold(f64::INFINITY, f64::min));
    }
    let n = distances.len() as f64;
    let fractions = cfg
        .distance_thresholds
        .iter()
        .map(|&t| (t, distances.iter().filter(|&&d| d <= t).count() as f64 / n))
        .collect();
    Ok(DistanceProfile {
        histogram: cfg.distance_bins.histogram(&distances),
        distances,
        fractions,
    })
}

/// One generated set compared with the reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub set: String,
    pub n_generated: usize,
    pub n_reference: usize,
    pub generated_frequency: AaFrequency,
    pub reference_frequency: AaFrequency,
    pub jsd: f64,
    /// Correlation of the two residue-frequency profiles.
    pub pearson: Option<f64>,
    pub generated_properties: Vec<DescriptorStats>,
    pub reference_properties: Vec<DescriptorStats>,
    pub distance: DistanceProfile,
}

pub fn compare(
    set: &str,
    generated: &[Peptide],
    reference: &[Peptide],
    embedder: &Embedder,
    scale: &ScaleTable,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let g = aa_frequency(generated)?;
    let r = aa_frequency(reference)?;
    Ok(EvalReport {
        set: set.to_string(),
        n_generated: generated.len(),
        n_reference: reference.len(),
        jsd: js_divergence_base(&g.0, &r.0, cfg.log_base)?,
        pearson: pearson(&g.0, &r.0)?,
        generated_frequency: g,
        reference_frequency: r,
        generated_properties: property_summary(generated, scale, cfg)?,
        reference_properties: property_summary(reference, scale, cfg)?,
        distance: embedding_distance_profile(generated, reference, embedder, cfg)?,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

/// One row per report: set, sizes, JSD, Pearson, then one column per
/// distance threshold.
pub fn write_summary_tsv<W: Write>(mut w: W, reports: &[EvalReport]) -> Result<()> {
    let thresholds: Vec<f64> = reports
        .first()
        .map(|r| r.distance.fractions.iter().map(|(t, _)| *t).collect())
        .unwrap_or_default();
    write!(w, "set\tn_generated\tn_reference\tjsd\tpearson")?;
    for t in &thresholds {
        write!(w, "\tfrac_within_{t}")?;
    }
    writeln!(w)?;
    for r in reports {
        write!(
            w,
            "{}\t{}\t{}\t{:.6}\t{}",
            r.set,
            r.n_generated,
            r.n_reference,
            r.jsd,
            opt(r.pearson)
        )?;
        for (_, f) in &r.distance.fractions {
            write!(w, "\t{f:.6}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Long-format descriptor statistics for both sides of each report.
pub fn write_descriptor_tsv<W: Write>(mut w: W, reports: &[EvalReport]) -> Result<()> {
    writeln!(w, "set\tdescriptor\tn\tmean\tstd\tmin\tq25\tmedian\tq75\tmax")?;
    let mut emitted_reference = false;
    for r in reports {
        let mut sides = vec![(r.set.as_str(), &r.generated_properties)];
        if !emitted_reference {
            sides.push(("reference", &r.reference_properties));
            emitted_reference = true;
        }
        for (name, stats) in sides {
            for s in stats {
                writeln!(
                    w,
                    "{name}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                    s.descriptor, s.n, s.mean, s.std, s.min, s.q25, s.median, s.q75, s.max
                )?;
            }
        }
    }
    Ok(())
}

/// Residue-frequency profiles side by side, for plotting.
pub fn write_frequency_tsv<W: Write>(mut w: W, reports: &[EvalReport]) -> Result<()> {
    write!(w, "residue\treference")?;
    for r in reports {
        write!(w, "\t{}", r.set)?;
    }
    writeln!(w)?;
    for (i, &b) in ALPHABET.iter().enumerate() {
        let reference = reports.first().map_or(0.0, |r| r.reference_frequency.0[i]);
        write!(w, "{}\t{reference:.6}", b as char)?;
        for r in reports {
            write!(w, "\t{:.6}", r.generated_frequency.0[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Raw embeddings for external projection (id, set, then one column per dimension).
pub fn write_embeddings<W: Write>(mut w: W, sets: &[(&str, &[Peptide])], embedder: &Embedder) -> Result<()> {
    write!(w, "id\tset")?;
    for d in 0..embedder.dim() {
        write!(w, "\tf{d}")?;
    }
    writeln!(w)?;
    for (name, peptides) in sets {
        for p in *peptides {
            write!(w, "{}\t{name}", p.id())?;
            for v in embedder.embed(p)? {
                write!(w, "\t{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
