//! Virtual screening: threshold and window filters, novelty against a
//! reference set, prioritisation, diversity selection and library building.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::align::{align_local, Scoring};
use crate::mic::{ActivityScorer, Embedder, Standardizer};
use crate::physchem::{descriptor_vector, PropertyVector, ScaleTable};
use crate::policy::{actions_to_peptide, InferenceModel, PolicyModel, SamplingConfig};
use crate::records::{AnnotationRecord, Verdict};
use crate::reward::ClampRanges;
use crate::rng::substream;
use crate::seq::{Peptide, Source};
use crate::{Error, Result};

/// External score key holding a record's best-hit identity to the reference.
pub const REF_IDENTITY_KEY: &str = "ref_identity";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropertyWindows {
    pub hydrophobicity: Option<[f64; 2]>,
    pub hydrophobic_moment: Option<[f64; 2]>,
    pub net_charge: Option<[f64; 2]>,
    pub isoelectric_point: Option<[f64; 2]>,
}

impl PropertyWindows {
    fn checks(&self) -> [(&'static str, Option<[f64; 2]>); 4] {
        [
            ("hydrophobicity", self.hydrophobicity),
            ("hydrophobic_moment", self.hydrophobic_moment),
            ("net_charge", self.net_charge),
            ("isoelectric_point", self.isoelectric_point),
        ]
    }
}

fn property_values(p: &PropertyVector) -> [f64; 4] {
    [p.hydrophobicity, p.hydrophobic_moment, p.net_charge, p.isoelectric_point]
}

/// Gate on an ingested per-sequence score, e.g. a structure confidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalFilter {
    pub name: String,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoveltyConfig {
    /// Percent identity counted as a high-identity match.
    pub identity: f64,
    /// A match must span more than this fraction of the candidate.
    pub coverage: f64,
    /// Hits above this approximate e-value are left out of the report.
    pub max_evalue: f64,
}

impl Default for NoveltyConfig {
    fn default() -> Self {
        Self {
            identity: 90.0,
            coverage: 0.70,
            max_evalue: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreenConfig {
    pub mic_cutoff: f64,
    pub max_length: usize,
    pub windows: PropertyWindows,
    pub forbidden_motifs: Vec<String>,
    pub external_filters: Vec<ExternalFilter>,
    pub novelty: NoveltyConfig,
    pub scoring: Scoring,
    /// Windows counted as tie-breaks when prioritising.
    pub priority_windows: ClampRanges,
    pub diversity_k: Option<usize>,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            mic_cutoff: 0.4,
            max_length: 50,
            windows: PropertyWindows::default(),
            forbidden_motifs: Vec::new(),
            external_filters: Vec::new(),
            novelty: NoveltyConfig::default(),
            scoring: Scoring::default(),
            priority_windows: ClampRanges::default(),
            diversity_k: None,
        }
    }
}

impl ScreenConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(0.0..=1.0).contains(&self.mic_cutoff) {
            bad.push("mic_cutoff must lie in [0, 1]".to_string());
        }
        if !(self.novelty.coverage > 0.0 && self.novelty.coverage <= 1.0) {
            bad.push("novelty.coverage must lie in (0, 1]".into());
        }
        if !(0.0..=100.0).contains(&self.novelty.identity) {
            bad.push("novelty.identity is a percentage in [0, 100]".into());
        }
        for m in &self.forbidden_motifs {
            if m.is_empty() || crate::seq::validate_sequence(m).is_err() {
                bad.push(format!("forbidden motif '{m}' is not a residue string"));
            }
        }
        for (name, w) in self.windows.checks() {
            if let Some([lo, hi]) = w {
                if !(lo <= hi) {
                    bad.push(format!("window for {name} has lower > upper"));
                }
            }
        }
        if self.diversity_k == Some(0) {
            bad.push("diversity_k must be at least 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Every criterion the record fails, in a fixed order.
pub fn reject_reasons(r: &AnnotationRecord, cfg: &ScreenConfig) -> Result<Vec<String>> {
    let id = r.peptide.id().to_string();
    let s = r.mic_score.ok_or(Error::MissingField {
        id: id.clone(),
        field: "mic_score",
    })?;
    let mut reasons = Vec::new();
    if s < cfg.mic_cutoff {
        reasons.push("mic_score".to_string());
    }
    if r.peptide.len() > cfg.max_length {
        reasons.push("length".into());
    }
    for ((name, window), v) in cfg.windows.checks().into_iter().zip(property_values(&r.properties)) {
        if let Some([lo, hi]) = window {
            if !(lo..=hi).contains(&v) {
                reasons.push(name.into());
            }
        }
    }
    for m in &cfg.forbidden_motifs {
        if r.peptide.residues().contains(m.as_str()) {
            reasons.push(format!("motif:{m}"));
        }
    }
    for f in &cfg.external_filters {
        let v = *r
            .external_scores
            .get(&f.name)
            .ok_or_else(|| Error::Config(format!("record {id} has no external score '{}'", f.name)))?;
        if f.min.is_some_and(|m| v < m) || f.max.is_some_and(|m| v > m) {
            reasons.push(format!("external:{}", f.name));
        }
    }
    Ok(reasons)
}

/// Splits records into kept and rejected, setting each verdict.
pub fn screen(records: Vec<AnnotationRecord>, cfg: &ScreenConfig) -> Result<(Vec<AnnotationRecord>, Vec<AnnotationRecord>)> {
    cfg.validate()?;
    let (mut kept, mut rejected) = (Vec::new(), Vec::new());
    for mut r in records {
        r.verdict = Verdict::from_reasons(reject_reasons(&r, cfg)?);
        if r.verdict.is_kept() {
            kept.push(r);
        } else {
            rejected.push(r);
        }
    }
    Ok((kept, rejected))
}

/// One row of the similarity-search report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityHit {
    pub query: String,
    pub target: String,
    pub identity: f64,
    pub length: usize,
    /// Approximate; derived from generic Karlin–Altschul constants.
    pub evalue: f64,
    pub bits: f64,
}

pub const HIT_COLUMNS: [&str; 6] = ["Query", "Target", "%Identity", "Length", "E-value", "Bits"];

/// Fixed decimals with trailing zeros dropped: 100.000 -> "100", 95.4545 -> "95.455".
fn trimmed(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Plain decimals down to 0.01, scientific with a two-digit exponent below.
fn format_evalue(e: f64) -> String {
    if e >= 0.01 || e == 0.0 {
        return trimmed(e, 2);
    }
    let sci = format!("{e:.2E}");
    match sci.split_once('E') {
        Some((m, exp)) => {
            let (sign, digits) = exp.strip_prefix('-').map_or(("+", exp), |d| ("-", d));
            format!("{m}E{sign}{digits:0>2}")
        }
        None => sci,
    }
}

pub fn write_hits<W: Write>(mut w: W, hits: &[SimilarityHit]) -> Result<()> {
    writeln!(w, "{}", HIT_COLUMNS.join("\t"))?;
    for h in hits {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            h.query,
            h.target,
            trimmed(h.identity, 3),
            h.length,
            format_evalue(h.evalue),
            trimmed(h.bits, 1)
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoveltyOutcome {
    pub kept: Vec<AnnotationRecord>,
    pub removed: Vec<AnnotationRecord>,
    /// Reported hits, grouped by candidate in input order, best bits first.
    pub hits: Vec<SimilarityHit>,
}

/// Removes candidates with a reference match spanning more than
/// `coverage·|candidate|` alignment columns at ≥ `identity` percent.
/// Kept records gain a `ref_identity` score (0 without any hit).
pub fn novelty_filter(
    candidates: Vec<AnnotationRecord>,
    reference: &[Peptide],
    cfg: &ScreenConfig,
) -> Result<NoveltyOutcome> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("reference set".into()));
    }
    let db_len: usize = reference.iter().map(Peptide::len).sum();
    let nov = &cfg.novelty;
    let mut out = NoveltyOutcome {
        kept: Vec::new(),
        removed: Vec::new(),
        hits: Vec::new(),
    };
    for mut rec in candidates {
        let q = &rec.peptide;
        let mut best: Option<(i32, f64)> = None;
        let mut novel = true;
        let mut row: Vec<SimilarityHit> = Vec::new();
        for t in reference {
            let Some(al) = align_local(q, t, &cfg.scoring) else {
                continue;
            };
            if al.length as f64 > nov.coverage * q.len() as f64 && al.identity >= nov.identity {
                novel = false;
            }
            if best.is_none_or(|(s, _)| al.score > s) {
                best = Some((al.score, al.identity));
            }
            let evalue = cfg.scoring.evalue(al.score, q.len(), db_len);
            if evalue <= nov.max_evalue {
                row.push(SimilarityHit {
                    query: q.id().to_string(),
                    target: t.id().to_string(),
                    identity: al.identity,
                    length: al.length,
                    evalue,
                    bits: cfg.scoring.bits(al.score),
                });
            }
        }
        // Stable: equal bits keep reference order.
        row.sort_by(|a, b| b.bits.total_cmp(&a.bits));
        out.hits.extend(row);
        let identity = best.map_or(0.0, |(_, id)| id);
        rec.external_scores.insert(REF_IDENTITY_KEY.into(), identity);
        if novel {
            out.kept.push(rec);
        } else {
            let mut reasons = rec.verdict.reasons().to_vec();
            reasons.push("novelty".into());
            rec.verdict = Verdict::Rejected(reasons);
            out.removed.push(rec);
        }
    }
    Ok(out)
}

fn windows_satisfied(p: &PropertyVector, w: &ClampRanges) -> usize {
    let ranges = [w.hydrophobicity, w.hydrophobic_moment, w.net_charge, w.isoelectric_point];
    ranges
        .iter()
        .zip(property_values(p))
        .filter(|([lo, hi], v)| (*lo..=*hi).contains(v))
        .count()
}

/// Total order: MIC score descending, then satisfied windows descending,
/// then reference identity ascending, then sequence, then id.
pub fn prioritize(mut records: Vec<AnnotationRecord>, windows: &ClampRanges) -> Result<Vec<AnnotationRecord>> {
    for r in &records {
        if r.mic_score.is_none() {
            return Err(Error::MissingField {
                id: r.peptide.id().to_string(),
                field: "mic_score",
            });
        }
    }
    let ident = |r: &AnnotationRecord| r.external_scores.get(REF_IDENTITY_KEY).copied().unwrap_or(0.0);
    records.sort_by(|a, b| {
        let (sa, sb) = (a.mic_score.unwrap_or(0.0), b.mic_score.unwrap_or(0.0));
        sb.total_cmp(&sa)
            .then_with(|| windows_satisfied(&b.properties, windows).cmp(&windows_satisfied(&a.properties, windows)))
            .then_with(|| ident(a).total_cmp(&ident(b)))
            .then_with(|| a.peptide.residues().cmp(b.peptide.residues()))
            .then_with(|| a.peptide.id().cmp(b.peptide.id()))
    });
    Ok(records)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Greedy max–min selection on precomputed points, starting from index 0.
/// Ties go to the lowest index. Returns chosen indices in pick order.
pub fn farthest_point_indices(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    if points.is_empty() || k == 0 {
        return Vec::new();
    }
    let mut chosen = vec![0];
    let mut nearest: Vec<f64> = points.iter().map(|p| distance(p, &points[0])).collect();
    while chosen.len() < k.min(points.len()) {
        let mut best: Option<(usize, f64)> = None;
        for (i, &d) in nearest.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|(_, bd)| d.partial_cmp(&bd) == Some(Ordering::Greater)) {
                best = Some((i, d));
            }
        }
        let (next, _) = best.expect("unchosen point remains");
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(distance(p, &points[next]));
        }
    }
    chosen
}

/// Picks `min(k, n)` records spread out in standardised builtin-feature
/// space, seeded with the first (highest-priority) record.
pub fn diversity_select(records: &[AnnotationRecord], k: usize, scale: &ScaleTable) -> Result<Vec<AnnotationRecord>> {
    if k == 0 {
        return Err(Error::Config("diversity k must be at least 1".into()));
    }
    if records.len() <= k {
        return Ok(records.to_vec());
    }
    let emb = Embedder::Builtin(scale.clone());
    let mut points: Vec<Vec<f64>> = records
        .iter()
        .map(|r| emb.embed(&r.peptide))
        .collect::<Result<_>>()?;
    let st = Standardizer::fit(&points)?;
    points.iter_mut().for_each(|p| st.apply(p));
    Ok(farthest_point_indices(&points, k)
        .into_iter()
        .map(|i| records[i].clone())
        .collect())
}

/// Annotates a peptide with descriptors and an activity score.
pub fn annotate(
    p: Peptide,
    scorer: &dyn ActivityScorer,
    scale: &ScaleTable,
    external: &BTreeMap<String, BTreeMap<String, f64>>,
) -> Result<AnnotationRecord> {
    let s = scorer.activity(&p)?;
    Ok(AnnotationRecord {
        properties: descriptor_vector(&p, scale),
        mic_score: Some(s),
        external_scores: external.get(p.residues()).cloned().unwrap_or_default(),
        verdict: Verdict::Kept,
        peptide: p,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LibraryConfig {
    pub target_count: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub sampling: SamplingConfig,
    /// Samples considered when checking for stagnation.
    pub stagnation_window: usize,
    /// Abort when the duplicate rate within the window exceeds this.
    pub max_duplicate_rate: f64,
    /// Give up after this many samples in total.
    pub max_samples: usize,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        Self {
            target_count: 1000,
            min_len: 8,
            max_len: 50,
            sampling: SamplingConfig::default(),
            stagnation_window: 1000,
            max_duplicate_rate: 0.99,
            max_samples: 10_000_000,
        }
    }
}

/// Count of items entering a filter and how many passed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCount {
    pub filter: String,
    pub passed: usize,
    pub failed: usize,
}

impl FilterCount {
    pub fn total(&self) -> usize {
        self.passed + self.failed
    }

    pub fn pass_ratio(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.passed as f64 / self.total() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LibraryStats {
    pub total_sampled: usize,
    /// Sequential generation filters; each stage sees what the previous passed.
    pub generation: Vec<FilterCount>,
    /// Screening criteria evaluated independently on every library record.
    pub screening: Vec<FilterCount>,
    pub screen_kept: usize,
}

impl LibraryStats {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "stage\tfilter\tinput\tpassed\tfailed\tpass_ratio")?;
        for (stage, rows) in [("generation", &self.generation), ("screening", &self.screening)] {
            for f in rows {
                writeln!(
                    w,
                    "{stage}\t{}\t{}\t{}\t{}\t{:.6}",
                    f.filter,
                    f.total(),
                    f.passed,
                    f.failed,
                    f.pass_ratio()
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Library {
    /// Unique, length-valid, annotated sequences in acceptance order, each
    /// carrying its screening verdict.
    pub records: Vec<AnnotationRecord>,
    pub stats: LibraryStats,
}

pub struct LibrarySources<'a> {
    pub policy: &'a PolicyModel,
    pub scorer: &'a dyn ActivityScorer,
    pub scale: &'a ScaleTable,
    pub external: &'a BTreeMap<String, BTreeMap<String, f64>>,
    pub source: Source,
}

fn screening_names(cfg: &ScreenConfig) -> Vec<String> {
    let mut names = vec!["mic_score".to_string(), "length".into()];
    for (name, w) in cfg.windows.checks() {
        if w.is_some() {
            names.push(name.into());
        }
    }
    names.extend(cfg.forbidden_motifs.iter().map(|m| format!("motif:{m}")));
    names.extend(cfg.external_filters.iter().map(|f| format!("external:{}", f.name)));
    names
}

/// Samples until `target_count` unique, length-valid sequences exist, then
/// annotates and screens them.
pub fn build_library(src: &LibrarySources, lib: &LibraryConfig, screen_cfg: &ScreenConfig, seed: u64) -> Result<Library> {
    screen_cfg.validate()?;
    lib.sampling.validate()?;
    if lib.min_len == 0 || lib.min_len > lib.max_len {
        return Err(Error::Config("library length bounds are invalid".into()));
    }
    let inf = InferenceModel::new(src.policy)?;
    let mut rng = substream(seed, "library");
    let mut seen: HashSet<String> = HashSet::new();
    let mut accepted: Vec<Peptide> = Vec::new();
    let (mut total, mut empty, mut bad_len, mut dup) = (0usize, 0usize, 0usize, 0usize);
    let mut window: VecDeque<bool> = VecDeque::with_capacity(lib.stagnation_window);
    let mut window_dups = 0usize;
    while accepted.len() < lib.target_count {
        if total >= lib.max_samples {
            return Err(Error::Stagnation(format!(
                "{} of {} unique sequences after {total} samples",
                accepted.len(),
                lib.target_count
            )));
        }
        let s = inf.sample_one(&lib.sampling, &mut rng)?;
        total += 1;
        let residues = s.residues();
        let mut is_dup = false;
        if residues.is_empty() {
            empty += 1;
        } else if !(lib.min_len..=lib.max_len).contains(&residues.len()) {
            bad_len += 1;
        } else {
            let p = actions_to_peptide(format!("lib_{:07}", accepted.len() + 1), residues, src.source)?;
            if seen.insert(p.residues().to_string()) {
                accepted.push(p);
            } else {
                dup += 1;
                is_dup = true;
            }
        }
        if lib.stagnation_window > 0 {
            window.push_back(is_dup);
            window_dups += usize::from(is_dup);
            if window.len() > lib.stagnation_window {
                window_dups -= usize::from(window.pop_front().unwrap_or(false));
            }
            if window.len() == lib.stagnation_window
                && window_dups as f64 / lib.stagnation_window as f64 > lib.max_duplicate_rate
            {
                return Err(Error::Stagnation(format!(
                    "{window_dups} of the last {} samples were duplicates; {} unique of {} requested after {total} samples",
                    lib.stagnation_window,
                    accepted.len(),
                    lib.target_count
                )));
            }
        }
    }
    let after_empty = total - empty;
    let after_len = after_empty - bad_len;
    let generation = vec![
        FilterCount {
            filter: "non_empty".into(),
            passed: after_empty,
            failed: empty,
        },
        FilterCount {
            filter: "length".into(),
            passed: after_len,
            failed: bad_len,
        },
        FilterCount {
            filter: "unique".into(),
            passed: after_len - dup,
            failed: dup,
        },
    ];
    let mut records = Vec::with_capacity(accepted.len());
    for p in accepted {
        let mut r = annotate(p, src.scorer, src.scale, src.external)?;
        r.verdict = Verdict::from_reasons(reject_reasons(&r, screen_cfg)?);
        records.push(r);
    }
    let screening = screening_names(screen_cfg)
        .into_iter()
        .map(|name| {
            let failed = records.iter().filter(|r| r.verdict.reasons().contains(&name)).count();
            FilterCount {
                filter: name,
                passed: records.len() - failed,
                failed,
            }
        })
        .collect();
    let screen_kept = records.iter().filter(|r| r.verdict.is_kept()).count();
    Ok(Library {
        records,
        stats: LibraryStats {
            total_sampled: total,
            generation,
            screening,
            screen_kept,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq::validate_sequence;

    fn rec(seq: &str, s: f64) -> AnnotationRecord {
        let p = validate_sequence(seq).unwrap().with_id(format!("c_{seq}"));
        AnnotationRecord {
            properties: descriptor_vector(&p, &ScaleTable::default()),
            mic_score: Some(s),
            external_scores: BTreeMap::new(),
            verdict: Verdict::Kept,
            peptide: p,
        }
    }

    #[test]
    fn screen_reasons() {
        let cfg = ScreenConfig::default();
        let (kept, rejected) = screen(
            vec![rec("KKLLKKLLKK", 0.39), rec(&"K".repeat(55), 0.9), rec("KKLLKKLLKK", 0.4)],
            &cfg,
        )
        .unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].verdict.reasons(), &[] as &[String]);
        assert_eq!(rejected[0].verdict.reasons(), &["mic_score".to_string()]);
        assert_eq!(rejected[1].verdict.reasons(), &["length".to_string()]);
        let mut missing = rec("KK", 0.5);
        missing.mic_score = None;
        assert!(matches!(screen(vec![missing], &cfg), Err(Error::MissingField { .. })));
    }

    #[test]
    fn all_failures_are_listed() {
        let cfg = ScreenConfig {
            windows: PropertyWindows {
                net_charge: Some([0.0, 5.0]),
                ..Default::default()
            },
            forbidden_motifs: vec!["KKK".into()],
            ..ScreenConfig::default()
        };
        let (_, rejected) = screen(vec![rec(&"K".repeat(55), 0.1)], &cfg).unwrap();
        assert_eq!(rejected[0].verdict.reasons(), &["mic_score", "length", "net_charge", "motif:KKK"]);
    }

    #[test]
    fn prioritize_tie_breaks() {
        let w = ClampRanges::default();
        let ranked = prioritize(vec![rec("KKLLKKLL", 0.6), rec("GGKKLLWW", 0.8)], &w).unwrap();
        assert_eq!(ranked[0].mic_score, Some(0.8));
        // Same score: the record satisfying more windows ranks first.
        let inside = rec("KKLLKKLLRKWL", 0.7);
        let outside = rec("DDEEDDEE", 0.7);
        assert!(windows_satisfied(&inside.properties, &w) > windows_satisfied(&outside.properties, &w));
        let ranked = prioritize(vec![outside.clone(), inside.clone()], &w).unwrap();
        assert_eq!(ranked[0], inside);
    }

    #[test]
    fn diversity_picks_distinct_second() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![3.0, 4.0]];
        assert_eq!(farthest_point_indices(&pts, 2), vec![0, 2]);
        let recs = vec![rec("KKLLKKLL", 0.9), rec("KKLLKKLL", 0.9), rec("DDEESSGG", 0.9)];
        let picked = diversity_select(&recs, 2, &ScaleTable::default()).unwrap();
        assert_eq!(picked[1].peptide.residues(), "DDEESSGG");
        assert_eq!(diversity_select(&recs, 5, &ScaleTable::default()).unwrap().len(), 3);
    }

    #[test]
    fn hit_table_header() {
        let mut buf = Vec::new();
        write_hits(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "Query\tTarget\t%Identity\tLength\tE-value\tBits\n");
        assert_eq!(trimmed(100.0, 3), "100");
        assert_eq!(trimmed(95.454545, 3), "95.455");
        assert_eq!(trimmed(42.0, 1), "42");
        assert_eq!(format_evalue(3.54e-7), "3.54E-07");
        assert_eq!(format_evalue(0.49), "0.49");
        assert_eq!(format_evalue(1.0), "1");
        assert_eq!(format_evalue(7.02e-4), "7.02E-04");
    }
}
