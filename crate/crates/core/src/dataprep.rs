//! Dataset curation: length filtering, identity clustering, cluster-level
//! splits and length-stratified class balancing.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::align::{global_identity, Scoring};
use crate::mic::LabeledPeptide;
use crate::rng::substream;
use crate::seq::Peptide;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataprepConfig {
    pub min_len: usize,
    pub max_len: usize,
    /// Length floor for the labelled classifier data.
    pub classifier_min_len: usize,
    pub identity_threshold: f64,
    /// Train / validation / test member fractions.
    pub fractions: [f64; 3],
    pub balance: bool,
    pub balance_bin_width: usize,
    pub scoring: Scoring,
}

impl Default for DataprepConfig {
    fn default() -> Self {
        Self {
            min_len: 8,
            max_len: 50,
            classifier_min_len: 12,
            identity_threshold: 0.40,
            fractions: [0.8, 0.1, 0.1],
            balance: true,
            balance_bin_width: 5,
            scoring: Scoring::default(),
        }
    }
}

impl DataprepConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.min_len > self.max_len || self.classifier_min_len > self.max_len {
            bad.push("length floors must not exceed max_len".to_string());
        }
        if !(self.identity_threshold > 0.0 && self.identity_threshold <= 1.0) {
            bad.push("identity_threshold must lie in (0, 1]".into());
        }
        if let Err(e) = check_fractions(&self.fractions) {
            bad.push(e.to_string());
        }
        if self.balance_bin_width == 0 {
            bad.push("balance_bin_width must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Keeps peptides with `min_len ≤ length ≤ max_len`; order is preserved in
/// both outputs.
pub fn length_filter(peptides: Vec<Peptide>, min_len: usize, max_len: usize) -> Result<(Vec<Peptide>, Vec<Peptide>)> {
    if min_len > max_len {
        return Err(Error::Config(format!("length filter min {min_len} exceeds max {max_len}")));
    }
    Ok(peptides
        .into_iter()
        .partition(|p| (min_len..=max_len).contains(&p.len())))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    pub representative: Peptide,
    /// All members, representative first.
    pub members: Vec<Peptide>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Longest-first greedy clustering: each peptide joins the first
/// representative with global-alignment identity ≥ `threshold`, otherwise
/// it founds a new cluster. Length ties are ordered by sequence, then id.
pub fn greedy_cluster(peptides: &[Peptide], threshold: f64, scoring: &Scoring) -> Result<Vec<Cluster>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("identity threshold {threshold} is outside (0, 1]")));
    }
    let mut order: Vec<&Peptide> = peptides.iter().collect();
    order.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then_with(|| a.residues().cmp(b.residues()))
            .then_with(|| a.id().cmp(b.id()))
    });
    let mut clusters: Vec<Cluster> = Vec::new();
    for p in order {
        // Identity ≤ matches/columns ≤ |p| / |rep|, so far shorter sequences
        // can be skipped without aligning.
        let home = clusters.iter_mut().find(|c| {
            let rep = &c.representative;
            p.len() as f64 / rep.len() as f64 >= threshold && global_identity(rep, p, scoring) >= threshold
        });
        match home {
            Some(c) => c.members.push(p.clone()),
            None => clusters.push(Cluster {
                representative: p.clone(),
                members: vec![p.clone()],
            }),
        }
    }
    Ok(clusters)
}

/// Builds clusters from an external `(sequence_id, cluster_id)` table. The
/// longest member (ties: sequence order) represents each cluster; clusters
/// are ordered by cluster id.
pub fn clusters_from_assignments(peptides: &[Peptide], assignments: &BTreeMap<String, String>) -> Result<Vec<Cluster>> {
    let mut groups: BTreeMap<&str, Vec<Peptide>> = BTreeMap::new();
    for p in peptides {
        let cid = assignments.get(p.id()).ok_or_else(|| Error::MissingField {
            id: p.id().to_string(),
            field: "cluster_id",
        })?;
        groups.entry(cid.as_str()).or_default().push(p.clone());
    }
    Ok(groups
        .into_values()
        .map(|mut members| {
            members.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.residues().cmp(b.residues())));
            Cluster {
                representative: members[0].clone(),
                members,
            }
        })
        .collect())
}

/// Parses `sequence_id<TAB>cluster_id` rows; a `sequence_id` header is skipped.
pub fn read_cluster_assignments(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.starts_with("sequence_id")) {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 2 {
            return Err(Error::Parse {
                line: i + 1,
                message: "expected sequence_id<TAB>cluster_id".into(),
            });
        }
        out.insert(cells[0].trim().to_string(), cells[1].trim().to_string());
    }
    Ok(out)
}

fn check_fractions(f: &[f64; 3]) -> Result<()> {
    if f.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions {f:?} must be in [0, 1] and sum to 1")));
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Cluster>,
    pub val: Vec<Cluster>,
    pub test: Vec<Cluster>,
}

impl Splits {
    pub fn parts(&self) -> [&Vec<Cluster>; 3] {
        [&self.train, &self.val, &self.test]
    }

    pub fn member_counts(&self) -> [usize; 3] {
        self.parts().map(|p| p.iter().map(Cluster::len).sum())
    }

    /// Members of one split in cluster order.
    pub fn members(part: &[Cluster]) -> Vec<Peptide> {
        part.iter().flat_map(|c| c.members.iter().cloned()).collect()
    }
}

/// Assigns whole clusters to splits: seeded shuffle, then each cluster goes
/// to the split furthest below its target member count. A non-empty split
/// left without clusters takes the smallest cluster from the split holding
/// the most clusters.
pub fn split_by_cluster(clusters: Vec<Cluster>, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    check_fractions(&fractions)?;
    let wanted = fractions.iter().filter(|&&f| f > 0.0).count();
    if clusters.len() < wanted {
        return Err(Error::Config(format!(
            "{} clusters cannot fill {wanted} non-empty splits",
            clusters.len()
        )));
    }
    let total: usize = clusters.iter().map(Cluster::len).sum();
    let targets = fractions.map(|f| f * total as f64);
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.shuffle(&mut substream(seed, "cluster_split"));
    let mut bins: [Vec<usize>; 3] = Default::default();
    let mut counts = [0usize; 3];
    for &c in &order {
        let mut best = None;
        for s in 0..3 {
            if fractions[s] == 0.0 {
                continue;
            }
            let deficit = targets[s] - counts[s] as f64;
            if best.is_none_or(|(_, d)| deficit > d) {
                best = Some((s, deficit));
            }
        }
        let (s, _) = best.expect("some fraction is positive");
        bins[s].push(c);
        counts[s] += clusters[c].len();
    }
    for s in 0..3 {
        if fractions[s] > 0.0 && bins[s].is_empty() {
            let donor = (0..3).max_by_key(|&d| (bins[d].len(), std::cmp::Reverse(d))).expect("three splits");
            let (pos, _) = bins[donor]
                .iter()
                .enumerate()
                .min_by_key(|(_, &c)| clusters[c].len())
                .expect("donor has clusters");
            let c = bins[donor].remove(pos);
            bins[s].push(c);
        }
    }
    let mut slots: Vec<Option<Cluster>> = clusters.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| ids.iter().map(|&i| slots[i].take().expect("assigned once")).collect();
    Ok(Splits {
        train: take(&bins[0]),
        val: take(&bins[1]),
        test: take(&bins[2]),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    /// Length bins (lower bound) dropped for lacking one class.
    pub dropped_bins: Vec<usize>,
    pub positives: usize,
    pub negatives: usize,
}

/// Downsamples within length bins of `bin_width` residues so that each
/// retained bin holds equally many actives and inactives. Output is
/// shuffled.
pub fn balance(
    positives: &[Peptide],
    negatives: &[Peptide],
    bin_width: usize,
    seed: u64,
) -> Result<(Vec<LabeledPeptide>, BalanceReport)> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::EmptyInput("balancing needs both positives and negatives".into()));
    }
    if bin_width == 0 {
        return Err(Error::Config("bin width must be positive".into()));
    }
    let mut bins: BTreeMap<usize, (Vec<&Peptide>, Vec<&Peptide>)> = BTreeMap::new();
    for p in positives {
        bins.entry(p.len() / bin_width).or_default().0.push(p);
    }
    for p in negatives {
        bins.entry(p.len() / bin_width).or_default().1.push(p);
    }
    let mut rng = substream(seed, "balance");
    let mut out = Vec::new();
    let mut report = BalanceReport::default();
    for (bin, (mut pos, mut neg)) in bins {
        let keep = pos.len().min(neg.len());
        if keep == 0 {
            log::warn!(
                "length bin {}-{} has {} actives and {} inactives; dropped",
                bin * bin_width,
                bin * bin_width + bin_width - 1,
                pos.len(),
                neg.len()
            );
            report.dropped_bins.push(bin * bin_width);
            continue;
        }
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        out.extend(pos[..keep].iter().map(|p| LabeledPeptide {
            peptide: (*p).clone(),
            active: true,
        }));
        out.extend(neg[..keep].iter().map(|p| LabeledPeptide {
            peptide: (*p).clone(),
            active: false,
        }));
        report.positives += keep;
        report.negatives += keep;
    }
    out.shuffle(&mut rng);
    Ok((out, report))
}
