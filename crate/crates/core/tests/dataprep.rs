use std::collections::BTreeMap;

use ampforge::align::{global_identity, Scoring};
use ampforge::dataprep::{balance, greedy_cluster, length_filter, split_by_cluster, Cluster};
use ampforge::rng::substream;
use ampforge::seq::{validate_sequence, Peptide};
use ampforge_testkit::random_peptide;
use proptest::prelude::*;
use rand::Rng;

fn pep(id: impl Into<String>, s: &str) -> Peptide {
    validate_sequence(s).unwrap().with_id(id)
}

/// Families of point-mutated copies around a few random parents.
fn families(seed: u64, parents: usize, per: usize) -> Vec<Peptide> {
    let mut rng = substream(seed, "families");
    let mut out = Vec::new();
    for f in 0..parents {
        let len = rng.random_range(12..30);
        let parent = random_peptide(&mut rng, len).into_bytes();
        for m in 0..per {
            let mut child = parent.clone();
            for _ in 0..rng.random_range(0..4) {
                let at = rng.random_range(0..child.len());
                child[at] = ampforge_testkit::RESIDUES[rng.random_range(0..20)];
            }
            out.push(pep(format!("f{f}_{m}"), std::str::from_utf8(&child).unwrap()));
        }
    }
    out
}

#[test]
fn length_filter_partitions_input() {
    let mut rng = substream(1, "lengths");
    let input: Vec<Peptide> = (0..80)
        .map(|i| pep(format!("p{i}"), &random_peptide(&mut rng, 1 + i % 60)))
        .collect();
    let (kept, rejected) = length_filter(input.clone(), 8, 50).unwrap();
    assert!(kept.iter().all(|p| (8..=50).contains(&p.len())));
    assert!(rejected.iter().all(|p| !(8..=50).contains(&p.len())));
    let mut all: Vec<_> = kept.iter().chain(&rejected).map(|p| p.id().to_string()).collect();
    all.sort();
    let mut want: Vec<_> = input.iter().map(|p| p.id().to_string()).collect();
    want.sort();
    assert_eq!(all, want);
    assert!(length_filter(input, 9, 8).is_err());
}

#[test]
fn clusters_partition_and_respect_threshold() {
    let sc = Scoring::default();
    let input = families(2, 6, 5);
    let clusters = greedy_cluster(&input, 0.4, &sc).unwrap();
    assert_eq!(clusters.iter().map(Cluster::len).sum::<usize>(), input.len());
    let mut ids: Vec<&str> = clusters.iter().flat_map(|c| c.members.iter().map(|p| p.id())).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), input.len());
    for (k, c) in clusters.iter().enumerate() {
        assert_eq!(c.members[0], c.representative);
        for m in &c.members {
            assert!(global_identity(&c.representative, m, &sc) >= 0.4);
        }
        // A founder matched no earlier representative.
        for earlier in &clusters[..k] {
            assert!(global_identity(&earlier.representative, &c.representative, &sc) < 0.4);
        }
    }
    // Mutated families stay together.
    assert!(clusters.len() <= 6);
}

#[test]
fn clustering_ignores_input_order() {
    let sc = Scoring::default();
    let input = families(3, 4, 4);
    let mut rev = input.clone();
    rev.reverse();
    assert_eq!(greedy_cluster(&input, 0.4, &sc).unwrap(), greedy_cluster(&rev, 0.4, &sc).unwrap());
}

fn synthetic_clusters(sizes: &[usize]) -> Vec<Cluster> {
    let mut rng = substream(4, "synthetic");
    sizes
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let members: Vec<Peptide> = (0..n)
                .map(|m| pep(format!("c{c}_{m}"), &random_peptide(&mut rng, 10)))
                .collect();
            Cluster {
                representative: members[0].clone(),
                members,
            }
        })
        .collect()
}

#[test]
fn split_counts_within_largest_cluster_of_targets() {
    // 38,623 members in clusters of 1..=24.
    let mut rng = substream(5, "sizes");
    let mut sizes = Vec::new();
    let mut total = 0;
    while total < 38_623 {
        let s = rng.random_range(1..=24usize).min(38_623 - total);
        sizes.push(s);
        total += s;
    }
    let largest = *sizes.iter().max().unwrap() as f64;
    let clusters = synthetic_clusters(&sizes);
    let splits = split_by_cluster(clusters.clone(), [0.8, 0.1, 0.1], 6).unwrap();
    let counts = splits.member_counts();
    assert_eq!(counts.iter().sum::<usize>(), 38_623);
    for (c, t) in counts.iter().zip([30_898.4, 3_862.3, 3_862.3]) {
        assert!((*c as f64 - t).abs() <= largest, "count {c} vs target {t}");
    }
    let again = split_by_cluster(clusters, [0.8, 0.1, 0.1], 6).unwrap();
    assert_eq!(again, splits);
}

#[test]
fn no_cluster_straddles_splits() {
    let sc = Scoring::default();
    let clusters = greedy_cluster(&families(7, 12, 3), 0.4, &sc).unwrap();
    let splits = split_by_cluster(clusters.clone(), [0.8, 0.1, 0.1], 8).unwrap();
    let mut home: BTreeMap<String, usize> = BTreeMap::new();
    for (s, part) in splits.parts().iter().enumerate() {
        for c in part.iter() {
            for m in &c.members {
                assert!(home.insert(m.id().to_string(), s).is_none());
            }
        }
    }
    for c in &clusters {
        let s = home[c.members[0].id()];
        assert!(c.members.iter().all(|m| home[m.id()] == s));
    }
    assert!(splits.parts().iter().all(|p| !p.is_empty()));
}

#[test]
fn single_cluster_lands_in_one_split() {
    let clusters = synthetic_clusters(&[7]);
    let splits = split_by_cluster(clusters, [1.0, 0.0, 0.0], 1).unwrap();
    assert_eq!(splits.member_counts(), [7, 0, 0]);
    assert!(split_by_cluster(synthetic_clusters(&[7]), [0.8, 0.1, 0.1], 1).is_err());
}

#[test]
fn balance_downsamples_majority_per_bin() {
    let mut rng = substream(9, "balance");
    let lens: Vec<usize> = (0..100).map(|_| rng.random_range(10..40)).collect();
    let pos: Vec<Peptide> = lens
        .iter()
        .enumerate()
        .map(|(i, &l)| pep(format!("pos{i}"), &random_peptide(&mut rng, l)))
        .collect();
    let neg: Vec<Peptide> = (0..300)
        .map(|i| pep(format!("neg{i}"), &random_peptide(&mut rng, lens[i % 100])))
        .collect();
    let (set, report) = balance(&pos, &neg, 5, 3).unwrap();
    assert_eq!((report.positives, report.negatives), (100, 100));
    assert!(report.dropped_bins.is_empty());
    let mut bins: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for lp in &set {
        let e = bins.entry(lp.peptide.len() / 5).or_default();
        if lp.active {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    assert!(bins.values().all(|(p, n)| p == n));
    assert_eq!(balance(&pos, &neg, 5, 3).unwrap().0, set);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_partition(sizes in prop::collection::vec(1usize..30, 3..40), seed in 0u64..100) {
        let total: usize = sizes.iter().sum();
        let largest = *sizes.iter().max().unwrap() as f64;
        let splits = split_by_cluster(synthetic_clusters(&sizes), [0.8, 0.1, 0.1], seed).unwrap();
        let counts = splits.member_counts();
        prop_assert_eq!(counts.iter().sum::<usize>(), total);
        prop_assert_eq!(splits.parts().iter().map(|p| p.len()).sum::<usize>(), sizes.len());
        prop_assert!(splits.parts().iter().all(|p| !p.is_empty()));
        // Greedy fill keeps every split within one cluster of its target;
        // the empty-split repair cannot trigger once each target exceeds
        // the largest cluster.
        if 0.1 * total as f64 >= largest {
            for (c, f) in counts.iter().zip([0.8, 0.1, 0.1]) {
                prop_assert!((*c as f64 - f * total as f64).abs() <= largest);
            }
        }
    }
}
