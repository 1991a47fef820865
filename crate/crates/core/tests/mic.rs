use std::io::Write;

use ampforge::mic::{
    auroc, focal_loss, read_labeled, train, write_labeled, Embedder, LabeledPeptide, MicConfig, MicModel,
};
use ampforge::physchem::ScaleTable;
use ampforge::rng::substream;
use ampforge::seq::{validate_sequence, Source};
use ampforge_testkit::{auroc_pairwise, random_peptide, separable_labeled_set};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn labeled(rows: Vec<(String, bool)>) -> Vec<LabeledPeptide> {
    rows.into_iter()
        .enumerate()
        .map(|(i, (s, active))| LabeledPeptide {
            peptide: validate_sequence(&s).unwrap().with_id(format!("l{i}")),
            active,
        })
        .collect()
}

fn small_config() -> MicConfig {
    MicConfig {
        hidden: vec![32, 8],
        epochs: 15,
        patience: 4,
        ..MicConfig::default()
    }
}

#[test]
fn separable_set_is_learned() {
    let tr = labeled(separable_labeled_set(300, 300, 1));
    let va = labeled(separable_labeled_set(100, 100, 2));
    let te = labeled(separable_labeled_set(200, 200, 3));
    let (model, hist) = train(Embedder::Builtin(ScaleTable::default()), &tr, &va, &small_config(), 4).unwrap();
    let m = model.evaluate(&te).unwrap();
    assert!(m.auroc.unwrap() > 0.95, "{m:?}");
    assert!(hist.best_epoch < hist.train_loss.len());
    assert_eq!(m.tp + m.fp + m.tn + m.fn_, te.len());
}

#[test]
fn shuffled_labels_give_chance_auroc() {
    let mut rng = substream(5, "shuffle_labels");
    let mut all = separable_labeled_set(1000, 1000, 6);
    let mut labels: Vec<bool> = all.iter().map(|(_, y)| *y).collect();
    labels.shuffle(&mut rng);
    for (row, y) in all.iter_mut().zip(labels) {
        row.1 = y;
    }
    let set = labeled(all);
    let (tr, rest) = set.split_at(1000);
    let (va, te) = rest.split_at(200);
    let (model, _) = train(Embedder::Builtin(ScaleTable::default()), tr, va, &small_config(), 7).unwrap();
    let a = model.evaluate(te).unwrap().auroc.unwrap();
    assert!((a - 0.5).abs() <= 0.05, "auroc {a}");
}

#[test]
fn external_embeddings_drive_training() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.jsonl");
    let tr = labeled(separable_labeled_set(60, 60, 8));
    let va = labeled(separable_labeled_set(20, 20, 9));
    let mut f = std::fs::File::create(&path).unwrap();
    for lp in tr.iter().chain(&va) {
        let s = lp.peptide.residues();
        let k = s.bytes().filter(|b| b"KRLWIFAV".contains(b)).count() as f64 / s.len() as f64;
        writeln!(f, "{}", serde_json::json!({"sequence": s, "vector": [k, 1.0 - k, 0.5]})).unwrap();
    }
    drop(f);
    let emb = Embedder::load_external(&path).unwrap();
    assert_eq!(emb.dim(), 3);
    let (model, _) = train(emb, &tr, &va, &small_config(), 10).unwrap();
    assert!(model.evaluate(&va).unwrap().auroc.unwrap() > 0.9);
    let saved = dir.path().join("mic.json");
    model.save(&saved).unwrap();
    let back = MicModel::load(&saved, None).unwrap();
    assert_eq!(back.score_all(&[va[0].peptide.clone()]).unwrap(), model.score_all(&[va[0].peptide.clone()]).unwrap());
    let unknown = validate_sequence("WWWWWWWWWWWW").unwrap();
    assert!(model.score(&unknown).is_err());
}

#[test]
fn labeled_tsv_round_trip() {
    let rows = labeled(separable_labeled_set(5, 5, 11));
    let mut buf = Vec::new();
    write_labeled(&mut buf, &rows).unwrap();
    let back = read_labeled(&buf[..]).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in back.iter().zip(&rows) {
        assert_eq!((a.peptide.residues(), a.active), (b.peptide.residues(), b.active));
        assert_eq!(a.peptide.source(), Source::default());
    }
    assert!(read_labeled("KKLL\tmaybe\n".as_bytes()).is_err());
}

#[test]
fn focal_gamma_zero_is_cross_entropy() {
    let mut rng = substream(12, "focal_batches");
    for _ in 0..100 {
        let n = rng.random_range(1..64);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(1e-6..1.0 - 1e-6)).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let ce = p
            .iter()
            .zip(&y)
            .map(|(&p, &y)| if y { -p.ln() } else { -(1.0 - p).ln() })
            .sum::<f64>()
            / n as f64;
        let fl = focal_loss(&p, &y, &vec![1.0; n], 0.0).unwrap();
        assert!((fl - ce).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn auroc_matches_pairwise_oracle(raw in prop::collection::vec((0u8..8, any::<bool>()), 2..=50)) {
        // Coarse scores force plenty of ties.
        let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 8.0).collect();
        let labels: Vec<bool> = raw.iter().map(|(_, y)| *y).collect();
        prop_assert_eq!(auroc(&scores, &labels), auroc_pairwise(&scores, &labels));
    }

    #[test]
    fn score_ignores_id_and_source(len in 1usize..40, seed in 0u64..50) {
        let mut rng = substream(seed, "score_ids");
        let s = random_peptide(&mut rng, len);
        let tr = labeled(separable_labeled_set(10, 10, 13));
        let model = model_for_ids(&tr);
        let a = validate_sequence(&s).unwrap().with_id("x");
        let b = validate_sequence(&s).unwrap().with_id("y").with_source(Source::GeneratedRl);
        prop_assert_eq!(model.score(&a).unwrap(), model.score(&b).unwrap());
    }
}

fn model_for_ids(tr: &[LabeledPeptide]) -> MicModel {
    let cfg = MicConfig {
        hidden: vec![4],
        epochs: 1,
        ..MicConfig::default()
    };
    train(Embedder::Builtin(ScaleTable::default()), tr, tr, &cfg, 14).unwrap().0
}
