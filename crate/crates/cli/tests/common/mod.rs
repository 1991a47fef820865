#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ampforge_testkit::{separable_labeled_set, MarkovChain};

pub fn ampforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ampforge"))
        .args(args)
        .current_dir(dir)
        .env_remove("AMPFORGE_OUT_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

/// Runs a command and panics with its stderr unless it succeeds.
pub fn ok(dir: &Path, args: &[&str]) {
    let out = ampforge(dir, args);
    assert!(
        out.status.success(),
        "ampforge {} failed ({:?}):\n{}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

pub const TOY_CONFIG: &str = r#"{
  "seed": 11,
  "paths": {"checkpoint_dir": "ckpt"},
  "policy": {"dim": 16, "layers": 1, "heads": 2, "ff_mult": 2},
  "sft": {"max_epochs": 2, "batch_size": 16},
  "sample": {"count": 30},
  "mic": {"hidden": [8], "epochs": 3, "batch_size": 16, "patience": 2},
  "ppo": {"actors": 8, "iterations": 2, "minibatch_size": 4, "epochs": 1},
  "library": {"target_count": 20}
}
"#;

/// Generator corpus, labelled classifier data, one-row-per-cluster
/// assignments for the labelled rows, and the toy config.
pub fn write_fixtures(dir: &Path) {
    let chain = MarkovChain::random(3, 0.05, 50);
    let mut fasta = String::new();
    for (i, s) in chain.corpus(150, 1).iter().enumerate() {
        fasta.push_str(&format!(">nat{i:04}\n{s}\n"));
    }
    std::fs::write(dir.join("corpus.fasta"), fasta).unwrap();
    let mut tsv = String::from("sequence\tlabel\n");
    let mut clusters = String::from("sequence_id\tcluster_id\n");
    for (i, (s, y)) in separable_labeled_set(80, 80, 2).iter().enumerate() {
        tsv.push_str(&format!("{s}\t{}\n", u8::from(*y)));
        // Labelled rows are named after their line (header is line 1).
        clusters.push_str(&format!("row{}\tc{i}\n", i + 2));
    }
    std::fs::write(dir.join("labeled.tsv"), tsv).unwrap();
    std::fs::write(dir.join("clusters.tsv"), clusters).unwrap();
    std::fs::write(dir.join("config.json"), TOY_CONFIG).unwrap();
}

/// dataprep → sft → train-mic → rl → sample → screen → build-library → eval,
/// all relative to `dir`.
pub fn run_pipeline(dir: &Path) {
    write_fixtures(dir);
    let c = ["--config", "config.json"];
    let with = |rest: &[&str]| -> Vec<String> { c.iter().chain(rest).map(|s| s.to_string()).collect() };
    let steps: Vec<Vec<String>> = vec![
        with(&["dataprep", "--input", "corpus.fasta", "--out-dir", "out/gen"]),
        with(&["dataprep", "--input", "labeled.tsv", "--clusters", "clusters.tsv", "--out-dir", "out/cls"]),
        with(&["sft", "--train", "out/gen/train.fasta", "--val", "out/gen/val.fasta", "--out-dir", "out/sft"]),
        with(&[
            "train-mic", "--train", "out/cls/train.tsv", "--val", "out/cls/val.tsv", "--test", "out/cls/test.tsv",
            "--out-dir", "out/mic",
        ]),
        with(&["rl", "--sft-checkpoint", "ckpt/sft_model.ckpt", "--mic-model", "ckpt/mic_model.ckpt", "--out-dir", "out/rl"]),
        with(&["sample", "--model", "ckpt/rl_model.ckpt", "--out-dir", "out/sample"]),
        with(&[
            "screen", "--input", "out/sample/samples.fasta", "--mic-model", "ckpt/mic_model.ckpt", "--reference",
            "corpus.fasta", "--diversity-k", "5", "--out-dir", "out/screen",
        ]),
        with(&["build-library", "--model", "ckpt/rl_model.ckpt", "--mic-model", "ckpt/mic_model.ckpt", "--out-dir", "out/library"]),
        with(&[
            "eval", "--generated", "rl=out/sample/samples.fasta", "--reference", "out/gen/train.fasta", "--out-dir",
            "out/eval",
        ]),
    ];
    for args in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(dir, &args);
    }
}

/// Every file under `root` (relative path → bytes), skipping run manifests.
pub fn artifacts(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else if !p.to_string_lossy().ends_with(".run_manifest.json") {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
