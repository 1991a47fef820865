use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use ampforge::assay::{classify_quadrants, read_series, summarize, write_summaries};
use ampforge::dataprep::{
    balance, clusters_from_assignments, greedy_cluster, length_filter, read_cluster_assignments, split_by_cluster,
    Cluster, Splits,
};
use ampforge::eval::{compare, write_descriptor_tsv, write_embeddings, write_frequency_tsv, write_summary_tsv};
use ampforge::mic::{read_labeled, train as train_mic, write_labeled, ActivityScorer, Embedder, LabeledPeptide, MicModel};
use ampforge::physchem::descriptor_vector;
use ampforge::policy::{actions_to_peptide, sample, train_sft, PolicyModel};
use ampforge::ppo::{train_rl, write_rl_log, RewardEnv};
use ampforge::records::{read_records, write_records, AnnotationRecord, RecordFormat};
use ampforge::rng::{substream, substream_seed};
use ampforge::screening::{
    annotate, build_library, diversity_select, novelty_filter, prioritize, screen, write_hits, LibrarySources,
};
use ampforge::seq::{dedup_exact, parse_fasta, write_fasta, Peptide, Source};
use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::Value;

use crate::config::{resolve, RunConfig};
use crate::output::Outputs;
use crate::{Cli, Command, Format, UsageError};

type External = BTreeMap<String, BTreeMap<String, f64>>;

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut overrides: Vec<(String, Value)> = Vec::new();
    if let Some(seed) = cli.global.seed {
        overrides.push(("seed".into(), seed.into()));
    }
    if let Some(dir) = &cli.global.out_dir {
        overrides.push(("paths.output_dir".into(), dir.display().to_string().into()));
    }
    let mut push = |k: &str, v: Option<usize>| {
        if let Some(v) = v {
            overrides.push((k.into(), v.into()));
        }
    };
    match &cli.command {
        Command::Sample { count, .. } => push("sample.count", *count),
        Command::Rl { iterations, .. } => push("ppo.iterations", *iterations),
        Command::Screen { diversity_k, .. } => push("screen.diversity_k", *diversity_k),
        Command::BuildLibrary { target_count, .. } => push("library.target_count", *target_count),
        _ => {}
    }
    // Named flags are applied last so they win over `--set`.
    let mut all = cli.global.overrides.clone();
    all.extend(overrides);
    let cfg = resolve(cli.global.config.as_deref(), &all)?;
    match cli.command {
        Command::Props { input } => props(&cfg, &input),
        Command::Dataprep { input, clusters } => dataprep(&cfg, &input, clusters.as_deref()),
        Command::TrainMic {
            train,
            val,
            test,
            embeddings,
        } => train_mic_cmd(&cfg, &train, &val, test.as_deref(), embeddings.as_deref()),
        Command::ScoreMic {
            model,
            input,
            embeddings,
        } => score_mic(&cfg, &model, &input, embeddings.as_deref()),
        Command::Sft { train, val } => sft(&cfg, &train, &val),
        Command::Sample { model, .. } => sample_cmd(&cfg, &model),
        Command::Rl {
            sft_checkpoint,
            mic_model,
            embeddings,
            ..
        } => rl(&cfg, &sft_checkpoint, &mic_model, embeddings.as_deref()),
        Command::Screen {
            input,
            mic_model,
            embeddings,
            reference,
            external_scores,
            format,
            ..
        } => screen_cmd(
            &cfg,
            &input,
            mic_model.as_deref(),
            embeddings.as_deref(),
            reference.as_deref(),
            external_scores.as_deref(),
            format.format,
        ),
        Command::BuildLibrary {
            model,
            mic_model,
            embeddings,
            external_scores,
            ..
        } => library(&cfg, &model, &mic_model, embeddings.as_deref(), external_scores.as_deref()),
        Command::Eval {
            generated,
            reference,
            write_embeddings,
        } => eval(&cfg, &generated, &reference, write_embeddings),
        Command::Assay { input } => assay(&cfg, &input),
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    if !path.exists() {
        return Err(UsageError(format!("input file {} does not exist", path.display())).into());
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_fasta(path: &Path, source: Source) -> anyhow::Result<Vec<Peptide>> {
    parse_fasta(&read_text(path)?, source).with_context(|| format!("parsing {}", path.display()))
}

fn read_labeled_file(path: &Path) -> anyhow::Result<Vec<LabeledPeptide>> {
    read_labeled(read_text(path)?.as_bytes()).with_context(|| format!("parsing {}", path.display()))
}

fn is_tsv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "tsv")
}

fn load_mic(path: &Path, embeddings: Option<&Path>) -> anyhow::Result<MicModel> {
    if !path.exists() {
        return Err(UsageError(format!("classifier {} does not exist", path.display())).into());
    }
    MicModel::load(path, embeddings).with_context(|| format!("loading classifier {}", path.display()))
}

fn load_policy(path: &Path) -> anyhow::Result<PolicyModel> {
    if !path.exists() {
        return Err(UsageError(format!("checkpoint {} does not exist", path.display())).into());
    }
    PolicyModel::load(path).with_context(|| format!("loading generator {}", path.display()))
}

fn generated_source(model: &PolicyModel) -> Source {
    if model.lora().is_some() {
        Source::GeneratedRl
    } else {
        Source::GeneratedSft
    }
}

/// `sequence<TAB>name…` with one numeric column per external scorer.
fn read_external(path: Option<&Path>) -> anyhow::Result<External> {
    let mut out = External::new();
    let Some(path) = path else {
        return Ok(out);
    };
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(out);
    };
    let names: Vec<&str> = header.split('\t').collect();
    if names.first().map(|s| s.trim()) != Some("sequence") || names.len() < 2 {
        bail!("{}: header must be `sequence` followed by scorer names", path.display());
    }
    for (i, line) in lines {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != names.len() {
            bail!("{}:{}: expected {} columns", path.display(), i + 1, names.len());
        }
        let row = out.entry(cells[0].trim().to_ascii_uppercase()).or_default();
        for (name, cell) in names[1..].iter().zip(&cells[1..]) {
            let v: f64 = cell
                .trim()
                .parse()
                .with_context(|| format!("{}:{}: bad score '{cell}'", path.display(), i + 1))?;
            row.insert(name.trim().to_string(), v);
        }
    }
    Ok(out)
}

fn props(cfg: &RunConfig, input: &Path) -> anyhow::Result<()> {
    let scale = cfg.scale_table()?;
    let peps = read_fasta(input, Source::External)?;
    let mut out = Outputs::new("props", cfg);
    out.write_with("props.tsv", |w| {
        writeln!(
            w,
            "id\tsequence\tlength\thydrophobicity\thydrophobic_moment\tnet_charge\tisoelectric_point"
        )?;
        for p in &peps {
            let d = descriptor_vector(p, &scale);
            writeln!(
                w,
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                p.id(),
                p.residues(),
                d.length,
                d.hydrophobicity,
                d.hydrophobic_moment,
                d.net_charge,
                d.isoelectric_point
            )?;
        }
        Ok(())
    })?;
    out.finish(cfg)
}

#[derive(Serialize)]
struct SplitManifest {
    input: usize,
    rejected_length: usize,
    duplicates_removed: usize,
    clusters: usize,
    largest_cluster: usize,
    cluster_counts: [usize; 3],
    member_counts: [usize; 3],
    /// Representative ids of the clusters in each split.
    representatives: [Vec<String>; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    balance: Option<Vec<ampforge::dataprep::BalanceReport>>,
}

const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

fn dataprep(cfg: &RunConfig, input: &Path, clusters: Option<&Path>) -> anyhow::Result<()> {
    let dp = &cfg.dataprep;
    let labeled = is_tsv(input);
    let (peps, labels): (Vec<Peptide>, BTreeMap<String, bool>) = if labeled {
        let rows = read_labeled_file(input)?;
        let labels = rows.iter().map(|r| (r.peptide.id().to_string(), r.active)).collect();
        (rows.into_iter().map(|r| r.peptide.with_source(Source::Natural)).collect(), labels)
    } else {
        (read_fasta(input, Source::Natural)?, BTreeMap::new())
    };
    let n_input = peps.len();
    let floor = if labeled { dp.classifier_min_len } else { dp.min_len };
    let (kept, rejected) = length_filter(peps, floor, dp.max_len)?;
    let n_kept = kept.len();
    let kept = dedup_exact(kept);
    let duplicates = n_kept - kept.len();
    let cl: Vec<Cluster> = match clusters {
        Some(path) => clusters_from_assignments(&kept, &read_cluster_assignments(&read_text(path)?)?)?,
        None => greedy_cluster(&kept, dp.identity_threshold, &dp.scoring)?,
    };
    let largest = cl.iter().map(Cluster::len).max().unwrap_or(0);
    let n_clusters = cl.len();
    let splits = split_by_cluster(cl, dp.fractions, substream_seed(cfg.seed, "dataprep_split"))?;
    let mut out = Outputs::new("dataprep", cfg);
    out.write_with("rejected_length.fasta", |w| write_fasta(w, &rejected))?;
    let mut reports = Vec::new();
    for (name, part) in SPLIT_NAMES.iter().zip(splits.parts()) {
        let members = Splits::members(part);
        if labeled {
            let rows: Vec<LabeledPeptide> = members
                .into_iter()
                .map(|p| LabeledPeptide {
                    active: labels[p.id()],
                    peptide: p,
                })
                .collect();
            let rows = if dp.balance {
                let (pos, neg): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r.active);
                let pos: Vec<Peptide> = pos.into_iter().map(|r| r.peptide).collect();
                let neg: Vec<Peptide> = neg.into_iter().map(|r| r.peptide).collect();
                let (set, report) = balance(
                    &pos,
                    &neg,
                    dp.balance_bin_width,
                    substream_seed(cfg.seed, &format!("dataprep_balance/{name}")),
                )
                .with_context(|| format!("balancing the {name} split"))?;
                reports.push(report);
                set
            } else {
                rows
            };
            out.write_with(&format!("{name}.tsv"), |w| write_labeled(w, &rows))?;
        } else {
            out.write_with(&format!("{name}.fasta"), |w| write_fasta(w, &members))?;
        }
    }
    let manifest = SplitManifest {
        input: n_input,
        rejected_length: rejected.len(),
        duplicates_removed: duplicates,
        clusters: n_clusters,
        largest_cluster: largest,
        cluster_counts: splits.parts().map(Vec::len),
        member_counts: splits.member_counts(),
        representatives: splits
            .parts()
            .map(|p| p.iter().map(|c| c.representative.id().to_string()).collect()),
        balance: labeled.then_some(reports).filter(|_| dp.balance),
    };
    out.write_json("split_manifest.json", &manifest)?;
    out.finish(cfg)
}

fn train_mic_cmd(
    cfg: &RunConfig,
    train: &Path,
    val: &Path,
    test: Option<&Path>,
    embeddings: Option<&Path>,
) -> anyhow::Result<()> {
    let tr = read_labeled_file(train)?;
    let va = read_labeled_file(val)?;
    let te = test.map(read_labeled_file).transpose()?;
    let embedder = match embeddings {
        Some(p) => Embedder::load_external(p).with_context(|| format!("loading {}", p.display()))?,
        None => Embedder::Builtin(cfg.scale_table()?),
    };
    let (model, history) = train_mic(embedder, &tr, &va, &cfg.mic, substream_seed(cfg.seed, "mic_train"))?;
    let metrics = model.evaluate(te.as_deref().unwrap_or(&va))?;
    log::info!("classifier AUROC {:?}, accuracy {:.3}", metrics.auroc, metrics.accuracy);
    let mut out = Outputs::new("train-mic", cfg);
    let ckpt = cfg.checkpoint_dir().join("mic_model.ckpt");
    model.save(&ckpt)?;
    out.record_checkpoint(&ckpt);
    out.write_json("mic_history.json", &history)?;
    out.write_json(
        "mic_metrics.json",
        &serde_json::json!({ "set": if te.is_some() { "test" } else { "val" }, "metrics": metrics }),
    )?;
    out.finish(cfg)
}

fn score_mic(cfg: &RunConfig, model: &Path, input: &Path, embeddings: Option<&Path>) -> anyhow::Result<()> {
    let model = load_mic(model, embeddings)?;
    let peps: Vec<Peptide> = if is_tsv(input) {
        read_labeled_file(input)?.into_iter().map(|r| r.peptide).collect()
    } else {
        read_fasta(input, Source::External)?
    };
    let scores = model.score_all(&peps)?;
    let threshold = model.config.decision_threshold;
    let mut out = Outputs::new("score-mic", cfg);
    out.write_with("mic_scores.tsv", |w| {
        writeln!(w, "id\tsequence\tscore\tactive")?;
        for (p, s) in peps.iter().zip(&scores) {
            writeln!(w, "{}\t{}\t{s:.6}\t{}", p.id(), p.residues(), u8::from(*s >= threshold))?;
        }
        Ok(())
    })?;
    out.finish(cfg)
}

fn sft(cfg: &RunConfig, train: &Path, val: &Path) -> anyhow::Result<()> {
    let tr = read_fasta(train, Source::Natural)?;
    let va = read_fasta(val, Source::Natural)?;
    let mut model = PolicyModel::init(cfg.policy.clone(), substream_seed(cfg.seed, "policy_init"))?;
    let report = train_sft(&mut model, &tr, &va, &cfg.sft, substream_seed(cfg.seed, "sft"))?;
    log::info!(
        "sft: best epoch {} with validation perplexity {:.4}",
        report.best_epoch,
        report.best_val_perplexity
    );
    let mut out = Outputs::new("sft", cfg);
    let ckpt = cfg.checkpoint_dir().join("sft_model.ckpt");
    model.save(&ckpt)?;
    out.record_checkpoint(&ckpt);
    out.write_json("sft_report.json", &report)?;
    out.finish(cfg)
}

fn sample_cmd(cfg: &RunConfig, model_path: &Path) -> anyhow::Result<()> {
    let model = load_policy(model_path)?;
    let source = generated_source(&model);
    let mut rng = substream(cfg.seed, "sample");
    let draws = sample(&model, cfg.sample.count, &cfg.sample.sampling, &mut rng)?;
    let mut peps = Vec::with_capacity(draws.len());
    for (i, d) in draws.iter().enumerate() {
        if d.residues().is_empty() {
            continue;
        }
        peps.push(actions_to_peptide(format!("sample_{i:06}"), d.residues(), source)?);
    }
    if peps.len() < draws.len() {
        log::warn!("{} of {} draws were empty and skipped", draws.len() - peps.len(), draws.len());
    }
    let mut out = Outputs::new("sample", cfg);
    out.write_with("samples.fasta", |w| write_fasta(w, &peps))?;
    out.finish(cfg)
}

fn rl(cfg: &RunConfig, sft_path: &Path, mic_path: &Path, embeddings: Option<&Path>) -> anyhow::Result<()> {
    let sft = load_policy(sft_path)?;
    let mic = load_mic(mic_path, embeddings)?;
    let scale = cfg.scale_table()?;
    let env = RewardEnv {
        scorer: &mic,
        reward: &cfg.reward,
        scale: &scale,
    };
    let (policy, log_rows) = train_rl(&sft, &env, &cfg.ppo, substream_seed(cfg.seed, "rl"), &mut |_, _| Ok(()))?;
    let mut out = Outputs::new("rl", cfg);
    let ckpt = cfg.checkpoint_dir().join("rl_model.ckpt");
    policy.save(&ckpt)?;
    out.record_checkpoint(&ckpt);
    out.write_with("rl_log.tsv", |w| write_rl_log(w, &log_rows))?;
    out.finish(cfg)
}

fn record_format(f: Format) -> (RecordFormat, &'static str) {
    match f {
        Format::Tsv => (RecordFormat::Tsv, "tsv"),
        Format::Jsonl => (RecordFormat::Jsonl, "jsonl"),
    }
}

fn screen_cmd(
    cfg: &RunConfig,
    input: &Path,
    mic_path: Option<&Path>,
    embeddings: Option<&Path>,
    reference: Option<&Path>,
    external_path: Option<&Path>,
    format: Format,
) -> anyhow::Result<()> {
    let scale = cfg.scale_table()?;
    let external = read_external(external_path)?;
    let records: Vec<AnnotationRecord> = match RecordFormat::from_extension(input) {
        Some(fmt) => {
            let text = read_text(input)?;
            let mut recs =
                read_records(text.as_bytes(), fmt).with_context(|| format!("parsing {}", input.display()))?;
            for r in &mut recs {
                if let Some(ext) = external.get(r.peptide.residues()) {
                    r.external_scores.extend(ext.iter().map(|(k, v)| (k.clone(), *v)));
                }
            }
            if let Some(path) = mic_path {
                let mic = load_mic(path, embeddings)?;
                for r in &mut recs {
                    r.mic_score = Some(mic.activity(&r.peptide)?);
                }
            }
            recs
        }
        None => {
            let Some(path) = mic_path else {
                return Err(UsageError("screening a FASTA input needs --mic-model".into()).into());
            };
            let mic = load_mic(path, embeddings)?;
            read_fasta(input, Source::External)?
                .into_iter()
                .map(|p| annotate(p, &mic, &scale, &external))
                .collect::<ampforge::Result<_>>()?
        }
    };
    let (kept, mut rejected) = screen(records, &cfg.screen)?;
    let (fmt, ext) = record_format(format);
    let mut out = Outputs::new("screen", cfg);
    let kept = match reference {
        Some(path) => {
            let refs = read_fasta(path, Source::Natural)?;
            let nov = novelty_filter(kept, &refs, &cfg.screen)?;
            out.write_with("hits.tsv", |w| write_hits(w, &nov.hits))?;
            rejected.extend(nov.removed);
            nov.kept
        }
        None => kept,
    };
    let kept = prioritize(kept, &cfg.screen.priority_windows)?;
    let selected = match cfg.screen.diversity_k {
        Some(k) => diversity_select(&kept, k, &scale)?,
        None => kept.clone(),
    };
    log::info!(
        "screen: {} kept, {} rejected, {} selected",
        kept.len(),
        rejected.len(),
        selected.len()
    );
    out.write_with(&format!("screened.{ext}"), |w| write_records(w, &kept, fmt))?;
    out.write_with(&format!("rejected.{ext}"), |w| write_records(w, &rejected, fmt))?;
    let selected: Vec<Peptide> = selected.into_iter().map(|r| r.peptide).collect();
    out.write_with("selected.fasta", |w| write_fasta(w, &selected))?;
    out.finish(cfg)
}

fn library(
    cfg: &RunConfig,
    model: &Path,
    mic_path: &Path,
    embeddings: Option<&Path>,
    external_path: Option<&Path>,
) -> anyhow::Result<()> {
    let policy = load_policy(model)?;
    let mic = load_mic(mic_path, embeddings)?;
    let scale = cfg.scale_table()?;
    let external = read_external(external_path)?;
    let src = LibrarySources {
        policy: &policy,
        scorer: &mic,
        scale: &scale,
        external: &external,
        source: generated_source(&policy),
    };
    let lib = build_library(&src, &cfg.library, &cfg.screen, substream_seed(cfg.seed, "library"))?;
    log::info!(
        "library: {} sequences from {} samples, {} pass screening",
        lib.records.len(),
        lib.stats.total_sampled,
        lib.stats.screen_kept
    );
    let peps: Vec<Peptide> = lib.records.iter().map(|r| r.peptide.clone()).collect();
    let mut out = Outputs::new("build-library", cfg);
    out.write_with("library.fasta", |w| write_fasta(w, &peps))?;
    out.write_with("library.jsonl", |w| write_records(w, &lib.records, RecordFormat::Jsonl))?;
    out.write_json("library_stats.json", &lib.stats)?;
    out.write_with("library_stats.tsv", |w| lib.stats.write_tsv(w))?;
    out.finish(cfg)
}

fn parse_generated(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| arg.to_string());
            (name, path)
        }
    }
}

fn eval(cfg: &RunConfig, generated: &[String], reference: &Path, embeddings: bool) -> anyhow::Result<()> {
    let scale = cfg.scale_table()?;
    let embedder = Embedder::Builtin(scale.clone());
    let refs = read_fasta(reference, Source::Natural)?;
    let mut sets = Vec::new();
    for arg in generated {
        let (name, path) = parse_generated(arg);
        if sets.iter().any(|(n, _)| *n == name) {
            return Err(UsageError(format!("generated set name '{name}' given twice")).into());
        }
        sets.push((name, read_fasta(&path, Source::External)?));
    }
    let reports = sets
        .iter()
        .map(|(name, peps)| compare(name, peps, &refs, &embedder, &scale, &cfg.eval))
        .collect::<ampforge::Result<Vec<_>>>()?;
    for r in &reports {
        log::info!("eval {}: JSD {:.4}, Pearson {:?}", r.set, r.jsd, r.pearson);
    }
    let mut out = Outputs::new("eval", cfg);
    out.write_with("eval_summary.tsv", |w| write_summary_tsv(w, &reports))?;
    out.write_with("eval_descriptors.tsv", |w| write_descriptor_tsv(w, &reports))?;
    out.write_with("eval_frequencies.tsv", |w| write_frequency_tsv(w, &reports))?;
    out.write_json("eval_report.json", &reports)?;
    if embeddings {
        let mut named: Vec<(&str, &[Peptide])> = sets.iter().map(|(n, p)| (n.as_str(), p.as_slice())).collect();
        named.push(("reference", &refs));
        out.write_with("embeddings.tsv", |w| write_embeddings(w, &named, &embedder))?;
    }
    out.finish(cfg)
}

fn assay(cfg: &RunConfig, input: &Path) -> anyhow::Result<()> {
    let text = read_text(input)?;
    let series = read_series(text.as_bytes()).with_context(|| format!("parsing {}", input.display()))?;
    let summaries = series.iter().map(summarize).collect::<ampforge::Result<Vec<_>>>()?;
    let (classified, medians) = classify_quadrants(&summaries)?;
    let mut out = Outputs::new("assay", cfg);
    out.write_with("assay_summary.tsv", |w| write_summaries(w, &classified))?;
    out.write_json("assay_medians.json", &medians)?;
    out.finish(cfg)
}
