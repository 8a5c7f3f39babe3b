//! The pipeline stages behind the CLI subcommands: synth, ingest, prepare,
//! train, generate, eval, analyze-aspects. Every stage writes plain files
//! into the workdir and records content hashes in the manifest so stale
//! intermediates are caught instead of silently reused.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use patchdesc_core::aspects::corpus_aspect_stats;
use patchdesc_core::cluster::{default_cluster_count, fit_descriptions, ClusterModel};
use patchdesc_core::context::{
    build_dependency_graph, extract_patch_related_code, extract_scope, DependencyGraph, EdgeKind,
    HistoryIndex,
};
use patchdesc_core::corpus::{
    clean_description_with, filter_by_length, load_corpus, save_corpus, split, Corpus, SplitSpec,
};
use patchdesc_core::metrics::{
    bleu, exact_match, meteor, rouge_l, sem_sim_precomputed, sem_sim_tfidf_proxy, EvalPair,
};
use patchdesc_core::model::{
    build_source_sequence, tokenize, Annotation, PatchRelatedCode, PatchScope, SourceSequence,
};
use patchdesc_core::nmt::checkpoint::{load_checkpoint, save_checkpoint};
use patchdesc_core::nmt::vocab::{Vocabulary, EOS};
use patchdesc_core::nmt::{train, DecodeMode, Seq2SeqModel, TrainExample};
use patchdesc_core::synth::{generate_corpus, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::config::{stage_seed, PipelineConfig};
use crate::manifest::Manifest;
use crate::CliError;

pub const CLEANED_FILE: &str = "cleaned.jsonl";
pub const SPLIT_FILE: &str = "split.jsonl";
pub const EXAMPLES_FILE: &str = "examples.jsonl";
pub const CLUSTER_FILE: &str = "cluster.json";
pub const GROUPS_FILE: &str = "groups.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Serialize, Deserialize)]
struct SplitRecord {
    id: String,
    split: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExampleRecord {
    id: String,
    source_tokens: Vec<String>,
    target_tokens: Vec<String>,
    group: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupRecord {
    id: String,
    group: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    group_pred: Option<usize>,
    hypothesis: String,
}

#[derive(Debug, Deserialize)]
struct EdgeSidecarRecord {
    id: String,
    edges: Vec<(usize, usize, EdgeKind)>,
}

#[derive(Debug, Deserialize)]
struct VectorRecord {
    id: String,
    ref_vec: Vec<f64>,
    hyp_vec: Vec<f64>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| {
            CliError::Data(format!("{} line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)
            .map_err(|e| CliError::Data(format!("serialize for {}: {e}", path.display())))?;
        out.push(b'\n');
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn ensure_workdir(cfg: &PipelineConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.workdir)
        .map_err(|e| CliError::Data(format!("cannot create workdir {}: {e}", cfg.workdir.display())))
}

/// Generates a synthetic clustered corpus at the configured corpus path.
pub fn cmd_synth(
    cfg: &PipelineConfig,
    per_cluster: usize,
    noise_rate: f64,
) -> Result<String, CliError> {
    let clusters = if cfg.clusters == 0 { 8 } else { cfg.clusters };
    let corpus = generate_corpus(&SynthConfig {
        clusters,
        patches_per_cluster: per_cluster,
        noise_rate,
        seed: stage_seed(cfg.seed, "synth"),
    });
    if let Some(parent) = cfg.corpus.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    save_corpus(&corpus, &cfg.corpus)?;
    Ok(serde_json::json!({
        "patches": corpus.patches.len(),
        "clusters": clusters,
        "path": cfg.corpus.display().to_string(),
    })
    .to_string())
}

/// Cleans, filters, and splits the input corpus.
pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<String, CliError> {
    ensure_workdir(cfg)?;
    let raw = load_corpus(&cfg.corpus)?;
    let total = raw.patches.len();
    let clean_cfg = cfg.clean_config();
    let cleaned = Corpus {
        patches: raw
            .patches
            .into_iter()
            .map(|mut p| {
                p.description = clean_description_with(&p.description, &clean_cfg);
                p
            })
            .collect(),
        provenance: raw.provenance,
    };
    let kept = filter_by_length(&cleaned, cfg.min_desc_tokens, cfg.max_desc_tokens);
    let dropped = total - kept.patches.len();
    let split_spec = SplitSpec {
        strategy: cfg.split_strategy,
        ratio: cfg.split_ratio,
        seed: stage_seed(cfg.seed, "split"),
    };
    let (train_side, test_side) = split(&kept, &split_spec)?;
    let mut split_records: Vec<SplitRecord> = Vec::with_capacity(kept.patches.len());
    for p in &train_side.patches {
        split_records.push(SplitRecord {
            id: p.id.clone(),
            split: "train".into(),
        });
    }
    for p in &test_side.patches {
        split_records.push(SplitRecord {
            id: p.id.clone(),
            split: "test".into(),
        });
    }
    save_corpus(&kept, &cfg.workdir.join(CLEANED_FILE))?;
    write_jsonl(&cfg.workdir.join(SPLIT_FILE), &split_records)?;

    let mut manifest = Manifest::load(&cfg.workdir)?;
    manifest.record(
        "ingest",
        &cfg.workdir,
        &[&cfg.corpus],
        &[CLEANED_FILE, SPLIT_FILE],
    )?;
    manifest.save(&cfg.workdir)?;
    Ok(serde_json::json!({
        "kept": kept.patches.len(),
        "dropped": dropped,
        "train": train_side.patches.len(),
        "test": test_side.patches.len(),
    })
    .to_string())
}

fn split_map(cfg: &PipelineConfig) -> Result<BTreeMap<String, String>, CliError> {
    let records: Vec<SplitRecord> = read_jsonl(&cfg.workdir.join(SPLIT_FILE))?;
    Ok(records.into_iter().map(|r| (r.id, r.split)).collect())
}

fn sidecar_graphs(
    cfg: &PipelineConfig,
) -> Result<BTreeMap<String, Vec<(usize, usize, EdgeKind)>>, CliError> {
    let Some(path) = &cfg.edges else {
        return Ok(BTreeMap::new());
    };
    let records: Vec<EdgeSidecarRecord> = read_jsonl(path)?;
    Ok(records.into_iter().map(|r| (r.id, r.edges)).collect())
}

/// Builds a source sequence that fits `max_len`, shedding oldest history
/// items first, then the furthest context statements.
fn fit_source(
    related: &PatchRelatedCode,
    scope: &PatchScope,
    mut history: Vec<String>,
    max_len: usize,
    id: &str,
) -> Result<SourceSequence, CliError> {
    let mut related = related.clone();
    loop {
        let seq = build_source_sequence(&related, scope, &history);
        if seq.tokens.len() <= max_len {
            return Ok(seq);
        }
        if history.pop().is_some() {
            continue;
        }
        if let Some(pos) = related
            .statements
            .iter()
            .rposition(|(a, _)| *a == Annotation::Context)
        {
            related.statements.remove(pos);
            continue;
        }
        return Err(CliError::Data(format!(
            "source sequence for patch {id} cannot fit max_source_len={max_len}; raise it or lower max_statements"
        )));
    }
}

/// Extracts contexts, fits the clustering on train descriptions, and writes
/// the training examples.
pub fn cmd_prepare(cfg: &PipelineConfig) -> Result<String, CliError> {
    let manifest = Manifest::load(&cfg.workdir)?;
    manifest.verify_output("ingest", &cfg.workdir, CLEANED_FILE)?;
    manifest.verify_output("ingest", &cfg.workdir, SPLIT_FILE)?;

    let corpus = load_corpus(&cfg.workdir.join(CLEANED_FILE))?;
    let splits = split_map(cfg)?;
    let sidecar = sidecar_graphs(cfg)?;

    let train_patches: Vec<_> = corpus
        .patches
        .iter()
        .filter(|p| splits.get(&p.id).map(|s| s == "train").unwrap_or(false))
        .collect();
    if train_patches.is_empty() {
        return Err(CliError::Data("no train patches; run ingest first".into()));
    }
    let train_descriptions: Vec<String> =
        train_patches.iter().map(|p| p.description.clone()).collect();
    let k = if cfg.clusters == 0 {
        default_cluster_count(train_descriptions.len())
    } else {
        cfg.clusters
    };
    let cluster_model = fit_descriptions(
        &train_descriptions,
        k,
        stage_seed(cfg.seed, "cluster"),
        100,
    )?;

    let train_index = HistoryIndex::build(train_patches.iter().copied());
    let full_index = HistoryIndex::build(corpus.patches.iter());

    let mut examples = Vec::with_capacity(corpus.patches.len());
    let mut groups = Vec::with_capacity(corpus.patches.len());
    for p in &corpus.patches {
        let graph = match sidecar.get(&p.id) {
            Some(edges) => {
                let n_added = p
                    .changes
                    .iter()
                    .filter(|c| c.op == patchdesc_core::model::ChangeOp::Added)
                    .count();
                let node_count = p.buggy_code.len() + n_added;
                for &(u, v, _) in edges {
                    if u == v || u >= node_count || v >= node_count {
                        return Err(CliError::Data(format!(
                            "sidecar edge ({u},{v}) invalid for patch {} with {node_count} nodes",
                            p.id
                        )));
                    }
                }
                DependencyGraph {
                    buggy_count: p.buggy_code.len(),
                    node_count,
                    edges: edges.clone(),
                }
            }
            None => build_dependency_graph(&p.buggy_code, &p.changes),
        };
        let related = extract_patch_related_code(p, &graph, cfg.max_statements);
        let scope = if cfg.use_scope {
            extract_scope(p)
        } else {
            PatchScope::default()
        };
        let is_train = splits.get(&p.id).map(|s| s == "train").unwrap_or(false);
        let history = if cfg.max_history == 0 {
            Vec::new()
        } else if is_train {
            train_index.lookup(p, cfg.max_history)
        } else {
            full_index.lookup(p, cfg.max_history)
        };
        let source = fit_source(&related, &scope, history, cfg.max_source_len, &p.id)?;
        let group = cluster_model.assign(&p.description);
        examples.push(ExampleRecord {
            id: p.id.clone(),
            source_tokens: source.tokens,
            target_tokens: tokenize(&p.description),
            group,
        });
        groups.push(GroupRecord {
            id: p.id.clone(),
            group,
        });
    }

    cluster_model.save(&cfg.workdir.join(CLUSTER_FILE))?;
    write_jsonl(&cfg.workdir.join(EXAMPLES_FILE), &examples)?;
    write_jsonl(&cfg.workdir.join(GROUPS_FILE), &groups)?;

    let mut manifest = Manifest::load(&cfg.workdir)?;
    manifest.record(
        "prepare",
        &cfg.workdir,
        &[
            &cfg.workdir.join(CLEANED_FILE),
            &cfg.workdir.join(SPLIT_FILE),
        ],
        &[EXAMPLES_FILE, CLUSTER_FILE, GROUPS_FILE],
    )?;
    manifest.save(&cfg.workdir)?;
    Ok(serde_json::json!({
        "examples": examples.len(),
        "clusters": k,
    })
    .to_string())
}

/// Trains the translation model on the train split and writes the checkpoint
/// plus the per-epoch loss log.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<String, CliError> {
    let manifest = Manifest::load(&cfg.workdir)?;
    manifest.verify_output("prepare", &cfg.workdir, EXAMPLES_FILE)?;
    manifest.verify_output("prepare", &cfg.workdir, CLUSTER_FILE)?;
    manifest.verify_output("ingest", &cfg.workdir, SPLIT_FILE)?;

    let records: Vec<ExampleRecord> = read_jsonl(&cfg.workdir.join(EXAMPLES_FILE))?;
    let splits = split_map(cfg)?;
    let cluster_model = ClusterModel::load(&cfg.workdir.join(CLUSTER_FILE))?;

    let train_records: Vec<&ExampleRecord> = records
        .iter()
        .filter(|r| splits.get(&r.id).map(|s| s == "train").unwrap_or(false))
        .collect();
    if train_records.is_empty() {
        return Err(CliError::Data("no train examples".into()));
    }

    let mut sequences: Vec<&[String]> = Vec::with_capacity(train_records.len() * 2);
    for r in &train_records {
        sequences.push(&r.source_tokens);
        sequences.push(&r.target_tokens);
    }
    let vocab = Vocabulary::build(
        sequences.into_iter(),
        cluster_model.k,
        cfg.min_token_freq,
    );

    let dual = cfg.dual_objective;
    let desc_limit = cfg.max_target_len - 1 - usize::from(dual);
    let examples: Vec<TrainExample> = train_records
        .iter()
        .map(|r| {
            let mut target: Vec<usize> = r
                .target_tokens
                .iter()
                .take(desc_limit)
                .map(|t| vocab.id(t))
                .collect();
            target.push(EOS);
            TrainExample {
                source: vocab.encode(&r.source_tokens),
                group: dual.then_some(r.group),
                target,
            }
        })
        .collect();

    let mut model = Seq2SeqModel::<f32>::new(cfg.model_config(), vocab, dual)?;
    let log = train(&mut model, &examples, &cfg.train_config())?;

    let mut csv = String::from("epoch,mean_loss,mean_L1,mean_L2\n");
    for row in &log {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.mean_loss, row.mean_l1, row.mean_l2
        ));
    }
    std::fs::write(cfg.workdir.join(LOSS_FILE), csv)
        .map_err(|e| CliError::Data(format!("cannot write loss log: {e}")))?;
    save_checkpoint(&model, &cfg.workdir.join(CHECKPOINT_FILE))?;

    let mut manifest = Manifest::load(&cfg.workdir)?;
    manifest.record(
        "train",
        &cfg.workdir,
        &[&cfg.workdir.join(EXAMPLES_FILE)],
        &[CHECKPOINT_FILE, LOSS_FILE],
    )?;
    manifest.save(&cfg.workdir)?;
    let final_loss = log.last().map(|r| r.mean_loss);
    Ok(serde_json::json!({
        "examples": examples.len(),
        "epochs": log.len(),
        "final_loss": final_loss,
        "vocab": model.vocab.len(),
    })
    .to_string())
}

/// Decodes the configured split and writes predictions.
pub fn cmd_generate(cfg: &PipelineConfig) -> Result<String, CliError> {
    let manifest = Manifest::load(&cfg.workdir)?;
    manifest.verify_output("train", &cfg.workdir, CHECKPOINT_FILE)?;
    manifest.verify_output("prepare", &cfg.workdir, EXAMPLES_FILE)?;

    let model = load_checkpoint(&cfg.workdir.join(CHECKPOINT_FILE))?;
    let records: Vec<ExampleRecord> = read_jsonl(&cfg.workdir.join(EXAMPLES_FILE))?;
    let splits = split_map(cfg)?;
    let mode = if cfg.beam_width <= 1 {
        DecodeMode::Greedy
    } else {
        DecodeMode::Beam(cfg.beam_width)
    };

    let mut predictions = Vec::new();
    for r in records
        .iter()
        .filter(|r| splits.get(&r.id).map(|s| s == &cfg.gen_split).unwrap_or(false))
    {
        let (group_pred, hypothesis) = model.generate(&r.source_tokens, mode, cfg.max_gen_len);
        predictions.push(PredictionRecord {
            id: r.id.clone(),
            group_pred,
            hypothesis,
        });
    }
    if predictions.is_empty() {
        return Err(CliError::Data(format!(
            "no examples in split {:?}",
            cfg.gen_split
        )));
    }
    write_jsonl(&cfg.workdir.join(PREDICTIONS_FILE), &predictions)?;

    let mut manifest = Manifest::load(&cfg.workdir)?;
    manifest.record(
        "generate",
        &cfg.workdir,
        &[
            &cfg.workdir.join(CHECKPOINT_FILE),
            &cfg.workdir.join(EXAMPLES_FILE),
        ],
        &[PREDICTIONS_FILE],
    )?;
    manifest.save(&cfg.workdir)?;
    Ok(serde_json::json!({
        "predictions": predictions.len(),
        "split": cfg.gen_split,
    })
    .to_string())
}

fn round2(v: f64) -> f64 {
    (v * 10_000.0).round() / 100.0
}

/// Joins predictions with references and prints the metric report (x100,
/// two decimals), plus group-prediction accuracy when groups were predicted.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<String, CliError> {
    let manifest = Manifest::load(&cfg.workdir)?;
    manifest.verify_output("generate", &cfg.workdir, PREDICTIONS_FILE)?;
    manifest.verify_output("prepare", &cfg.workdir, EXAMPLES_FILE)?;
    manifest.verify_output("prepare", &cfg.workdir, GROUPS_FILE)?;

    let predictions: Vec<PredictionRecord> = read_jsonl(&cfg.workdir.join(PREDICTIONS_FILE))?;
    let records: Vec<ExampleRecord> = read_jsonl(&cfg.workdir.join(EXAMPLES_FILE))?;
    let groups: Vec<GroupRecord> = read_jsonl(&cfg.workdir.join(GROUPS_FILE))?;
    let references: BTreeMap<&str, String> = records
        .iter()
        .map(|r| (r.id.as_str(), r.target_tokens.join(" ")))
        .collect();
    let group_of: BTreeMap<&str, usize> =
        groups.iter().map(|g| (g.id.as_str(), g.group)).collect();

    let mut pairs = Vec::with_capacity(predictions.len());
    for p in &predictions {
        let reference = references.get(p.id.as_str()).ok_or_else(|| {
            CliError::Data(format!("prediction {} has no reference example", p.id))
        })?;
        pairs.push(EvalPair::new(reference.clone(), p.hypothesis.clone()));
    }

    let (semsim, semsim_mode) = match &cfg.semsim_vectors {
        Some(path) => {
            let vec_records: Vec<VectorRecord> = read_jsonl(path)?;
            let by_id: BTreeMap<&str, &VectorRecord> =
                vec_records.iter().map(|v| (v.id.as_str(), v)).collect();
            let mut vectors = Vec::with_capacity(predictions.len());
            for p in &predictions {
                let v = by_id.get(p.id.as_str()).ok_or_else(|| {
                    CliError::Data(format!(
                        "vectors file {} is missing id {:?}",
                        path.display(),
                        p.id
                    ))
                })?;
                vectors.push((v.ref_vec.clone(), v.hyp_vec.clone()));
            }
            (sem_sim_precomputed(&vectors)?, "external")
        }
        None => (sem_sim_tfidf_proxy(&pairs)?, "proxy"),
    };

    let mut report = serde_json::json!({
        "pairs": pairs.len(),
        "bleu": round2(bleu(&pairs)?),
        "meteor": round2(meteor(&pairs)?),
        "rouge_l": round2(rouge_l(&pairs)?),
        "exact_match": round2(exact_match(&pairs)?),
        "semsim": round2(semsim),
        "semsim_mode": semsim_mode,
    });
    let with_groups: Vec<&PredictionRecord> =
        predictions.iter().filter(|p| p.group_pred.is_some()).collect();
    if !with_groups.is_empty() {
        let hits = with_groups
            .iter()
            .filter(|p| group_of.get(p.id.as_str()).copied() == p.group_pred)
            .count();
        report["group_accuracy"] =
            serde_json::json!(round2(hits as f64 / with_groups.len() as f64));
    }

    let text = report.to_string();
    let mut file = std::fs::File::create(cfg.workdir.join(REPORT_FILE))
        .map_err(|e| CliError::Data(format!("cannot write report: {e}")))?;
    writeln!(file, "{text}").map_err(|e| CliError::Data(format!("cannot write report: {e}")))?;

    let mut manifest = Manifest::load(&cfg.workdir)?;
    manifest.record(
        "eval",
        &cfg.workdir,
        &[&cfg.workdir.join(PREDICTIONS_FILE)],
        &[REPORT_FILE],
    )?;
    manifest.save(&cfg.workdir)?;
    Ok(text)
}

/// Runs the what/how/where analysis over the raw input corpus.
pub fn cmd_analyze_aspects(cfg: &PipelineConfig) -> Result<String, CliError> {
    let corpus = load_corpus(&cfg.corpus)?;
    let (all3, ge2, ge1) = corpus_aspect_stats(&corpus)?;
    Ok(serde_json::json!({
        "all3": all3,
        "ge2": ge2,
        "ge1": ge1,
    })
    .to_string())
}
