//! Command-line interface: corpus generation, training, evaluation,
//! single-instruction translation, plan validation, and the head-count
//! ablation.
//!
//! Exit codes: 0 on success, 2 for user input problems (bad flags, files,
//! names), 3 for numerical failures during training.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{build_corpus, load_corpus, save_corpus, Corpus, CorpusConfig, CorpusError, Split};
use crate::graph::{parse_graph, BehaviorGraph, GraphError, Plan};
use crate::manifest::{code_version, hash_corpus_dir, sha256_hex, RunManifest};
use crate::training::{
    ablate, evaluate, load_model, train, translate, TrainConfig, TrainError,
};

/// One configuration document drives every command; CLI flags override the
/// same-named fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Parser)]
#[command(name = "navtrans", version, about = "Translate navigation instructions into behavior plans")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration file; defaults apply when omitted
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Attention head count (overrides the config)
    #[arg(long)]
    pub heads: Option<usize>,
    /// Training epochs (overrides the config)
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training batch size (overrides the config)
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus of maps and instruction/plan pairs
    GenerateCorpus {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory to write corpus.jsonl and graphs/ into
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoints plus a per-epoch log
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Corpus directory (overrides train.corpus from the config)
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Run directory for model.ntck, epochs.jsonl, manifest.json
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one corpus split
    Evaluate {
        /// Checkpoint written by `train`
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus directory
        #[arg(long)]
        corpus: PathBuf,
        /// Split to score: train, test_repeated, or test_new
        #[arg(long)]
        split: String,
        /// Optional directory for report.json and records.jsonl
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode one instruction against a graph
    Translate {
        /// Checkpoint written by `train`
        #[arg(long)]
        checkpoint: PathBuf,
        /// Graph JSON file
        #[arg(long)]
        graph: PathBuf,
        /// Start node name
        #[arg(long)]
        start: String,
        /// Whitespace-separated instruction text
        #[arg(long)]
        instruction: String,
    },
    /// Check that a behavior sequence executes on a graph
    ValidatePlan {
        /// Graph JSON file
        #[arg(long)]
        graph: PathBuf,
        /// Start node name
        #[arg(long)]
        start: String,
        /// Whitespace-separated behavior names
        #[arg(long)]
        plan: String,
        /// Require the plan to end at this node
        #[arg(long)]
        goal: Option<String>,
    },
    /// Train single- and multi-head variants over several seeds and compare
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Corpus directory (overrides train.corpus from the config)
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Directory for ablation.json and manifest.json
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            other => CliError::User(other.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::User(e.to_string())
    }
}

fn io_err(what: &str, path: &Path, e: std::io::Error) -> CliError {
    CliError::User(format!("{what} {}: {e}", path.display()))
}

/// Parses argv and runs; returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenerateCorpus { common, out } => cmd_generate_corpus(&common, &out),
        Command::Train { common, corpus, out } => cmd_train(&common, corpus.as_deref(), &out),
        Command::Evaluate { checkpoint, corpus, split, out } => {
            cmd_evaluate(&checkpoint, &corpus, &split, out.as_deref())
        }
        Command::Translate { checkpoint, graph, start, instruction } => {
            cmd_translate(&checkpoint, &graph, &start, &instruction)
        }
        Command::ValidatePlan { graph, start, plan, goal } => {
            cmd_validate_plan(&graph, &start, &plan, goal.as_deref())
        }
        Command::Ablate { common, corpus, out } => cmd_ablate(&common, corpus.as_deref(), &out),
    }
}

fn load_config(common: &CommonArgs) -> Result<AppConfig, CliError> {
    let mut cfg = match &common.config {
        None => AppConfig::default(),
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| io_err("cannot read config", path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::User(format!("bad config {}: {e}", path.display())))?
        }
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(heads) = common.heads {
        cfg.train.heads = heads;
    }
    if let Some(epochs) = common.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(batch) = common.batch_size {
        cfg.train.batch_size = batch;
    }
    Ok(cfg)
}

fn config_hash(cfg: &AppConfig) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("config serializes"))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_err("cannot create directory", path, e))
}

fn load_corpus_dir(path: &Path) -> Result<Corpus, CliError> {
    Ok(load_corpus(path)?)
}

fn resolve_corpus_path(cfg: &TrainConfig, flag: Option<&Path>) -> Result<PathBuf, CliError> {
    match flag {
        Some(p) => Ok(p.to_path_buf()),
        None if cfg.corpus.as_os_str().is_empty() => Err(CliError::User(
            "no corpus directory: set train.corpus in the config or pass --corpus".into(),
        )),
        None => Ok(cfg.corpus.clone()),
    }
}

fn parse_split(name: &str) -> Result<Split, CliError> {
    match name {
        "train" => Ok(Split::Train),
        "test_repeated" => Ok(Split::TestRepeated),
        "test_new" => Ok(Split::TestNew),
        other => Err(CliError::User(format!(
            "unknown split {other:?}; expected train, test_repeated, or test_new"
        ))),
    }
}

fn read_graph(path: &Path) -> Result<BehaviorGraph, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err("cannot read graph", path, e))?;
    Ok(parse_graph(&text)?)
}

fn cmd_generate_corpus(common: &CommonArgs, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let corpus = build_corpus(&cfg.corpus, cfg.train.seed)?;
    ensure_dir(out)?;
    save_corpus(&corpus, out)?;
    RunManifest {
        command: "generate-corpus".into(),
        code_version: code_version(),
        seed: cfg.train.seed,
        config_sha256: config_hash(&cfg),
        corpus_sha256: Some(hash_corpus_dir(out).map_err(|e| io_err("cannot hash corpus", out, e))?),
        outputs: vec!["corpus.jsonl".into(), "graphs".into()],
    }
    .save(&out.join("manifest.json"))
    .map_err(|e| io_err("cannot write manifest", out, e))?;
    println!(
        "wrote {} maps, {} samples (train {}, test_repeated {}, test_new {}) to {}",
        corpus.graphs.len(),
        corpus.len(),
        corpus.train.len(),
        corpus.test_repeated.len(),
        corpus.test_new.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(common: &CommonArgs, corpus_flag: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    cfg.train.corpus = resolve_corpus_path(&cfg.train, corpus_flag)?;
    let corpus = load_corpus_dir(&cfg.train.corpus)?;
    ensure_dir(out)?;

    let log_path = out.join("epochs.jsonl");
    let mut log_file = std::fs::File::create(&log_path)
        .map_err(|e| io_err("cannot create epoch log", &log_path, e))?;
    let mut log_io: Option<std::io::Error> = None;
    let trained = train(&cfg.train, &corpus, Some(out), |log| {
        let line = serde_json::to_string(log).expect("epoch log serializes");
        println!("{line}");
        if log_io.is_none() {
            log_io = writeln!(log_file, "{line}").err();
        }
    })?;
    if let Some(e) = log_io {
        return Err(io_err("cannot write epoch log", &log_path, e));
    }

    RunManifest {
        command: "train".into(),
        code_version: code_version(),
        seed: cfg.train.seed,
        config_sha256: config_hash(&cfg),
        corpus_sha256: Some(
            hash_corpus_dir(&cfg.train.corpus)
                .map_err(|e| io_err("cannot hash corpus", &cfg.train.corpus, e))?,
        ),
        outputs: vec!["model.ntck".into(), "epochs.jsonl".into()],
    }
    .save(&out.join("manifest.json"))
    .map_err(|e| io_err("cannot write manifest", out, e))?;

    let last = trained.logs.last().expect("at least one epoch");
    println!(
        "done: {} epochs, final train loss {:.4}, val M@0 {:.2}; checkpoint at {}",
        trained.logs.len(),
        last.train_loss,
        last.val_m_at_0,
        out.join("model.ntck").display()
    );
    Ok(())
}

fn cmd_evaluate(
    checkpoint: &Path,
    corpus_dir: &Path,
    split_name: &str,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let split = parse_split(split_name)?;
    let saved = load_model(checkpoint)?;
    let corpus = load_corpus_dir(corpus_dir)?;
    let eval = evaluate(&saved.model, &saved.vocab, &corpus, split)?;
    println!("split {split_name}: {} samples", eval.report.n);
    println!("F1 / M@0 / M@1 / M@2 / ED: {}", eval.report);

    if let Some(dir) = out {
        ensure_dir(dir)?;
        let report_path = dir.join("report.json");
        let mut report_text =
            serde_json::to_string_pretty(&eval.report).expect("report serializes");
        report_text.push('\n');
        std::fs::write(&report_path, report_text)
            .map_err(|e| io_err("cannot write report", &report_path, e))?;

        let records_path = dir.join("records.jsonl");
        let mut text = String::new();
        for r in &eval.records {
            text.push_str(&serde_json::to_string(r).expect("record serializes"));
            text.push('\n');
        }
        std::fs::write(&records_path, text)
            .map_err(|e| io_err("cannot write records", &records_path, e))?;

        RunManifest {
            command: format!("evaluate --split {split_name}"),
            code_version: code_version(),
            seed: saved.train_config.seed,
            config_sha256: sha256_hex(
                &serde_json::to_vec(&saved.train_config).expect("config serializes"),
            ),
            corpus_sha256: Some(
                hash_corpus_dir(corpus_dir).map_err(|e| io_err("cannot hash corpus", corpus_dir, e))?,
            ),
            outputs: vec!["report.json".into(), "records.jsonl".into()],
        }
        .save(&dir.join("manifest.json"))
        .map_err(|e| io_err("cannot write manifest", dir, e))?;
    }
    Ok(())
}

fn cmd_translate(
    checkpoint: &Path,
    graph_path: &Path,
    start: &str,
    instruction: &str,
) -> Result<(), CliError> {
    let saved = load_model(checkpoint)?;
    let graph = read_graph(graph_path)?;
    let tokens: Vec<String> = instruction.split_whitespace().map(str::to_string).collect();
    let tr = translate(&saved.model, &saved.vocab, &graph, start, &tokens)?;
    if tr.behaviors.is_empty() {
        println!("plan: <empty>");
    } else {
        println!("plan: {}", tr.behaviors.join(" "));
    }
    if tr.truncated {
        println!("note: decoding stopped at the length limit");
    }
    match &tr.end_node {
        Some(end) => println!("executes from {start}, ends at {end}"),
        None => println!("plan does not execute from {start}"),
    }
    Ok(())
}

fn cmd_validate_plan(
    graph_path: &Path,
    start: &str,
    plan_text: &str,
    goal: Option<&str>,
) -> Result<(), CliError> {
    let graph = read_graph(graph_path)?;
    let start_idx = graph
        .node_index(start)
        .ok_or_else(|| CliError::User(format!("unknown start node {start:?}")))?;
    let behaviors = plan_text
        .split_whitespace()
        .map(|b| {
            graph
                .behavior_index(b)
                .ok_or_else(|| CliError::User(format!("unknown behavior {b:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let plan = Plan::new(behaviors);
    let end = graph
        .validate_plan(start_idx, &plan)
        .map_err(|e| CliError::User(e.to_string()))?;
    let end_name = &graph.nodes()[end];
    if let Some(goal) = goal {
        if graph.node_index(goal).is_none() {
            return Err(CliError::User(format!("unknown goal node {goal:?}")));
        }
        if end_name != goal {
            return Err(CliError::User(format!(
                "plan is executable but ends at {end_name}, not {goal}"
            )));
        }
    }
    println!("valid: {} steps, ends at {end_name}", plan.len());
    Ok(())
}

fn cmd_ablate(common: &CommonArgs, corpus_flag: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    cfg.train.corpus = resolve_corpus_path(&cfg.train, corpus_flag)?;
    let corpus = load_corpus_dir(&cfg.train.corpus)?;
    ensure_dir(out)?;

    let heads = [1usize, 4];
    let seeds: Vec<u64> = (0..3).map(|i| cfg.train.seed + i).collect();
    let table = ablate(&cfg.train, &corpus, &heads, &seeds, |h, s, log| {
        eprintln!(
            "[heads {h} seed {s}] epoch {} loss {:.4} val M@0 {:.2}",
            log.epoch, log.train_loss, log.val_m_at_0
        );
    })?;
    print!("{}", table.render());

    let table_path = out.join("ablation.json");
    let payload = serde_json::json!({
        "runs": table.runs,
        "delta_test_new_m_at_0": table.delta_new_m0(),
    });
    let mut text = serde_json::to_string_pretty(&payload).expect("table serializes");
    text.push('\n');
    std::fs::write(&table_path, text).map_err(|e| io_err("cannot write table", &table_path, e))?;

    RunManifest {
        command: "ablate".into(),
        code_version: code_version(),
        seed: cfg.train.seed,
        config_sha256: config_hash(&cfg),
        corpus_sha256: Some(
            hash_corpus_dir(&cfg.train.corpus)
                .map_err(|e| io_err("cannot hash corpus", &cfg.train.corpus, e))?,
        ),
        outputs: vec!["ablation.json".into()],
    }
    .save(&out.join("manifest.json"))
    .map_err(|e| io_err("cannot write manifest", out, e))?;
    Ok(())
}
