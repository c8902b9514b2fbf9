//! Training loop (Adam with global-norm clipping), greedy evaluation,
//! checkpoint bundles, and the head-count ablation harness.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Split, Vocabulary};
use crate::graph::{BehaviorGraph, Plan};
use crate::metrics::{aggregate, compare_plans, MetricsReport};
use crate::model::{Model, ModelConfig};
use crate::seeding::{derive_rng, derive_u64};
use crate::tensor::{
    read_checkpoint, write_checkpoint, CheckpointError, CheckpointMeta, Tape, Tensor,
};

/// Gradients are rescaled whenever their global L2 norm exceeds this.
pub const GRAD_CLIP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub corpus: PathBuf,
    pub epochs: usize,
    pub batch_size: usize,
    pub heads: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub behavior_dim: usize,
    pub d_ctx: usize,
    pub max_decode_len: usize,
    /// Checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_interval: usize,
    /// Per-epoch validation decodes at most this many samples (0 = all).
    pub val_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            corpus: PathBuf::new(),
            epochs: 200,
            batch_size: 256,
            heads: 4,
            learning_rate: 1e-3,
            seed: 0,
            hidden: 64,
            embed_dim: 32,
            behavior_dim: 32,
            d_ctx: 64,
            max_decode_len: 16,
            checkpoint_interval: 25,
            val_cap: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be positive".into());
        }
        if self.heads == 0 || (2 * self.hidden) % self.heads != 0 {
            return fail(format!(
                "heads {} must divide the encoder state width {}",
                self.heads,
                2 * self.hidden
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return fail(format!("learning_rate {} must be finite and >= 0", self.learning_rate));
        }
        for (name, v) in [
            ("hidden", self.hidden),
            ("embed_dim", self.embed_dim),
            ("behavior_dim", self.behavior_dim),
            ("d_ctx", self.d_ctx),
            ("max_decode_len", self.max_decode_len),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("corpus not usable: {0}")]
    Data(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// One line of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(rename = "val_M@0")]
    pub val_m_at_0: f64,
    pub wall_time: f64,
}

#[derive(Debug)]
pub struct Trained {
    pub model: Model,
    pub vocab: Vocabulary,
    pub logs: Vec<EpochLog>,
}

/// Adam with bias correction (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: usize,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut [(String, &mut Tensor)], grads: &BTreeMap<String, Vec<f64>>) {
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (name, tensor) in params {
            let g = match grads.get(name) {
                Some(g) => g,
                None => continue,
            };
            assert_eq!(g.len(), tensor.numel(), "gradient size mismatch for {name}");
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let data = tensor.data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales in place when the global L2 norm exceeds `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for x in g.iter_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// A sample resolved against its graph and encoded with the vocabulary.
#[derive(Debug, Clone)]
struct Prepared {
    tokens: Vec<usize>,
    graph_id: String,
    start: usize,
    goal: usize,
    plan: Plan,
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::TestRepeated => "test_repeated",
        Split::TestNew => "test_new",
    }
}

fn prepare(corpus: &Corpus, vocab: &Vocabulary, split: Split) -> Result<Vec<Prepared>, TrainError> {
    corpus
        .split(split)
        .iter()
        .map(|s| {
            let graph = corpus
                .graphs
                .get(&s.graph_id)
                .ok_or_else(|| TrainError::Data(format!("sample references unknown graph {:?}", s.graph_id)))?;
            let resolved = s
                .resolve(graph)
                .map_err(|e| TrainError::Data(format!("bad sample in {}: {e}", split_name(split))))?;
            Ok(Prepared {
                tokens: vocab.encode(&s.instruction),
                graph_id: s.graph_id.clone(),
                start: resolved.start,
                goal: resolved.goal,
                plan: resolved.plan,
            })
        })
        .collect()
}

fn model_config_from(
    cfg: &TrainConfig,
    corpus: &Corpus,
    vocab: &Vocabulary,
) -> Result<ModelConfig, TrainError> {
    let mut graphs = corpus.graphs.values();
    let first = graphs
        .next()
        .ok_or_else(|| TrainError::Data("corpus has no graphs".into()))?;
    for g in corpus.graphs.values() {
        if g.behaviors() != first.behaviors() {
            return Err(TrainError::Data(
                "graphs disagree on the behavior vocabulary".into(),
            ));
        }
    }
    let node_cap = corpus.graphs.values().map(|g| g.node_count()).max().unwrap();
    let mcfg = ModelConfig {
        vocab_size: vocab.len(),
        behavior_count: first.behavior_count(),
        node_cap,
        hidden: cfg.hidden,
        embed_dim: cfg.embed_dim,
        behavior_dim: cfg.behavior_dim,
        d_ctx: cfg.d_ctx,
        heads: cfg.heads,
        max_decode_len: cfg.max_decode_len,
    };
    mcfg.validate().map_err(TrainError::Config)?;
    Ok(mcfg)
}

/// Builds the vocabulary (training split only) and a freshly initialized
/// model sized to the corpus.
pub fn init_model(cfg: &TrainConfig, corpus: &Corpus) -> Result<(Model, Vocabulary), TrainError> {
    cfg.validate()?;
    if corpus.train.is_empty() {
        return Err(TrainError::Data("train split is empty".into()));
    }
    let vocab = Vocabulary::build(&corpus.train);
    let mcfg = model_config_from(cfg, corpus, &vocab)?;
    let model = Model::init(mcfg, derive_u64(cfg.seed, &["train", "init"]));
    Ok((model, vocab))
}

pub fn train(
    cfg: &TrainConfig,
    corpus: &Corpus,
    checkpoint_dir: Option<&Path>,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<Trained, TrainError> {
    let (model, vocab) = init_model(cfg, corpus)?;
    train_from(cfg, corpus, model, vocab, checkpoint_dir, on_epoch)
}

/// Training loop starting from an existing model (the plain [`train`] wraps
/// this with a fresh one).
pub fn train_from(
    cfg: &TrainConfig,
    corpus: &Corpus,
    mut model: Model,
    vocab: Vocabulary,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Trained, TrainError> {
    cfg.validate()?;
    let train_set = prepare(corpus, &vocab, Split::Train)?;
    if train_set.is_empty() {
        return Err(TrainError::Data("train split is empty".into()));
    }
    let val_split = if corpus.test_repeated.is_empty() {
        Split::Train
    } else {
        Split::TestRepeated
    };
    let mut val_set = prepare(corpus, &vocab, val_split)?;
    if cfg.val_cap > 0 {
        val_set.truncate(cfg.val_cap);
    }

    let mut adam = Adam::new(cfg.learning_rate);
    let mut shuffle_rng = derive_rng(cfg.seed, &["train", "shuffle"]);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;

        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let vals = model.stage(&mut tape, true);
            let mut graph_encs = BTreeMap::new();
            let mut acc = None;
            for &i in chunk {
                let s = &train_set[i];
                let enc = match graph_encs.get(s.graph_id.as_str()) {
                    Some(&e) => e,
                    None => {
                        let e = vals.encode_graph(&mut tape, &corpus.graphs[&s.graph_id]);
                        graph_encs.insert(s.graph_id.as_str(), e);
                        e
                    }
                };
                let loss = vals.sample_loss(&mut tape, &s.tokens, &enc, s.start, &s.plan);
                acc = Some(match acc {
                    None => loss,
                    Some(a) => tape.add(a, loss),
                });
            }
            let total = acc.expect("non-empty batch");
            let batch_loss = tape.scale(total, 1.0 / chunk.len() as f64);
            let loss_value = tape.scalar_value(batch_loss);
            if !loss_value.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch });
            }
            tape.backward(batch_loss).expect("scalar loss");

            let mut grads = BTreeMap::new();
            for ((name, tensor), val) in model.named_params().into_iter().zip(vals.ordered()) {
                let g = match tape.grad(val) {
                    Some(g) => g.to_vec(),
                    None => vec![0.0; tensor.numel()],
                };
                if !g.iter().all(|x| x.is_finite()) {
                    return Err(TrainError::NonFinite { epoch, batch });
                }
                grads.insert(name, g);
            }
            clip_global_norm(&mut grads, GRAD_CLIP);
            adam.step(&mut model.named_params_mut(), &grads);
            loss_sum += loss_value * chunk.len() as f64;
        }

        let val_preds = predict_prepared(&model, corpus, &val_set);
        let exact = val_preds
            .iter()
            .zip(&val_set)
            .filter(|((plan, _), s)| *plan == s.plan)
            .count();
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_m_at_0: 100.0 * exact as f64 / val_set.len().max(1) as f64,
            wall_time: started.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        logs.push(log);

        if let Some(dir) = checkpoint_dir {
            let due = cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0;
            if due || epoch + 1 == cfg.epochs {
                save_model(
                    &dir.join("model.ntck"),
                    &model,
                    &vocab,
                    cfg,
                    epoch + 1,
                    shuffle_rng.get_word_pos(),
                )?;
            }
        }
    }

    Ok(Trained { model, vocab, logs })
}

/// Greedy predictions in input order, encoding each distinct graph once.
fn predict_prepared(model: &Model, corpus: &Corpus, set: &[Prepared]) -> Vec<(Plan, bool)> {
    let mut by_graph: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in set.iter().enumerate() {
        by_graph.entry(s.graph_id.as_str()).or_default().push(i);
    }
    let mut out: Vec<Option<(Plan, bool)>> = vec![None; set.len()];
    for (graph_id, indices) in by_graph {
        let mut tape = Tape::new();
        let vals = model.stage(&mut tape, false);
        let enc = vals.encode_graph(&mut tape, &corpus.graphs[graph_id]);
        for i in indices {
            out[i] = Some(vals.predict(&mut tape, &set[i].tokens, &enc, set[i].start));
        }
    }
    out.into_iter().map(|p| p.expect("every sample predicted")).collect()
}

/// Per-sample evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub instruction: Vec<String>,
    pub graph_id: String,
    pub start: String,
    pub goal: String,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
    pub edit_distance: usize,
    pub f1: f64,
    pub truncated: bool,
    /// Whether every predicted behavior had an out-edge when executed from
    /// the start node.
    pub plan_valid: bool,
    pub reaches_goal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub records: Vec<SampleResult>,
}

pub fn evaluate(
    model: &Model,
    vocab: &Vocabulary,
    corpus: &Corpus,
    split: Split,
) -> Result<Evaluation, TrainError> {
    let prepared = prepare(corpus, vocab, split)?;
    if prepared.is_empty() {
        return Err(TrainError::Data(format!("split {} is empty", split_name(split))));
    }
    let preds = predict_prepared(model, corpus, &prepared);

    let mut comparisons = Vec::with_capacity(prepared.len());
    let mut records = Vec::with_capacity(prepared.len());
    for (s, sample, (plan, truncated)) in izip(&prepared, corpus.split(split), &preds) {
        let graph = &corpus.graphs[&s.graph_id];
        let cmp = compare_plans(plan, &s.plan);
        let (plan_valid, reaches_goal) = match graph.validate_plan(s.start, plan) {
            Ok(end) => (true, end == s.goal),
            Err(_) => (false, false),
        };
        records.push(SampleResult {
            instruction: sample.instruction.clone(),
            graph_id: s.graph_id.clone(),
            start: sample.start.clone(),
            goal: sample.goal.clone(),
            predicted: plan.behaviors.iter().map(|&b| graph.behaviors()[b].clone()).collect(),
            gold: sample.target_plan.clone(),
            edit_distance: cmp.ed,
            f1: cmp.f1,
            truncated: *truncated,
            plan_valid,
            reaches_goal,
        });
        comparisons.push(cmp);
    }
    let report = aggregate(&comparisons).expect("non-empty split");
    Ok(Evaluation { report, records })
}

fn izip<'a>(
    prepared: &'a [Prepared],
    samples: &'a [crate::corpus::Sample],
    preds: &'a [(Plan, bool)],
) -> impl Iterator<Item = (&'a Prepared, &'a crate::corpus::Sample, &'a (Plan, bool))> {
    prepared
        .iter()
        .zip(samples)
        .zip(preds)
        .map(|((a, b), c)| (a, b, c))
}

/// A single instruction decoded against a standalone graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Translation {
    pub behaviors: Vec<String>,
    pub truncated: bool,
    pub plan_valid: bool,
    /// Node reached when the plan executes cleanly from the start.
    pub end_node: Option<String>,
}

pub fn translate(
    model: &Model,
    vocab: &Vocabulary,
    graph: &BehaviorGraph,
    start: &str,
    instruction: &[String],
) -> Result<Translation, TrainError> {
    if instruction.is_empty() {
        return Err(TrainError::Data("instruction is empty".into()));
    }
    let start_idx = graph
        .node_index(start)
        .ok_or_else(|| TrainError::Data(format!("unknown start node {start:?}")))?;
    if graph.behavior_count() != model.config.behavior_count {
        return Err(TrainError::Data(format!(
            "graph has {} behaviors, model was trained with {}",
            graph.behavior_count(),
            model.config.behavior_count
        )));
    }
    if graph.node_count() > model.config.node_cap {
        return Err(TrainError::Data(format!(
            "graph has {} nodes, model supports at most {}",
            graph.node_count(),
            model.config.node_cap
        )));
    }
    let tokens = vocab.encode(instruction);
    let mut tape = Tape::new();
    let vals = model.stage(&mut tape, false);
    let enc = vals.encode_graph(&mut tape, graph);
    let (plan, truncated) = vals.predict(&mut tape, &tokens, &enc, start_idx);
    let end = graph.validate_plan(start_idx, &plan).ok();
    Ok(Translation {
        behaviors: plan.behaviors.iter().map(|&b| graph.behaviors()[b].clone()).collect(),
        truncated,
        plan_valid: end.is_some(),
        end_node: end.map(|n| graph.nodes()[n].clone()),
    })
}

/// Checkpoint metadata payload: everything needed to rebuild the model and
/// run it on new instructions.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Bundle {
    model: ModelConfig,
    train: TrainConfig,
    vocab: Vec<String>,
}

pub fn save_model(
    path: &Path,
    model: &Model,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    epoch: usize,
    rng_word_pos: u128,
) -> Result<(), TrainError> {
    let bundle = Bundle {
        model: model.config.clone(),
        train: cfg.clone(),
        vocab: vocab.tokens().to_vec(),
    };
    let meta = CheckpointMeta {
        format_version: 1,
        epoch,
        rng_seed: cfg.seed,
        rng_word_pos,
        config: serde_json::to_value(&bundle).expect("bundle serializes"),
    };
    write_checkpoint(path, &model.to_tensors(), &meta)?;
    Ok(())
}

pub struct SavedModel {
    pub model: Model,
    pub vocab: Vocabulary,
    pub train_config: TrainConfig,
    pub meta: CheckpointMeta,
}

pub fn load_model(path: &Path) -> Result<SavedModel, TrainError> {
    let (tensors, meta) = read_checkpoint(path)?;
    let bundle: Bundle = serde_json::from_value(meta.config.clone())
        .map_err(|e| TrainError::Data(format!("checkpoint metadata: {e}")))?;
    bundle.model.validate().map_err(TrainError::Config)?;
    if bundle.vocab.len() != bundle.model.vocab_size {
        return Err(TrainError::Data(format!(
            "checkpoint vocabulary has {} tokens, model expects {}",
            bundle.vocab.len(),
            bundle.model.vocab_size
        )));
    }
    let mut model = Model::init(bundle.model, 0);
    model.load_tensors(&tensors).map_err(TrainError::Data)?;
    Ok(SavedModel {
        model,
        vocab: Vocabulary::from(bundle.vocab),
        train_config: bundle.train,
        meta,
    })
}

/// One trained configuration of the head-count comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRun {
    pub heads: usize,
    pub seed: u64,
    pub test_repeated: MetricsReport,
    pub test_new: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub runs: Vec<AblationRun>,
}

/// Per-(heads, split) metrics averaged over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AblationRow {
    pub heads: usize,
    pub f1: f64,
    pub m_at: [f64; 3],
    pub ed: f64,
}

impl AblationTable {
    pub fn head_counts(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.heads) {
                out.push(r.heads);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn mean_row(&self, heads: usize, split: Split) -> AblationRow {
        let reports: Vec<&MetricsReport> = self
            .runs
            .iter()
            .filter(|r| r.heads == heads)
            .map(|r| match split {
                Split::TestNew => &r.test_new,
                _ => &r.test_repeated,
            })
            .collect();
        let n = reports.len() as f64;
        let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
        AblationRow {
            heads,
            f1: mean(&|r| r.f1),
            m_at: [
                mean(&|r| r.m_at[0]),
                mean(&|r| r.m_at[1]),
                mean(&|r| r.m_at[2]),
            ],
            ed: mean(&|r| r.ed),
        }
    }

    /// Mean Test-New M@0 of the largest head count minus the smallest.
    pub fn delta_new_m0(&self) -> Option<f64> {
        let heads = self.head_counts();
        let (&lo, &hi) = (heads.first()?, heads.last()?);
        if lo == hi {
            return None;
        }
        Some(self.mean_row(hi, Split::TestNew).m_at[0] - self.mean_row(lo, Split::TestNew).m_at[0])
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("heads  split          F1      M@0     M@1     M@2     ED\n");
        for h in self.head_counts() {
            for split in [Split::TestRepeated, Split::TestNew] {
                let row = self.mean_row(h, split);
                out.push_str(&format!(
                    "{:<6} {:<13} {:>6.2}  {:>6.2}  {:>6.2}  {:>6.2}  {:>5.2}\n",
                    h,
                    split_name(split),
                    row.f1,
                    row.m_at[0],
                    row.m_at[1],
                    row.m_at[2],
                    row.ed
                ));
            }
        }
        match self.delta_new_m0() {
            Some(d) => {
                out.push_str(&format!("Test-New M@0 delta (most heads - fewest): {d:+.2}\n"));
                if d < 0.0 {
                    out.push_str("note: direction differs from the expected multi-head advantage\n");
                }
            }
            None => out.push_str("Test-New M@0 delta: n/a (single head count)\n"),
        }
        out
    }
}

/// Trains every (heads, seed) combination on the same corpus and evaluates
/// both held-out splits.
pub fn ablate(
    base: &TrainConfig,
    corpus: &Corpus,
    heads: &[usize],
    seeds: &[u64],
    mut progress: impl FnMut(usize, u64, &EpochLog),
) -> Result<AblationTable, TrainError> {
    if heads.is_empty() || seeds.is_empty() {
        return Err(TrainError::Config("ablation needs at least one head count and seed".into()));
    }
    let mut runs = Vec::new();
    for &h in heads {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.heads = h;
            cfg.seed = seed;
            let trained = train(&cfg, corpus, None, |log| progress(h, seed, log))?;
            let test_repeated =
                evaluate(&trained.model, &trained.vocab, corpus, Split::TestRepeated)?.report;
            let test_new = evaluate(&trained.model, &trained.vocab, corpus, Split::TestNew)?.report;
            runs.push(AblationRun {
                heads: h,
                seed,
                test_repeated,
                test_new,
            });
        }
    }
    Ok(AblationTable { runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, CorpusConfig, DEFAULT_BEHAVIORS};
    use crate::metrics::edit_distance;

    fn tiny_corpus() -> Corpus {
        let cfg = CorpusConfig {
            num_maps: 3,
            rooms_min: 4,
            rooms_max: 6,
            behavior_vocab: DEFAULT_BEHAVIORS[..6].iter().map(|s| s.to_string()).collect(),
            samples_per_map: 8,
            template_grammar_seed: 1,
            split_ratios: (0.6, 0.2, 0.2),
        };
        build_corpus(&cfg, 11).unwrap()
    }

    fn tiny_train_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            heads: 2,
            learning_rate: 1e-3,
            seed: 7,
            hidden: 8,
            embed_dim: 6,
            behavior_dim: 4,
            d_ctx: 6,
            max_decode_len: 6,
            checkpoint_interval: 0,
            val_cap: 0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        let mut p = Tensor::new(vec![1], vec![1.0]).with_grad();
        let mut adam = Adam::new(0.01);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), vec![0.5]);
        adam.step(&mut [("p".to_string(), &mut p)], &grads);

        let m_hat: f64 = (0.1 * 0.5) / (1.0 - 0.9);
        let v_hat: f64 = (0.001 * 0.25) / (1.0 - 0.999);
        let expected = 1.0 - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);

        grads.insert("p".to_string(), vec![-0.25]);
        adam.step(&mut [("p".to_string(), &mut p)], &grads);
        let m2 = 0.9 * 0.05 + 0.1 * (-0.25);
        let v2 = 0.999 * 0.00025 + 0.001 * 0.0625;
        let expected2 =
            expected - 0.01 * (m2 / (1.0 - 0.9f64.powi(2))) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p.data()[0] - expected2).abs() < 1e-15);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = Tensor::new(vec![1], vec![10.0]).with_grad();
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            let g = 2.0 * (p.data()[0] - 3.0);
            let mut grads = BTreeMap::new();
            grads.insert("p".to_string(), vec![g]);
            adam.step(&mut [("p".to_string(), &mut p)], &grads);
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-3, "got {}", p.data()[0]);
    }

    #[test]
    fn clipping_rescales_only_oversized_gradients() {
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), vec![3.0, 0.0]);
        grads.insert("b".to_string(), vec![4.0]);
        let norm = clip_global_norm(&mut grads, GRAD_CLIP);
        assert_eq!(norm, 5.0);
        assert_eq!(grads["a"], vec![3.0, 0.0]);

        grads.insert("a".to_string(), vec![6.0, 0.0]);
        grads.insert("b".to_string(), vec![8.0]);
        let norm = clip_global_norm(&mut grads, GRAD_CLIP);
        assert_eq!(norm, 10.0);
        assert!((grads["a"][0] - 3.0).abs() < 1e-12);
        assert!((grads["b"][0] - 4.0).abs() < 1e-12);
        let after: f64 = grads.values().flatten().map(|x| x * x).sum::<f64>().sqrt();
        assert!(after <= GRAD_CLIP + 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let corpus = tiny_corpus();
        let mut cfg = tiny_train_config();
        cfg.learning_rate = 0.0;
        cfg.epochs = 1;
        let (initial, _) = init_model(&cfg, &corpus).unwrap();
        let trained = train(&cfg, &corpus, None, |_| {}).unwrap();
        for ((name, a), (_, b)) in initial.named_params().into_iter().zip(trained.model.named_params()) {
            assert_eq!(a.data(), b.data(), "{name} moved with lr = 0");
        }
    }

    #[test]
    fn loss_decreases_on_a_tiny_corpus() {
        let corpus = tiny_corpus();
        let mut cfg = tiny_train_config();
        cfg.epochs = 10;
        cfg.learning_rate = 0.01;
        let trained = train(&cfg, &corpus, None, |_| {}).unwrap();
        let first = trained.logs.first().unwrap().train_loss;
        let last = trained.logs.last().unwrap().train_loss;
        assert!(last < first, "loss went {first} -> {last}");
        assert!(trained.logs.iter().all(|l| l.train_loss.is_finite()));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = tiny_corpus();
        let cfg = tiny_train_config();
        let a = train(&cfg, &corpus, None, |_| {}).unwrap();
        let b = train(&cfg, &corpus, None, |_| {}).unwrap();
        let key = |logs: &[EpochLog]| -> Vec<(usize, u64, u64)> {
            logs.iter()
                .map(|l| (l.epoch, l.train_loss.to_bits(), l.val_m_at_0.to_bits()))
                .collect()
        };
        assert_eq!(key(&a.logs), key(&b.logs));
        for ((name, ta), (_, tb)) in a.model.named_params().into_iter().zip(b.model.named_params()) {
            assert_eq!(ta.data(), tb.data(), "{name} diverged between identical runs");
        }
    }

    #[test]
    fn non_finite_loss_reports_its_coordinates() {
        let corpus = tiny_corpus();
        let cfg = tiny_train_config();
        let (mut model, vocab) = init_model(&cfg, &corpus).unwrap();
        let n = model.word_embed.numel();
        model.word_embed = Tensor::new(model.word_embed.shape().to_vec(), vec![f64::NAN; n]).with_grad();
        let err = train_from(&cfg, &corpus, model, vocab, None, |_| {}).unwrap_err();
        match err {
            TrainError::NonFinite { epoch, batch } => {
                assert_eq!(epoch, 0);
                assert_eq!(batch, 0);
            }
            other => panic!("expected NonFinite, got {other}"),
        }
    }

    #[test]
    fn evaluation_records_are_internally_consistent() {
        let corpus = tiny_corpus();
        let cfg = tiny_train_config();
        let (model, vocab) = init_model(&cfg, &corpus).unwrap();
        let eval = evaluate(&model, &vocab, &corpus, Split::Train).unwrap();
        assert_eq!(eval.records.len(), corpus.train.len());
        assert_eq!(eval.report.n, corpus.train.len());

        let mut comparisons = Vec::new();
        for (rec, sample) in eval.records.iter().zip(&corpus.train) {
            assert_eq!(rec.gold, sample.target_plan);
            let graph = &corpus.graphs[&rec.graph_id];
            let to_plan = |names: &[String]| {
                Plan::new(names.iter().map(|b| graph.behavior_index(b).unwrap()).collect())
            };
            let pred = to_plan(&rec.predicted);
            let gold = to_plan(&rec.gold);
            assert_eq!(rec.edit_distance, edit_distance(&pred, &gold));
            if rec.reaches_goal {
                assert!(rec.plan_valid);
                assert_eq!(graph.validate_plan(graph.node_index(&rec.start).unwrap(), &pred).unwrap(),
                    graph.node_index(&rec.goal).unwrap());
            }
            comparisons.push(compare_plans(&pred, &gold));
        }
        assert_eq!(eval.report, aggregate(&comparisons).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_reproduces_the_evaluation() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus();
        let cfg = tiny_train_config();
        let trained = train(&cfg, &corpus, Some(dir.path()), |_| {}).unwrap();

        let path = dir.path().join("model.ntck");
        let saved = load_model(&path).unwrap();
        assert_eq!(saved.meta.epoch, cfg.epochs);
        assert_eq!(saved.train_config, cfg);
        assert_eq!(saved.model.config, trained.model.config);

        let before = evaluate(&trained.model, &trained.vocab, &corpus, Split::TestNew).unwrap();
        let after = evaluate(&saved.model, &saved.vocab, &corpus, Split::TestNew).unwrap();
        assert_eq!(before.report, after.report);
        assert_eq!(before.records, after.records);
    }

    #[test]
    fn translate_maps_prediction_onto_graph_names() {
        let corpus = tiny_corpus();
        let cfg = tiny_train_config();
        let (model, vocab) = init_model(&cfg, &corpus).unwrap();
        let sample = &corpus.train[0];
        let graph = &corpus.graphs[&sample.graph_id];
        let tr = translate(&model, &vocab, graph, &sample.start, &sample.instruction).unwrap();
        for b in &tr.behaviors {
            assert!(graph.behavior_index(b).is_some());
        }
        if tr.plan_valid {
            assert!(tr.end_node.is_some());
        }

        assert!(matches!(
            translate(&model, &vocab, graph, "no-such-node", &sample.instruction),
            Err(TrainError::Data(_))
        ));
        assert!(matches!(
            translate(&model, &vocab, graph, &sample.start, &[]),
            Err(TrainError::Data(_))
        ));
    }

    #[test]
    fn ablation_table_covers_every_combination() {
        let corpus = tiny_corpus();
        let mut cfg = tiny_train_config();
        cfg.epochs = 1;
        let table = ablate(&cfg, &corpus, &[1, 2], &[0, 1], |_, _, _| {}).unwrap();
        assert_eq!(table.runs.len(), 4);
        assert_eq!(table.head_counts(), vec![1, 2]);
        assert!(table.delta_new_m0().is_some());
        let rendered = table.render();
        assert!(rendered.contains("test_repeated"));
        assert!(rendered.contains("test_new"));
        assert!(rendered.contains("delta"));
    }

    #[test]
    fn mean_rows_average_over_seeds() {
        let mk = |f1: f64, m0: f64| MetricsReport {
            f1,
            m_at: [m0, m0 + 1.0, m0 + 2.0],
            ed: 1.0,
            n: 10,
        };
        let table = AblationTable {
            runs: vec![
                AblationRun { heads: 1, seed: 0, test_repeated: mk(50.0, 40.0), test_new: mk(30.0, 20.0) },
                AblationRun { heads: 1, seed: 1, test_repeated: mk(60.0, 50.0), test_new: mk(40.0, 30.0) },
                AblationRun { heads: 4, seed: 0, test_repeated: mk(70.0, 60.0), test_new: mk(50.0, 45.0) },
                AblationRun { heads: 4, seed: 1, test_repeated: mk(80.0, 70.0), test_new: mk(60.0, 55.0) },
            ],
        };
        let row = table.mean_row(1, Split::TestRepeated);
        assert_eq!(row.f1, 55.0);
        assert_eq!(row.m_at[0], 45.0);
        assert_eq!(table.delta_new_m0(), Some(25.0));
    }
}
