//! Synthetic corpus generation and dataset I/O.
//!
//! Environments are strongly connected behavior graphs with 6–65 rooms.
//! Each sample pairs a templated natural-language instruction with its
//! shortest ground-truth plan. Samples are split train / test-repeated /
//! test-new: test-repeated reuses training maps with unseen
//! (start, goal, instruction) combinations, test-new uses maps no training
//! sample ever references.
//!
//! Generation is a pure function of (config, seed): rebuilding a corpus
//! yields byte-identical files.

pub mod embeddings;
pub mod grammar;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{parse_graph, serialize_graph, BehaviorGraph, GraphError, Plan, Triplet};
use crate::seeding::{derive_rng, derive_u64};

pub use embeddings::load_pretrained_embeddings;

/// Behavior vocabulary used when a config does not supply one.
pub const DEFAULT_BEHAVIORS: [&str; 10] = [
    "cross_hall",
    "enter_kitchen",
    "enter_lab",
    "enter_office",
    "exit_kitchen",
    "exit_lab",
    "exit_office",
    "follow_corridor",
    "pass_lobby",
    "take_stairs",
];

const ROOM_TYPES: [&str; 8] = [
    "bathroom", "corridor", "hall", "kitchen", "lab", "lobby", "office", "storage",
];

/// Sample path lengths are drawn uniformly from 1..=MAX_PLAN_LEN.
pub const MAX_PLAN_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error("corpus generation failed: {0}")]
    Generation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corpus record {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error("graph {id}: {source}")]
    Graph { id: String, source: GraphError },
    #[error("embeddings file line {line}: {msg}")]
    Embeddings { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub num_maps: usize,
    pub rooms_min: usize,
    pub rooms_max: usize,
    pub behavior_vocab: Vec<String>,
    pub samples_per_map: usize,
    pub template_grammar_seed: u64,
    /// (train, test_repeated, test_new) fractions; must sum to 1.
    pub split_ratios: (f64, f64, f64),
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            num_maps: 100,
            rooms_min: 6,
            rooms_max: 65,
            behavior_vocab: DEFAULT_BEHAVIORS.iter().map(|s| s.to_string()).collect(),
            samples_per_map: 100,
            template_grammar_seed: 0,
            split_ratios: (0.8, 0.1, 0.1),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |msg: String| Err(CorpusError::Config(msg));
        if self.rooms_min < 2 {
            return fail(format!("rooms_min must be at least 2, got {}", self.rooms_min));
        }
        if self.rooms_max < self.rooms_min {
            return fail(format!(
                "rooms_max {} below rooms_min {}",
                self.rooms_max, self.rooms_min
            ));
        }
        if self.behavior_vocab.is_empty() {
            return fail("behavior_vocab is empty".into());
        }
        if self.num_maps == 0 || self.samples_per_map == 0 {
            return fail("num_maps and samples_per_map must be positive".into());
        }
        let (a, b, c) = self.split_ratios;
        if a < 0.0 || b < 0.0 || c < 0.0 || (a + b + c - 1.0).abs() > 1e-9 {
            return fail(format!("split_ratios {:?} must be nonnegative and sum to 1", self.split_ratios));
        }
        Ok(())
    }

    fn test_new_map_count(&self) -> Result<usize, CorpusError> {
        let (_, _, new) = self.split_ratios;
        let count = ((self.num_maps as f64 * new).round() as usize).max(usize::from(new > 0.0));
        if count >= self.num_maps {
            return Err(CorpusError::Config(format!(
                "{} maps is too few to reserve {count} for test-new",
                self.num_maps
            )));
        }
        Ok(count)
    }
}

/// One instruction-to-plan sample. Node and behavior ids are strings so the
/// record stays meaningful next to its graph document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub instruction: Vec<String>,
    pub graph_id: String,
    pub start: String,
    pub goal: String,
    pub target_plan: Vec<String>,
}

impl Sample {
    /// Resolves ids against the sample's graph, checking that the plan
    /// actually reaches the goal.
    pub fn resolve(&self, graph: &BehaviorGraph) -> Result<ResolvedSample, String> {
        let start = graph
            .node_index(&self.start)
            .ok_or_else(|| format!("unknown start node {:?}", self.start))?;
        let goal = graph
            .node_index(&self.goal)
            .ok_or_else(|| format!("unknown goal node {:?}", self.goal))?;
        let behaviors = self
            .target_plan
            .iter()
            .map(|b| {
                graph
                    .behavior_index(b)
                    .ok_or_else(|| format!("unknown behavior {b:?}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let plan = Plan::new(behaviors);
        match graph.validate_plan(start, &plan) {
            Ok(reached) if reached == goal => Ok(ResolvedSample { start, goal, plan }),
            Ok(reached) => Err(format!(
                "plan reaches node {:?}, not the goal {:?}",
                graph.nodes()[reached],
                self.goal
            )),
            Err(e) => Err(e.to_string()),
        }
    }
}

/// A sample's ids resolved to graph indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedSample {
    pub start: usize,
    pub goal: usize,
    pub plan: Plan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestRepeated,
    TestNew,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub graphs: BTreeMap<String, BehaviorGraph>,
    pub train: Vec<Sample>,
    pub test_repeated: Vec<Sample>,
    pub test_new: Vec<Sample>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::TestRepeated => &self.test_repeated,
            Split::TestNew => &self.test_new,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test_repeated.len() + self.test_new.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generates one strongly connected environment: a Hamiltonian cycle over
/// all rooms (guaranteeing mutual reachability) plus random extra edges.
pub fn generate_environment(config: &CorpusConfig, seed: u64) -> Result<BehaviorGraph, CorpusError> {
    config.validate()?;
    let mut rng = derive_rng(seed, &["environment"]);
    let rooms = rng.random_range(config.rooms_min..=config.rooms_max);
    let behaviors = &config.behavior_vocab;

    let mut type_counts = BTreeMap::new();
    let nodes: Vec<String> = (0..rooms)
        .map(|_| {
            let t = ROOM_TYPES[rng.random_range(0..ROOM_TYPES.len())];
            let n = type_counts.entry(t).or_insert(0usize);
            *n += 1;
            format!("{t}{n}")
        })
        .collect();

    let mut order: Vec<usize> = (0..rooms).collect();
    order.shuffle(&mut rng);
    let mut used = BTreeSet::new();
    let mut edges = Vec::new();
    let mut push = |u: usize, b: usize, v: usize, used: &mut BTreeSet<(usize, usize)>| {
        used.insert((u, b));
        edges.push((nodes[u].clone(), behaviors[b].clone(), nodes[v].clone()));
    };
    for i in 0..rooms {
        let (u, v) = (order[i], order[(i + 1) % rooms]);
        push(u, rng.random_range(0..behaviors.len()), v, &mut used);
    }
    let extra_target = rng.random_range(rooms..=2 * rooms);
    let mut added = 0;
    for _ in 0..10 * extra_target {
        if added == extra_target {
            break;
        }
        let u = rng.random_range(0..rooms);
        let v = rng.random_range(0..rooms);
        let b = rng.random_range(0..behaviors.len());
        if u != v && !used.contains(&(u, b)) {
            push(u, b, v, &mut used);
            added += 1;
        }
    }

    BehaviorGraph::new(nodes, behaviors.clone(), &edges)
        .map_err(|e| CorpusError::Generation(e.to_string()))
}

/// Nodes grouped by plan distance from `start`; index 0 is the start itself.
fn distance_layers(graph: &BehaviorGraph, start: usize) -> Vec<Vec<usize>> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); graph.node_count()];
    for e in graph.edges() {
        adj[e.n1].push(e.n2);
    }
    let mut dist = vec![usize::MAX; graph.node_count()];
    dist[start] = 0;
    let mut layers = vec![vec![start]];
    let mut frontier = vec![start];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &u in &frontier {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    next.push(v);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        next.sort();
        next.dedup();
        layers.push(next.clone());
        frontier = next;
    }
    layers
}

fn generate_map_samples(
    graph: &BehaviorGraph,
    graph_id: &str,
    count: usize,
    sample_rng: &mut rand_chacha::ChaCha20Rng,
    instr_rng: &mut rand_chacha::ChaCha20Rng,
) -> Result<Vec<Sample>, CorpusError> {
    let mut samples = Vec::with_capacity(count);
    let mut keys = BTreeSet::new();
    let budget = 100 * count;
    for _ in 0..budget {
        if samples.len() == count {
            break;
        }
        let start = sample_rng.random_range(0..graph.node_count());
        let layers = distance_layers(graph, start);
        let dmax = (layers.len() - 1).min(MAX_PLAN_LEN);
        if dmax == 0 {
            continue;
        }
        let len = sample_rng.random_range(1..=MAX_PLAN_LEN).min(dmax);
        let layer = &layers[len];
        let goal = layer[sample_rng.random_range(0..layer.len())];
        let plan = graph
            .shortest_plan(start, goal)
            .expect("goal drawn from reachable layer");

        let mut here = start;
        let mut path = Vec::with_capacity(plan.len());
        for &b in &plan.behaviors {
            let next = graph.successor(here, b).expect("plan follows edges");
            path.push(Triplet { n1: here, b, n2: next });
            here = next;
        }
        let instruction = grammar::generate_instruction(graph, &path, instr_rng);
        let key = (start, goal, instruction.clone());
        if !keys.insert(key) {
            continue;
        }
        samples.push(Sample {
            instruction,
            graph_id: graph_id.to_string(),
            start: graph.nodes()[start].clone(),
            goal: graph.nodes()[goal].clone(),
            target_plan: plan
                .behaviors
                .iter()
                .map(|&b| graph.behaviors()[b].clone())
                .collect(),
        });
    }
    if samples.len() < count {
        return Err(CorpusError::Generation(format!(
            "map {graph_id}: only {} distinct samples found after {budget} attempts",
            samples.len()
        )));
    }
    Ok(samples)
}

/// Builds the full corpus: maps, samples, and the three splits.
pub fn build_corpus(config: &CorpusConfig, seed: u64) -> Result<Corpus, CorpusError> {
    config.validate()?;
    let new_maps = config.test_new_map_count()?;
    let width = (config.num_maps.max(1) as f64).log10().floor() as usize + 1;
    let width = width.max(3);

    let mut corpus = Corpus::default();
    for m in 0..config.num_maps {
        let graph_id = format!("map{m:0width$}");
        let graph = generate_environment(config, derive_u64(seed, &["corpus", "graph", &graph_id]))?;
        let mut sample_rng = derive_rng(seed, &["corpus", "samples", &graph_id]);
        let mut instr_rng = derive_rng(config.template_grammar_seed, &["grammar", &graph_id]);
        let mut samples = generate_map_samples(
            &graph,
            &graph_id,
            config.samples_per_map,
            &mut sample_rng,
            &mut instr_rng,
        )?;

        let is_new_map = m >= config.num_maps - new_maps;
        if is_new_map {
            corpus.test_new.append(&mut samples);
        } else {
            let (train_r, rep_r, _) = config.split_ratios;
            let held_frac = if train_r + rep_r > 0.0 { rep_r / (train_r + rep_r) } else { 0.0 };
            let held = (config.samples_per_map as f64 * held_frac).round() as usize;
            let cut = samples.len() - held.min(samples.len());
            corpus.test_repeated.extend(samples.split_off(cut));
            corpus.train.append(&mut samples);
        }
        corpus.graphs.insert(graph_id, graph);
    }
    Ok(corpus)
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    #[serde(flatten)]
    sample: Sample,
    split: Split,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `<dir>/corpus.jsonl` plus one graph document per map under
/// `<dir>/graphs/`.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<(), CorpusError> {
    let graphs_dir = dir.join("graphs");
    std::fs::create_dir_all(&graphs_dir).map_err(io_err(&graphs_dir))?;
    for (id, graph) in &corpus.graphs {
        let path = graphs_dir.join(format!("{id}.json"));
        std::fs::write(&path, serialize_graph(graph)).map_err(io_err(&path))?;
    }

    let path = dir.join("corpus.jsonl");
    let mut out = Vec::new();
    for (split, samples) in [
        (Split::Train, &corpus.train),
        (Split::TestRepeated, &corpus.test_repeated),
        (Split::TestNew, &corpus.test_new),
    ] {
        for sample in samples {
            let record = SampleRecord {
                sample: sample.clone(),
                split,
            };
            serde_json::to_writer(&mut out, &record).expect("sample serializes");
            out.push(b'\n');
        }
    }
    let mut file = std::fs::File::create(&path).map_err(io_err(&path))?;
    file.write_all(&out).map_err(io_err(&path))?;
    Ok(())
}

/// Loads a corpus directory, validating every record against its graph.
pub fn load_corpus(dir: &Path) -> Result<Corpus, CorpusError> {
    let graphs_dir = dir.join("graphs");
    let mut corpus = Corpus::default();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(&graphs_dir)
        .map_err(io_err(&graphs_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    for path in entries {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let graph = parse_graph(&text).map_err(|source| CorpusError::Graph {
            id: id.clone(),
            source,
        })?;
        corpus.graphs.insert(id, graph);
    }

    let path = dir.join("corpus.jsonl");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let record: SampleRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::Record {
                line: lineno,
                msg: e.to_string(),
            })?;
        let record_err = |msg: String| CorpusError::Record { line: lineno, msg };
        if record.sample.instruction.is_empty() {
            return Err(record_err("instruction is empty".into()));
        }
        if record.sample.target_plan.is_empty() {
            return Err(record_err("target_plan is empty".into()));
        }
        let graph = corpus
            .graphs
            .get(&record.sample.graph_id)
            .ok_or_else(|| record_err(format!("unknown graph {:?}", record.sample.graph_id)))?;
        record.sample.resolve(graph).map_err(record_err)?;
        match record.split {
            Split::Train => corpus.train.push(record.sample),
            Split::TestRepeated => corpus.test_repeated.push(record.sample),
            Split::TestNew => corpus.test_new.push(record.sample),
        }
    }
    Ok(corpus)
}

/// Instruction-token vocabulary with fixed reserved slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const SOP: usize = 2;
    pub const EOP: usize = 3;

    const RESERVED: [&'static str; 4] = ["<pad>", "<unk>", "<sop>", "<eop>"];

    /// Builds the vocabulary from training samples only. Tokens are indexed
    /// by descending frequency, ties broken lexicographically.
    pub fn build(samples: &[Sample]) -> Vocabulary {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in samples {
            for tok in &s.instruction {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ordered: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !Self::RESERVED.contains(t))
            .collect();
        ordered.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut tokens: Vec<String> = Self::RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(ordered.into_iter().map(|(t, _)| t.to_string()));
        Vocabulary::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Index of a token, or UNK for out-of-vocabulary words.
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t)).collect()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}
