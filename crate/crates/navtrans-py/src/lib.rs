//! Python bindings: behavior graphs, plan metrics, corpus generation, and
//! the trained translation model.

use std::path::{Path, PathBuf};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use navtrans::corpus::{build_corpus, load_corpus, save_corpus, CorpusConfig, Split, Vocabulary};
use navtrans::graph::{parse_graph, serialize_graph, BehaviorGraph, Plan};
use navtrans::metrics::{edit_distance as ed_plans, f1_plan, MetricsReport};
use navtrans::model::Model;
use navtrans::training::{
    evaluate as eval_model, load_model, save_model, train as train_model, translate as translate_one,
    EpochLog, TrainConfig,
};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Turns behavior-name sequences into index plans under a shared alphabet so
/// the metric sees equal names as equal symbols.
fn plans_from_names(pred: &[String], gold: &[String]) -> (Plan, Plan) {
    let mut alphabet: Vec<&str> = Vec::new();
    for name in pred.iter().chain(gold) {
        if !alphabet.contains(&name.as_str()) {
            alphabet.push(name);
        }
    }
    let to_plan = |names: &[String]| {
        Plan::new(
            names
                .iter()
                .map(|n| alphabet.iter().position(|a| a == n).unwrap())
                .collect(),
        )
    };
    (to_plan(pred), to_plan(gold))
}

/// Minimum insertions, deletions, and substitutions turning `pred` into `gold`.
#[pyfunction]
fn edit_distance(pred: Vec<String>, gold: Vec<String>) -> usize {
    let (p, g) = plans_from_names(&pred, &gold);
    ed_plans(&p, &g)
}

/// Multiset F1 overlap between two plans.
#[pyfunction]
fn plan_f1(pred: Vec<String>, gold: Vec<String>) -> f64 {
    let (p, g) = plans_from_names(&pred, &gold);
    f1_plan(&p, &g)
}

/// Generates a corpus directory; returns (maps, samples) written.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=0, config_json=None))]
fn generate_corpus(out_dir: &str, seed: u64, config_json: Option<&str>) -> PyResult<(usize, usize)> {
    let cfg: CorpusConfig = match config_json {
        None => CorpusConfig::default(),
        Some(text) => serde_json::from_str(text).map_err(value_err)?,
    };
    let corpus = build_corpus(&cfg, seed).map_err(value_err)?;
    std::fs::create_dir_all(out_dir).map_err(value_err)?;
    save_corpus(&corpus, Path::new(out_dir)).map_err(value_err)?;
    Ok((corpus.graphs.len(), corpus.len()))
}

/// A behavioral navigation graph: named nodes connected by behavior-labeled
/// directed edges, deterministic per (node, behavior).
#[pyclass(name = "BehaviorGraph")]
struct PyBehaviorGraph {
    inner: BehaviorGraph,
}

#[pymethods]
impl PyBehaviorGraph {
    #[new]
    fn new(
        nodes: Vec<String>,
        behaviors: Vec<String>,
        edges: Vec<(String, String, String)>,
    ) -> PyResult<Self> {
        Ok(PyBehaviorGraph {
            inner: BehaviorGraph::new(nodes, behaviors, &edges).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyBehaviorGraph { inner: parse_graph(text).map_err(value_err)? })
    }

    fn to_json(&self) -> String {
        serialize_graph(&self.inner)
    }

    fn nodes(&self) -> Vec<String> {
        self.inner.nodes().to_vec()
    }

    fn behaviors(&self) -> Vec<String> {
        self.inner.behaviors().to_vec()
    }

    fn edges(&self) -> Vec<(String, String, String)> {
        self.inner
            .edges()
            .iter()
            .map(|t| {
                (
                    self.inner.nodes()[t.n1].clone(),
                    self.inner.behaviors()[t.b].clone(),
                    self.inner.nodes()[t.n2].clone(),
                )
            })
            .collect()
    }

    /// Executes a behavior-name sequence from `start`; returns the node it
    /// ends at, or raises if some step has no edge.
    fn validate_plan(&self, start: &str, plan: Vec<String>) -> PyResult<String> {
        let start_idx = self
            .inner
            .node_index(start)
            .ok_or_else(|| value_err(format!("unknown start node {start:?}")))?;
        let behaviors = plan
            .iter()
            .map(|b| {
                self.inner
                    .behavior_index(b)
                    .ok_or_else(|| value_err(format!("unknown behavior {b:?}")))
            })
            .collect::<PyResult<Vec<_>>>()?;
        let end = self
            .inner
            .validate_plan(start_idx, &Plan::new(behaviors))
            .map_err(value_err)?;
        Ok(self.inner.nodes()[end].clone())
    }

    /// Fewest-steps behavior sequence from `start` to `goal`.
    fn shortest_plan(&self, start: &str, goal: &str) -> PyResult<Vec<String>> {
        let s = self
            .inner
            .node_index(start)
            .ok_or_else(|| value_err(format!("unknown start node {start:?}")))?;
        let g = self
            .inner
            .node_index(goal)
            .ok_or_else(|| value_err(format!("unknown goal node {goal:?}")))?;
        let plan = self.inner.shortest_plan(s, g).map_err(value_err)?;
        Ok(plan.behaviors.iter().map(|&b| self.inner.behaviors()[b].clone()).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "BehaviorGraph({} nodes, {} behaviors, {} edges)",
            self.inner.node_count(),
            self.inner.behavior_count(),
            self.inner.edges().len()
        )
    }
}

fn report_dict<'py>(py: Python<'py>, report: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("f1", report.f1)?;
    d.set_item("m_at_0", report.m_at[0])?;
    d.set_item("m_at_1", report.m_at[1])?;
    d.set_item("m_at_2", report.m_at[2])?;
    d.set_item("ed", report.ed)?;
    d.set_item("n", report.n)?;
    Ok(d)
}

/// A trained instruction-to-plan model plus its vocabulary.
#[pyclass(name = "Model")]
struct PyModel {
    model: Model,
    vocab: Vocabulary,
    config: TrainConfig,
    logs: Vec<EpochLog>,
}

#[pymethods]
impl PyModel {
    /// Trains on a corpus directory. `config_json` holds training fields
    /// (epochs, batch_size, heads, hidden, ...); omitted ones default.
    #[staticmethod]
    #[pyo3(signature = (corpus_dir, config_json=None))]
    fn train(corpus_dir: &str, config_json: Option<&str>) -> PyResult<Self> {
        let mut cfg: TrainConfig = match config_json {
            None => TrainConfig::default(),
            Some(text) => serde_json::from_str(text).map_err(value_err)?,
        };
        cfg.corpus = PathBuf::from(corpus_dir);
        let corpus = load_corpus(Path::new(corpus_dir)).map_err(value_err)?;
        let trained = train_model(&cfg, &corpus, None, |_| {}).map_err(value_err)?;
        Ok(PyModel {
            model: trained.model,
            vocab: trained.vocab,
            config: cfg,
            logs: trained.logs,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let saved = load_model(Path::new(path)).map_err(value_err)?;
        Ok(PyModel {
            model: saved.model,
            vocab: saved.vocab,
            config: saved.train_config,
            logs: Vec::new(),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(
            Path::new(path),
            &self.model,
            &self.vocab,
            &self.config,
            self.logs.len(),
            0,
        )
        .map_err(value_err)
    }

    /// Per-epoch (epoch, train_loss, val_M@0) tuples from training.
    fn logs(&self) -> Vec<(usize, f64, f64)> {
        self.logs.iter().map(|l| (l.epoch, l.train_loss, l.val_m_at_0)).collect()
    }

    /// Greedy-decodes one instruction; returns a dict with the behavior
    /// names, the truncation flag, and the node reached (None when the plan
    /// does not execute).
    fn translate<'py>(
        &self,
        py: Python<'py>,
        graph: &PyBehaviorGraph,
        start: &str,
        instruction: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let tokens: Vec<String> = instruction.split_whitespace().map(str::to_string).collect();
        let tr = translate_one(&self.model, &self.vocab, &graph.inner, start, &tokens)
            .map_err(value_err)?;
        let d = PyDict::new(py);
        d.set_item("plan", tr.behaviors)?;
        d.set_item("truncated", tr.truncated)?;
        d.set_item("end_node", tr.end_node)?;
        Ok(d)
    }

    /// Scores one split of a corpus directory; returns the metrics report
    /// as a dict (percentages for F1 and M@k).
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        corpus_dir: &str,
        split: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let corpus = load_corpus(Path::new(corpus_dir)).map_err(value_err)?;
        let split = match split {
            "train" => Split::Train,
            "test_repeated" => Split::TestRepeated,
            "test_new" => Split::TestNew,
            other => return Err(value_err(format!("unknown split {other:?}"))),
        };
        let eval = eval_model(&self.model, &self.vocab, &corpus, split).map_err(value_err)?;
        report_dict(py, &eval.report)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(heads={}, hidden={}, vocab={}, behaviors={})",
            self.model.config.heads,
            self.model.config.hidden,
            self.model.config.vocab_size,
            self.model.config.behavior_count
        )
    }
}

#[pymodule]
fn navtrans_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBehaviorGraph>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(plan_f1, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    Ok(())
}
