//! Behavioral navigation graphs.
//!
//! Places are nodes, high-level behaviors are labeled directed edges, and a
//! plan is a sequence of behaviors executed from a start node. Outgoing
//! (node, behavior) pairs are unique, so execution is deterministic: a plan
//! either traces a single well-defined path or fails at a specific step.
//!
//! Node and behavior ids are strings externally; internally everything is an
//! index into the graph's ordered `nodes` / `behaviors` tables, and those
//! orderings double as one-hot positions.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One labeled edge: behavior `b` moves the robot from node `n1` to `n2`.
/// All three are indices into the owning graph's tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub n1: usize,
    pub b: usize,
    pub n2: usize,
}

/// An ordered sequence of behavior indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Plan {
    pub behaviors: Vec<usize>,
}

impl Plan {
    pub fn new(behaviors: Vec<usize>) -> Self {
        Plan { behaviors }
    }

    pub fn len(&self) -> usize {
        self.behaviors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.behaviors.is_empty()
    }
}

impl From<Vec<usize>> for Plan {
    fn from(behaviors: Vec<usize>) -> Self {
        Plan { behaviors }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("malformed graph document: {0}")]
    Parse(String),
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("duplicate behavior id {0:?}")]
    DuplicateBehavior(String),
    #[error("edge {edge} references undefined node {name:?}")]
    UnknownNode { edge: usize, name: String },
    #[error("edge {edge} references undefined behavior {name:?}")]
    UnknownBehavior { edge: usize, name: String },
    #[error(
        "node {node:?} has two outgoing {behavior:?} edges; \
         (node, behavior) pairs must be unique so plans execute deterministically"
    )]
    DuplicateOutEdge { node: String, behavior: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("start node index {0} is not in the graph")]
    UnknownStart(usize),
    #[error("no edge labeled {behavior:?} out of node {node:?} at plan step {step}")]
    NoSuchEdge {
        step: usize,
        node: String,
        behavior: String,
    },
}

#[derive(Debug, Error, PartialEq)]
#[error("no plan reaches node {goal:?} from node {start:?}")]
pub struct Unreachable {
    pub start: String,
    pub goal: String,
}

/// An immutable navigation graph. Construct via [`BehaviorGraph::new`] or
/// [`parse_graph`]; both enforce the determinism invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorGraph {
    nodes: Vec<String>,
    behaviors: Vec<String>,
    edges: Vec<Triplet>,
    out: BTreeMap<(usize, usize), usize>,
}

impl BehaviorGraph {
    /// Builds a graph from string-named edges, validating every reference.
    /// Edges are stored sorted by (n1, b, n2); this ordering is the one
    /// [`encode_triplets`](Self::encode_triplets) uses.
    pub fn new(
        nodes: Vec<String>,
        behaviors: Vec<String>,
        named_edges: &[(String, String, String)],
    ) -> Result<Self, GraphError> {
        let mut node_idx = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if node_idx.insert(n.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.clone()));
            }
        }
        let mut behavior_idx = BTreeMap::new();
        for (i, b) in behaviors.iter().enumerate() {
            if behavior_idx.insert(b.clone(), i).is_some() {
                return Err(GraphError::DuplicateBehavior(b.clone()));
            }
        }

        let mut edges = Vec::with_capacity(named_edges.len());
        let mut out = BTreeMap::new();
        for (i, (n1, b, n2)) in named_edges.iter().enumerate() {
            let lookup_node = |name: &String| {
                node_idx.get(name).copied().ok_or(GraphError::UnknownNode {
                    edge: i,
                    name: name.clone(),
                })
            };
            let n1 = lookup_node(n1)?;
            let n2 = lookup_node(n2)?;
            let b = behavior_idx
                .get(b)
                .copied()
                .ok_or(GraphError::UnknownBehavior {
                    edge: i,
                    name: b.clone(),
                })?;
            if out.insert((n1, b), n2).is_some() {
                return Err(GraphError::DuplicateOutEdge {
                    node: nodes[n1].clone(),
                    behavior: behaviors[b].clone(),
                });
            }
            edges.push(Triplet { n1, b, n2 });
        }
        edges.sort();

        Ok(BehaviorGraph {
            nodes,
            behaviors,
            edges,
            out,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn behavior_count(&self) -> usize {
        self.behaviors.len()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn behaviors(&self) -> &[String] {
        &self.behaviors
    }

    /// Triplets in canonical (n1, b, n2) order.
    pub fn edges(&self) -> &[Triplet] {
        &self.edges
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn behavior_index(&self, name: &str) -> Option<usize> {
        self.behaviors.iter().position(|b| b == name)
    }

    /// The unique node reached by taking `behavior` from `node`, if any.
    pub fn successor(&self, node: usize, behavior: usize) -> Option<usize> {
        self.out.get(&(node, behavior)).copied()
    }

    fn behavior_name(&self, b: usize) -> String {
        self.behaviors
            .get(b)
            .cloned()
            .unwrap_or_else(|| format!("behavior#{b}"))
    }

    /// Executes `plan` from `start` and returns the node reached.
    pub fn validate_plan(&self, start: usize, plan: &Plan) -> Result<usize, PlanError> {
        if start >= self.nodes.len() {
            return Err(PlanError::UnknownStart(start));
        }
        let mut here = start;
        for (step, &b) in plan.behaviors.iter().enumerate() {
            here = self
                .successor(here, b)
                .ok_or_else(|| PlanError::NoSuchEdge {
                    step,
                    node: self.nodes[here].clone(),
                    behavior: self.behavior_name(b),
                })?;
        }
        Ok(here)
    }

    /// Breadth-first distance from every node to `goal`, following edges
    /// backwards. `usize::MAX` marks unreachable nodes.
    fn distances_to(&self, goal: usize) -> Vec<usize> {
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            preds[e.n2].push(e.n1);
        }
        let mut dist = vec![usize::MAX; self.nodes.len()];
        dist[goal] = 0;
        let mut queue = VecDeque::from([goal]);
        while let Some(v) = queue.pop_front() {
            for &u in &preds[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// A minimum-length plan from `start` to `goal`. Among equally short
    /// options the walk greedily picks the lowest behavior index at each
    /// step, so the result is unique and reproducible.
    pub fn shortest_plan(&self, start: usize, goal: usize) -> Result<Plan, Unreachable> {
        let dist = self.distances_to(goal);
        if start >= self.nodes.len() || dist[start] == usize::MAX {
            return Err(Unreachable {
                start: self
                    .nodes
                    .get(start)
                    .cloned()
                    .unwrap_or_else(|| format!("node#{start}")),
                goal: self.nodes[goal].clone(),
            });
        }
        let mut plan = Vec::with_capacity(dist[start]);
        let mut here = start;
        while dist[here] > 0 {
            let (b, next) = (0..self.behaviors.len())
                .filter_map(|b| self.successor(here, b).map(|v| (b, v)))
                .find(|&(_, v)| dist[v] + 1 == dist[here])
                .expect("BFS distance decreases along some edge");
            plan.push(b);
            here = next;
        }
        Ok(Plan::new(plan))
    }

    /// One-hot encodes every triplet as one-hot(n1) ⧺ one-hot(b) ⧺ one-hot(n2),
    /// dimension 2·|nodes| + |behaviors|, in canonical edge order.
    pub fn encode_triplets(&self) -> Vec<Vec<f64>> {
        let n = self.nodes.len();
        let b = self.behaviors.len();
        self.edges
            .iter()
            .map(|e| {
                let mut v = vec![0.0; 2 * n + b];
                v[e.n1] = 1.0;
                v[n + e.b] = 1.0;
                v[n + b + e.n2] = 1.0;
                v
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    nodes: Vec<String>,
    behaviors: Vec<String>,
    edges: Vec<(String, String, String)>,
}

/// Parses the graph document format: a JSON object with `nodes`,
/// `behaviors`, and `edges` (a list of `[n1, b, n2]` triplets).
pub fn parse_graph(text: &str) -> Result<BehaviorGraph, GraphError> {
    let doc: GraphDoc =
        serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
    BehaviorGraph::new(doc.nodes, doc.behaviors, &doc.edges)
}

/// Serializes to the canonical document: edges sorted by (n1, b, n2) index.
pub fn serialize_graph(graph: &BehaviorGraph) -> String {
    let doc = GraphDoc {
        nodes: graph.nodes.clone(),
        behaviors: graph.behaviors.clone(),
        edges: graph
            .edges
            .iter()
            .map(|e| {
                (
                    graph.nodes[e.n1].clone(),
                    graph.behaviors[e.b].clone(),
                    graph.nodes[e.n2].clone(),
                )
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("graph document serializes")
}
