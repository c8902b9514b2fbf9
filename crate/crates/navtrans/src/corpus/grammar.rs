//! Template grammar turning behavior paths into instruction tokens.
//!
//! Behavior ids are verb_noun phrases ("exit_office"); each has a small
//! synonym set of surface templates, an optional landmark mention of the
//! node the behavior arrives at, and sentence connectors between steps.
//! Everything is drawn from the caller's RNG, so instructions are a pure
//! function of (graph, path, rng state).

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::graph::{BehaviorGraph, Triplet};

pub const SYNONYM_COUNT: usize = 4;

const CONNECTORS: [&[&str]; 4] = [&["then"], &["and", "then"], &["next"], &["after", "that"]];

const LANDMARK_PROB: f64 = 0.3;

/// The surface form of one behavior under a given synonym choice.
/// `exit_office` with synonym 0 reads "exit the office".
pub fn surface(behavior: &str, synonym: usize) -> Vec<String> {
    let mut parts = behavior.split('_');
    let verb = parts.next().unwrap_or(behavior).to_string();
    let object: Vec<String> = parts.map(str::to_string).collect();
    let mut tokens: Vec<String> = match synonym % SYNONYM_COUNT {
        0 => vec![verb, "the".into()],
        1 => vec!["please".into(), verb, "the".into()],
        2 => vec!["now".into(), verb, "the".into()],
        _ => vec![verb, "the".into()],
    };
    tokens.extend(object);
    if synonym % SYNONYM_COUNT == 3 {
        tokens.push("ahead".into());
    }
    tokens
}

/// Tokens instructing the robot to follow `path` through `graph`.
pub fn generate_instruction(
    graph: &BehaviorGraph,
    path: &[Triplet],
    rng: &mut ChaCha20Rng,
) -> Vec<String> {
    let mut tokens = Vec::new();
    for (i, step) in path.iter().enumerate() {
        if i > 0 {
            let connector = CONNECTORS[rng.random_range(0..CONNECTORS.len())];
            tokens.extend(connector.iter().map(|s| s.to_string()));
        }
        let synonym = rng.random_range(0..SYNONYM_COUNT);
        tokens.extend(surface(&graph.behaviors()[step.b], synonym));
        if rng.random_bool(LANDMARK_PROB) {
            for w in ["to", "reach", "the"] {
                tokens.push(w.into());
            }
            tokens.push(graph.nodes()[step.n2].clone());
        }
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::derive_rng;
    use std::collections::BTreeSet;

    fn toy_graph() -> BehaviorGraph {
        BehaviorGraph::new(
            vec!["office1".into(), "corridor2".into()],
            vec!["exit_office".into(), "follow_corridor".into()],
            &[
                ("office1".into(), "exit_office".into(), "corridor2".into()),
                ("corridor2".into(), "follow_corridor".into(), "office1".into()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn first_synonym_is_verb_the_object() {
        assert_eq!(surface("exit_office", 0), ["exit", "the", "office"]);
        assert_eq!(surface("follow_corridor", 0), ["follow", "the", "corridor"]);
    }

    #[test]
    fn same_seed_same_tokens() {
        let g = toy_graph();
        let path = [g.edges()[1]];
        let a = generate_instruction(&g, &path, &mut derive_rng(9, &["grammar"]));
        let b = generate_instruction(&g, &path, &mut derive_rng(9, &["grammar"]));
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn every_behavior_gets_multiple_surfaces() {
        let g = toy_graph();
        let mut rng = derive_rng(0, &["grammar", "coverage"]);
        let mut seen: Vec<BTreeSet<Vec<String>>> = vec![BTreeSet::new(); 2];
        for _ in 0..1000 {
            for (b, edge) in g.edges().iter().map(|e| (e.b, *e)) {
                seen[b].insert(generate_instruction(&g, &[edge], &mut rng));
            }
        }
        for surfaces in &seen {
            assert!(surfaces.len() >= 2);
        }
    }

    #[test]
    fn multi_step_paths_are_connected_sentences() {
        let g = toy_graph();
        let path = [g.edges()[0], g.edges()[1]];
        let tokens = generate_instruction(&g, &path, &mut derive_rng(1, &["grammar"]));
        let text = tokens.join(" ");
        assert!(text.contains("exit the office"), "{text}");
        assert!(text.contains("follow the corridor"), "{text}");
    }
}
