//! The two encoder branches: word-embedded instruction tokens and one-hot
//! graph triplets, each run through a bi-directional GRU.
//!
//! Sequences are [T, D] tensors processed row by row. Both directions start
//! from zero hidden states; per-position states are forward ⧺ backward
//! (dimension 2H), and the sequence summary concatenates the last forward
//! state with the last backward state.

use rand_chacha::ChaCha20Rng;

use crate::graph::BehaviorGraph;
use crate::tensor::{Tape, Tensor, Val};

/// Weights for one GRU direction: update gate z, reset gate r, candidate h̃.
///
/// z = σ(x·Wz + h·Uz + bz), r = σ(x·Wr + h·Ur + br),
/// h̃ = tanh(x·Wh + (r ⊙ h)·Uh + bh), h' = (1 − z) ⊙ h + z ⊙ h̃.
#[derive(Debug, Clone)]
pub struct GruParams {
    pub wz: Tensor,
    pub uz: Tensor,
    pub bz: Tensor,
    pub wr: Tensor,
    pub ur: Tensor,
    pub br: Tensor,
    pub wh: Tensor,
    pub uh: Tensor,
    pub bh: Tensor,
}

impl GruParams {
    /// Uniform init in [−1/√H, 1/√H], all tensors trainable.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha20Rng) -> GruParams {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w = |rng: &mut ChaCha20Rng| Tensor::uniform(vec![input_dim, hidden], bound, rng).with_grad();
        let u = |rng: &mut ChaCha20Rng| Tensor::uniform(vec![hidden, hidden], bound, rng).with_grad();
        let b = |rng: &mut ChaCha20Rng| Tensor::uniform(vec![hidden], bound, rng).with_grad();
        GruParams {
            wz: w(rng),
            uz: u(rng),
            bz: b(rng),
            wr: w(rng),
            ur: u(rng),
            br: b(rng),
            wh: w(rng),
            uh: u(rng),
            bh: b(rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.uz.shape()[0]
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.fields()
            .into_iter()
            .map(|(n, t)| (format!("{prefix}.{n}"), t))
            .collect()
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let prefix = prefix.to_string();
        vec![
            (format!("{prefix}.wz"), &mut self.wz),
            (format!("{prefix}.uz"), &mut self.uz),
            (format!("{prefix}.bz"), &mut self.bz),
            (format!("{prefix}.wr"), &mut self.wr),
            (format!("{prefix}.ur"), &mut self.ur),
            (format!("{prefix}.br"), &mut self.br),
            (format!("{prefix}.wh"), &mut self.wh),
            (format!("{prefix}.uh"), &mut self.uh),
            (format!("{prefix}.bh"), &mut self.bh),
        ]
    }

    fn fields(&self) -> [(&'static str, &Tensor); 9] {
        [
            ("wz", &self.wz),
            ("uz", &self.uz),
            ("bz", &self.bz),
            ("wr", &self.wr),
            ("ur", &self.ur),
            ("br", &self.br),
            ("wh", &self.wh),
            ("uh", &self.uh),
            ("bh", &self.bh),
        ]
    }

    /// Puts the parameters on a tape; `trainable = false` freezes them
    /// (evaluation records no gradient work).
    pub fn stage(&self, t: &mut Tape, trainable: bool) -> GruVals {
        let mut put = |x: &Tensor| if trainable { t.leaf(x) } else { t.frozen(x) };
        GruVals {
            wz: put(&self.wz),
            uz: put(&self.uz),
            bz: put(&self.bz),
            wr: put(&self.wr),
            ur: put(&self.ur),
            br: put(&self.br),
            wh: put(&self.wh),
            uh: put(&self.uh),
            bh: put(&self.bh),
        }
    }
}

/// Tape handles for one GRU direction's weights.
#[derive(Debug, Clone, Copy)]
pub struct GruVals {
    pub wz: Val,
    pub uz: Val,
    pub bz: Val,
    pub wr: Val,
    pub ur: Val,
    pub br: Val,
    pub wh: Val,
    pub uh: Val,
    pub bh: Val,
}

/// One GRU step: x is [1, D], h is [1, H]; returns the new [1, H] state.
pub fn gru_cell(t: &mut Tape, p: &GruVals, x: Val, h: Val) -> Val {
    let gate = |t: &mut Tape, w, u, b| {
        let xw = t.matmul(x, w);
        let hu = t.matmul(h, u);
        let s = t.add(xw, hu);
        t.add_bias(s, b)
    };
    let z = {
        let a = gate(t, p.wz, p.uz, p.bz);
        t.sigmoid(a)
    };
    let r = {
        let a = gate(t, p.wr, p.ur, p.br);
        t.sigmoid(a)
    };
    let cand = {
        let xw = t.matmul(x, p.wh);
        let rh = t.mul(r, h);
        let rhu = t.matmul(rh, p.uh);
        let s = t.add(xw, rhu);
        let s = t.add_bias(s, p.bh);
        t.tanh(s)
    };
    let ones = t.ones(t.shape(z).to_vec());
    let keep = t.sub(ones, z);
    let kept = t.mul(keep, h);
    let new = t.mul(z, cand);
    t.add(kept, new)
}

/// Bi-directional encoding of a [T, D] sequence.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// [T, 2H]: forward state ⧺ backward state per position.
    pub states: Val,
    /// [1, 2H]: last forward state ⧺ last backward state.
    pub final_state: Val,
}

pub fn bigru_encode(t: &mut Tape, xs: Val, fwd: &GruVals, bwd: &GruVals) -> EncoderOutput {
    let shape = t.shape(xs).to_vec();
    assert!(
        shape.len() == 2 && shape[0] >= 1,
        "bigru_encode: need a nonempty [T, D] sequence, got {shape:?}"
    );
    let len = shape[0];
    let hidden = fwd.hidden_of(t);

    let run = |t: &mut Tape, p: &GruVals, reverse: bool| {
        let mut h = t.constant(vec![1, hidden], vec![0.0; hidden]);
        let mut states = Vec::with_capacity(len);
        for step in 0..len {
            let i = if reverse { len - 1 - step } else { step };
            let x = t.row(xs, i);
            h = gru_cell(t, p, x, h);
            states.push(h);
        }
        if reverse {
            states.reverse();
        }
        states
    };
    let f_states = run(t, fwd, false);
    let b_states = run(t, bwd, true);

    let rows: Vec<Val> = (0..len)
        .map(|i| t.concat(&[f_states[i], b_states[i]], 1))
        .collect();
    let states = if rows.len() == 1 { rows[0] } else { t.concat(&rows, 0) };
    let final_state = t.concat(&[f_states[len - 1], b_states[0]], 1);
    EncoderOutput { states, final_state }
}

impl GruVals {
    fn hidden_of(&self, t: &Tape) -> usize {
        t.shape(self.uz)[0]
    }
}

/// Embeds tokens through the word table, then bi-GRU encodes them.
pub fn encode_instruction(
    t: &mut Tape,
    tokens: &[usize],
    embedding: Val,
    fwd: &GruVals,
    bwd: &GruVals,
) -> EncoderOutput {
    assert!(!tokens.is_empty(), "encode_instruction: empty token list");
    let xs = t.embed_lookup(embedding, tokens);
    bigru_encode(t, xs, fwd, bwd)
}

/// One-hot triplet vectors for `graph`, with the two node blocks padded to
/// `node_cap` positions so graphs of different sizes share an input width
/// of 2·node_cap + |behaviors|.
pub fn triplet_one_hots(graph: &BehaviorGraph, node_cap: usize) -> Tensor {
    let n = graph.node_count();
    let b = graph.behavior_count();
    assert!(n <= node_cap, "graph has {n} nodes, above the model's cap {node_cap}");
    let width = 2 * node_cap + b;
    let mut data = vec![0.0; graph.edges().len() * width];
    for (i, e) in graph.edges().iter().enumerate() {
        let row = &mut data[i * width..(i + 1) * width];
        row[e.n1] = 1.0;
        row[node_cap + e.b] = 1.0;
        row[node_cap + b + e.n2] = 1.0;
    }
    Tensor::new(vec![graph.edges().len(), width], data)
}

/// Encodes the graph branch: padded one-hot triplets through the bi-GRU.
pub fn encode_graph(
    t: &mut Tape,
    graph: &BehaviorGraph,
    node_cap: usize,
    fwd: &GruVals,
    bwd: &GruVals,
) -> EncoderOutput {
    assert!(!graph.edges().is_empty(), "encode_graph: graph has no edges");
    let one_hots = triplet_one_hots(graph, node_cap);
    let xs = t.frozen(&one_hots);
    bigru_encode(t, xs, fwd, bwd)
}
