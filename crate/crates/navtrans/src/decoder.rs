//! GRU decoder emitting behavior sequences.
//!
//! The decoder starts from a learned embedding of the robot's start node,
//! soft-attends the fused context C at every step with an additive score,
//! and projects each new hidden state to |behaviors| + 1 logits (the extra
//! slot is end-of-plan). Decoding is greedy; training is teacher-forced.
//!
//! Token numbering: behaviors keep their graph indices 0..B−1, end-of-plan
//! is B (shared with the logit layout), start-of-plan is B+1 and exists only
//! as an embedding row.

use rand_chacha::ChaCha20Rng;

use crate::encoders::{gru_cell, GruParams, GruVals};
use crate::fusion::FusedContext;
use crate::graph::Plan;
use crate::tensor::{Tape, Tensor, Val};

#[derive(Debug, Clone)]
pub struct DecoderParams {
    /// (B + 2) × D_b: behaviors, end-of-plan, start-of-plan.
    pub behavior_embed: Tensor,
    /// Input dim D_b + d_ctx, hidden H.
    pub gru: GruParams,
    /// H × A
    pub att_wh: Tensor,
    /// d_ctx × A
    pub att_wc: Tensor,
    /// A
    pub att_b: Tensor,
    /// A × 1
    pub att_v: Tensor,
    /// H × (B + 1)
    pub out_w: Tensor,
    /// B + 1
    pub out_b: Tensor,
    /// node_cap × H
    pub node_embed: Tensor,
}

impl DecoderParams {
    pub fn init(
        behaviors: usize,
        behavior_dim: usize,
        d_ctx: usize,
        hidden: usize,
        node_cap: usize,
        rng: &mut ChaCha20Rng,
    ) -> DecoderParams {
        let bound = 1.0 / (hidden as f64).sqrt();
        let att_dim = hidden;
        let t = |shape: Vec<usize>, rng: &mut ChaCha20Rng| Tensor::uniform(shape, bound, rng).with_grad();
        DecoderParams {
            behavior_embed: t(vec![behaviors + 2, behavior_dim], rng),
            gru: GruParams::init(behavior_dim + d_ctx, hidden, rng),
            att_wh: t(vec![hidden, att_dim], rng),
            att_wc: t(vec![d_ctx, att_dim], rng),
            att_b: t(vec![att_dim], rng),
            att_v: t(vec![att_dim, 1], rng),
            out_w: t(vec![hidden, behaviors + 1], rng),
            out_b: t(vec![behaviors + 1], rng),
            node_embed: t(vec![node_cap, hidden], rng),
        }
    }

    pub fn behavior_count(&self) -> usize {
        self.behavior_embed.shape()[0] - 2
    }

    /// Token id for end-of-plan: also its logit index.
    pub fn eop(&self) -> usize {
        self.behavior_count()
    }

    /// Token id for start-of-plan (embedding row only; never a logit).
    pub fn sop(&self) -> usize {
        self.behavior_count() + 1
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = vec![(format!("{prefix}.behavior_embed"), &self.behavior_embed)];
        out.extend(self.gru.named(&format!("{prefix}.gru")));
        out.push((format!("{prefix}.att_wh"), &self.att_wh));
        out.push((format!("{prefix}.att_wc"), &self.att_wc));
        out.push((format!("{prefix}.att_b"), &self.att_b));
        out.push((format!("{prefix}.att_v"), &self.att_v));
        out.push((format!("{prefix}.out_w"), &self.out_w));
        out.push((format!("{prefix}.out_b"), &self.out_b));
        out.push((format!("{prefix}.node_embed"), &self.node_embed));
        out
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![(format!("{prefix}.behavior_embed"), &mut self.behavior_embed)];
        out.extend(self.gru.named_mut(&format!("{prefix}.gru")));
        out.push((format!("{prefix}.att_wh"), &mut self.att_wh));
        out.push((format!("{prefix}.att_wc"), &mut self.att_wc));
        out.push((format!("{prefix}.att_b"), &mut self.att_b));
        out.push((format!("{prefix}.att_v"), &mut self.att_v));
        out.push((format!("{prefix}.out_w"), &mut self.out_w));
        out.push((format!("{prefix}.out_b"), &mut self.out_b));
        out.push((format!("{prefix}.node_embed"), &mut self.node_embed));
        out
    }

    pub fn stage(&self, t: &mut Tape, trainable: bool) -> DecoderVals {
        let gru = self.gru.stage(t, trainable);
        let mut put = |x: &Tensor| if trainable { t.leaf(x) } else { t.frozen(x) };
        DecoderVals {
            behavior_embed: put(&self.behavior_embed),
            gru,
            att_wh: put(&self.att_wh),
            att_wc: put(&self.att_wc),
            att_b: put(&self.att_b),
            att_v: put(&self.att_v),
            out_w: put(&self.out_w),
            out_b: put(&self.out_b),
            node_embed: put(&self.node_embed),
            eop: self.eop(),
            sop: self.sop(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecoderVals {
    pub behavior_embed: Val,
    pub gru: GruVals,
    pub att_wh: Val,
    pub att_wc: Val,
    pub att_b: Val,
    pub att_v: Val,
    pub out_w: Val,
    pub out_b: Val,
    pub node_embed: Val,
    pub eop: usize,
    pub sop: usize,
}

/// Decoder state between steps.
#[derive(Debug, Clone, Copy)]
pub struct DecodeState {
    /// [1, H]
    pub hidden: Val,
    pub last_token: usize,
    pub step: usize,
}

/// Hidden state = the start node's embedding row; first input token is
/// start-of-plan.
pub fn init_state(t: &mut Tape, start: usize, p: &DecoderVals) -> DecodeState {
    let rows = t.shape(p.node_embed)[0];
    assert!(start < rows, "start node {start} outside embedding table ({rows} rows)");
    let hidden = t.embed_lookup(p.node_embed, &[start]);
    DecodeState {
        hidden,
        last_token: p.sop,
        step: 0,
    }
}

/// One decode step: soft-attend C, advance the GRU, project to logits.
/// Returns the [1, B+1] logits, the successor state, and the [n, 1]
/// attention column over C.
pub fn decode_step(
    t: &mut Tape,
    state: DecodeState,
    ctx: &FusedContext,
    p: &DecoderVals,
) -> (Val, DecodeState, Val) {
    // additive attention: score_j = vᵀ tanh(Wh·h + Wc·C_j + b)
    let h_proj = t.matmul(state.hidden, p.att_wh);
    let c_proj = t.matmul(ctx.c, p.att_wc);
    let h_flat = {
        let cols = t.shape(h_proj)[1];
        t.reshape(h_proj, vec![cols])
    };
    let summed = t.add_bias(c_proj, h_flat);
    let pre = t.add_bias(summed, p.att_b);
    let scored = t.tanh(pre);
    let scores = t.matmul(scored, p.att_v);
    let weights = t.softmax(scores, 0);
    let wt = t.transpose(weights);
    let context = t.matmul(wt, ctx.c);

    let emb = t.embed_lookup(p.behavior_embed, &[state.last_token]);
    let x = t.concat(&[emb, context], 1);
    let hidden = gru_cell(t, &p.gru, x, state.hidden);
    let affine = t.matmul(hidden, p.out_w);
    let logits = t.add_bias(affine, p.out_b);
    let next = DecodeState {
        hidden,
        last_token: state.last_token,
        step: state.step + 1,
    };
    (logits, next, weights)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy decode until end-of-plan or `max_len` behaviors. The flag reports
/// truncation (no end-of-plan emitted within the budget).
pub fn greedy_decode(
    t: &mut Tape,
    start: usize,
    ctx: &FusedContext,
    p: &DecoderVals,
    max_len: usize,
) -> (Plan, bool) {
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut state = init_state(t, start, p);
    let mut behaviors = Vec::new();
    loop {
        let (logits, mut next, _) = decode_step(t, state, ctx, p);
        let tok = argmax(t.data(logits));
        if tok == p.eop {
            return (Plan::new(behaviors), false);
        }
        behaviors.push(tok);
        if behaviors.len() == max_len {
            return (Plan::new(behaviors), true);
        }
        next.last_token = tok;
        state = next;
    }
}

/// Teacher forcing: at step k the input token is gold[k−1] (start-of-plan
/// at k = 0). Returns target.len() + 1 logit rows; the final position is
/// where end-of-plan must be predicted.
pub fn teacher_forced_logits(
    t: &mut Tape,
    start: usize,
    target: &Plan,
    ctx: &FusedContext,
    p: &DecoderVals,
) -> Vec<Val> {
    let mut state = init_state(t, start, p);
    let mut logits = Vec::with_capacity(target.len() + 1);
    for k in 0..=target.len() {
        let (step_logits, mut next, _) = decode_step(t, state, ctx, p);
        logits.push(step_logits);
        if k < target.len() {
            next.last_token = target.behaviors[k];
        }
        state = next;
    }
    logits
}
