//! The full translation model: word embeddings, the two bi-GRU encoder
//! branches, multi-head attention fusion, and the plan decoder, with a
//! flat named-parameter view for the optimizer and checkpoints.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decoder::{greedy_decode, teacher_forced_logits, DecoderParams, DecoderVals};
use crate::encoders::{encode_graph, encode_instruction, EncoderOutput, GruParams, GruVals};
use crate::fusion::{fuse, FusedContext, FusionParams, FusionVals};
use crate::graph::{BehaviorGraph, Plan};
use crate::seeding::derive_rng;
use crate::tensor::{Tape, Tensor, Val};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub behavior_count: usize,
    /// Graph one-hot node blocks are padded to this many positions, so one
    /// model serves every map up to this size.
    pub node_cap: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub behavior_dim: usize,
    pub d_ctx: usize,
    pub heads: usize,
    pub max_decode_len: usize,
}

impl ModelConfig {
    /// Encoder states are forward ⧺ backward, so the attention model
    /// dimension is twice the hidden size.
    pub fn d_model(&self) -> usize {
        2 * self.hidden
    }

    pub fn graph_input_dim(&self) -> usize {
        2 * self.node_cap + self.behavior_count
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.heads == 0 || self.d_model() % self.heads != 0 {
            return Err(format!(
                "head count {} must divide d_model {}",
                self.heads,
                self.d_model()
            ));
        }
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("behavior_count", self.behavior_count),
            ("node_cap", self.node_cap),
            ("hidden", self.hidden),
            ("embed_dim", self.embed_dim),
            ("behavior_dim", self.behavior_dim),
            ("d_ctx", self.d_ctx),
            ("max_decode_len", self.max_decode_len),
        ] {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub word_embed: Tensor,
    pub instr_fwd: GruParams,
    pub instr_bwd: GruParams,
    pub graph_fwd: GruParams,
    pub graph_bwd: GruParams,
    pub fusion: FusionParams,
    pub decoder: DecoderParams,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Model {
        config.validate().expect("valid model config");
        let embed_bound = 1.0 / (config.embed_dim as f64).sqrt();
        let word_embed = Tensor::uniform(
            vec![config.vocab_size, config.embed_dim],
            embed_bound,
            &mut derive_rng(seed, &["init", "word_embed"]),
        )
        .with_grad();
        let gru = |tag: &str, input: usize| {
            GruParams::init(input, config.hidden, &mut derive_rng(seed, &["init", tag]))
        };
        Model {
            word_embed,
            instr_fwd: gru("instr_fwd", config.embed_dim),
            instr_bwd: gru("instr_bwd", config.embed_dim),
            graph_fwd: gru("graph_fwd", config.graph_input_dim()),
            graph_bwd: gru("graph_bwd", config.graph_input_dim()),
            fusion: FusionParams::init(
                config.d_model(),
                config.d_ctx,
                config.heads,
                &mut derive_rng(seed, &["init", "fusion"]),
            ),
            decoder: DecoderParams::init(
                config.behavior_count,
                config.behavior_dim,
                config.d_ctx,
                config.hidden,
                config.node_cap,
                &mut derive_rng(seed, &["init", "decoder"]),
            ),
            config,
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("word_embed".to_string(), &self.word_embed)];
        out.extend(self.instr_fwd.named("instr.fwd"));
        out.extend(self.instr_bwd.named("instr.bwd"));
        out.extend(self.graph_fwd.named("graph.fwd"));
        out.extend(self.graph_bwd.named("graph.bwd"));
        out.extend(self.fusion.named("fusion"));
        out.extend(self.decoder.named("decoder"));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("word_embed".to_string(), &mut self.word_embed)];
        out.extend(self.instr_fwd.named_mut("instr.fwd"));
        out.extend(self.instr_bwd.named_mut("instr.bwd"));
        out.extend(self.graph_fwd.named_mut("graph.fwd"));
        out.extend(self.graph_bwd.named_mut("graph.bwd"));
        out.extend(self.fusion.named_mut("fusion"));
        out.extend(self.decoder.named_mut("decoder"));
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Snapshot of all parameters for the checkpoint container.
    pub fn to_tensors(&self) -> BTreeMap<String, Tensor> {
        self.named_params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    /// Replaces every parameter from a checkpoint snapshot, insisting on an
    /// exact name and shape match.
    pub fn load_tensors(&mut self, tensors: &BTreeMap<String, Tensor>) -> Result<(), String> {
        let mut expected = 0;
        for (name, param) in self.named_params_mut() {
            expected += 1;
            let stored = tensors
                .get(&name)
                .ok_or_else(|| format!("checkpoint is missing parameter {name:?}"))?;
            if stored.shape() != param.shape() {
                return Err(format!(
                    "parameter {name:?}: checkpoint shape {:?} vs model shape {:?}",
                    stored.shape(),
                    param.shape()
                ));
            }
            param.data_mut().copy_from_slice(stored.data());
        }
        if tensors.len() != expected {
            return Err(format!(
                "checkpoint has {} tensors, model expects {expected}",
                tensors.len()
            ));
        }
        Ok(())
    }

    /// Puts every parameter on the tape, trainable or frozen.
    pub fn stage(&self, t: &mut Tape, trainable: bool) -> ModelVals {
        ModelVals {
            word_embed: if trainable {
                t.leaf(&self.word_embed)
            } else {
                t.frozen(&self.word_embed)
            },
            instr_fwd: self.instr_fwd.stage(t, trainable),
            instr_bwd: self.instr_bwd.stage(t, trainable),
            graph_fwd: self.graph_fwd.stage(t, trainable),
            graph_bwd: self.graph_bwd.stage(t, trainable),
            fusion: self.fusion.stage(t, trainable),
            decoder: self.decoder.stage(t, trainable),
            node_cap: self.config.node_cap,
            max_decode_len: self.config.max_decode_len,
        }
    }
}

/// Tape handles for one staging of the model.
#[derive(Debug, Clone)]
pub struct ModelVals {
    pub word_embed: Val,
    pub instr_fwd: GruVals,
    pub instr_bwd: GruVals,
    pub graph_fwd: GruVals,
    pub graph_bwd: GruVals,
    pub fusion: FusionVals,
    pub decoder: DecoderVals,
    node_cap: usize,
    max_decode_len: usize,
}

impl ModelVals {
    /// Tape handles in exactly the order of [`Model::named_params`], so the
    /// optimizer can pair gradients with parameter names by position.
    pub fn ordered(&self) -> Vec<Val> {
        let gru = |g: &GruVals| vec![g.wz, g.uz, g.bz, g.wr, g.ur, g.br, g.wh, g.uh, g.bh];
        let mut out = vec![self.word_embed];
        out.extend(gru(&self.instr_fwd));
        out.extend(gru(&self.instr_bwd));
        out.extend(gru(&self.graph_fwd));
        out.extend(gru(&self.graph_bwd));
        for i in 0..self.fusion.mha.wq.len() {
            out.push(self.fusion.mha.wq[i]);
            out.push(self.fusion.mha.wk[i]);
            out.push(self.fusion.mha.wv[i]);
        }
        out.push(self.fusion.mha.wo);
        out.push(self.fusion.fc_w);
        out.push(self.fusion.fc_b);
        out.push(self.decoder.behavior_embed);
        out.extend(gru(&self.decoder.gru));
        out.push(self.decoder.att_wh);
        out.push(self.decoder.att_wc);
        out.push(self.decoder.att_b);
        out.push(self.decoder.att_v);
        out.push(self.decoder.out_w);
        out.push(self.decoder.out_b);
        out.push(self.decoder.node_embed);
        out
    }

    /// Encodes a graph once; reuse the result for every sample that shares
    /// the graph on this tape.
    pub fn encode_graph(&self, t: &mut Tape, graph: &BehaviorGraph) -> EncoderOutput {
        encode_graph(t, graph, self.node_cap, &self.graph_fwd, &self.graph_bwd)
    }

    pub fn context(&self, t: &mut Tape, tokens: &[usize], graph_enc: &EncoderOutput) -> FusedContext {
        let instr = encode_instruction(t, tokens, self.word_embed, &self.instr_fwd, &self.instr_bwd);
        fuse(t, &instr, graph_enc, &self.fusion)
    }

    /// Teacher-forced mean cross-entropy for one sample (end-of-plan
    /// position included).
    pub fn sample_loss(
        &self,
        t: &mut Tape,
        tokens: &[usize],
        graph_enc: &EncoderOutput,
        start: usize,
        target: &Plan,
    ) -> Val {
        assert!(!target.is_empty(), "sample_loss: empty target plan");
        let ctx = self.context(t, tokens, graph_enc);
        let logits = teacher_forced_logits(t, start, target, &ctx, &self.decoder);
        let stacked = t.concat(&logits, 0);
        let mut targets = target.behaviors.clone();
        targets.push(self.decoder.eop);
        t.cross_entropy(stacked, &targets)
    }

    /// Greedy plan prediction; the flag marks truncation at max length.
    pub fn predict(
        &self,
        t: &mut Tape,
        tokens: &[usize],
        graph_enc: &EncoderOutput,
        start: usize,
    ) -> (Plan, bool) {
        let ctx = self.context(t, tokens, graph_enc);
        greedy_decode(t, start, &ctx, &self.decoder, self.max_decode_len)
    }
}

pub use crate::decoder::DecodeState;

#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 12,
        behavior_count: 3,
        node_cap: 5,
        hidden: 8,
        embed_dim: 4,
        behavior_dim: 4,
        d_ctx: 6,
        heads: 2,
        max_decode_len: 8,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::BehaviorGraph;
    use std::collections::BTreeSet;

    fn toy_graph() -> BehaviorGraph {
        BehaviorGraph::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec!["go".into(), "turn".into(), "cross".into()],
            &[
                ("a".into(), "go".into(), "b".into()),
                ("b".into(), "turn".into(), "c".into()),
                ("c".into(), "cross".into(), "a".into()),
                ("a".into(), "turn".into(), "c".into()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn init_shapes_follow_config() {
        let m = Model::init(tiny_config(), 3);
        assert_eq!(m.word_embed.shape(), &[12, 4]);
        assert_eq!(m.instr_fwd.wz.shape(), &[4, 8]);
        // graph branch input: 2·node_cap + behaviors = 13
        assert_eq!(m.graph_fwd.wz.shape(), &[13, 8]);
        assert_eq!(m.fusion.mha.wq[0].shape(), &[16, 8]);
        assert_eq!(m.fusion.fc_w.shape(), &[32, 6]);
        assert_eq!(m.decoder.behavior_embed.shape(), &[5, 4]);
        assert_eq!(m.decoder.out_w.shape(), &[8, 4]);
        assert_eq!(m.decoder.node_embed.shape(), &[5, 8]);
    }

    #[test]
    fn param_names_are_unique_and_stable() {
        let m = Model::init(tiny_config(), 3);
        let names: Vec<String> = m.named_params().into_iter().map(|(n, _)| n).collect();
        let set: BTreeSet<&String> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        let again: Vec<String> = m.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, again);

        let mut m2 = Model::init(tiny_config(), 3);
        let mut_names: Vec<String> = m2.named_params_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, mut_names);
    }

    #[test]
    fn same_seed_same_model() {
        let a = Model::init(tiny_config(), 9);
        let b = Model::init(tiny_config(), 9);
        for ((na, ta), (nb, tb)) in a.named_params().into_iter().zip(b.named_params()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        let c = Model::init(tiny_config(), 10);
        assert_ne!(a.word_embed.data(), c.word_embed.data());
    }

    #[test]
    fn loss_is_finite_and_gradients_reach_both_branches() {
        let model = Model::init(tiny_config(), 5);
        let graph = toy_graph();
        let mut t = Tape::new();
        let vals = model.stage(&mut t, true);
        let graph_enc = vals.encode_graph(&mut t, &graph);
        let tokens = [4usize, 7, 2, 9];
        let target = Plan::new(vec![0, 1]);
        let loss = vals.sample_loss(&mut t, &tokens, &graph_enc, 0, &target);
        assert!(t.scalar_value(loss).is_finite());
        t.backward(loss).unwrap();

        let norm = |v: Val, t: &Tape| -> f64 {
            t.grad(v).map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt()).unwrap_or(0.0)
        };
        assert!(norm(vals.instr_fwd.wz, &t) > 0.0, "instruction branch got no gradient");
        assert!(norm(vals.graph_fwd.wz, &t) > 0.0, "graph branch got no gradient");
        assert!(norm(vals.fusion.mha.wq[0], &t) > 0.0, "fusion got no gradient");
        assert!(norm(vals.decoder.out_w, &t) > 0.0, "decoder got no gradient");
        assert!(norm(vals.word_embed, &t) > 0.0, "embeddings got no gradient");
    }

    #[test]
    fn snapshot_round_trip_restores_every_parameter() {
        let a = Model::init(tiny_config(), 5);
        let snapshot = a.to_tensors();
        let mut b = Model::init(tiny_config(), 77);
        assert_ne!(a.word_embed.data(), b.word_embed.data());
        b.load_tensors(&snapshot).unwrap();
        for ((_, ta), (_, tb)) in a.named_params().into_iter().zip(b.named_params()) {
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn load_rejects_missing_or_misshapen_tensors() {
        let a = Model::init(tiny_config(), 5);
        let mut b = Model::init(tiny_config(), 6);

        let mut missing = a.to_tensors();
        missing.remove("word_embed");
        assert!(b.load_tensors(&missing).unwrap_err().contains("missing"));

        let mut wrong = a.to_tensors();
        wrong.insert("word_embed".into(), Tensor::zeros(vec![2, 2]));
        assert!(b.load_tensors(&wrong).unwrap_err().contains("shape"));
    }

    #[test]
    fn ordered_vals_align_with_named_params() {
        let m = Model::init(tiny_config(), 5);
        let mut t = Tape::new();
        let vals = m.stage(&mut t, true);
        let named = m.named_params();
        let ordered = vals.ordered();
        assert_eq!(named.len(), ordered.len());
        for ((name, tensor), val) in named.into_iter().zip(ordered) {
            assert_eq!(t.data(val), tensor.data(), "order drift at {name}");
        }
    }

    #[test]
    fn predictions_are_deterministic() {
        let model = Model::init(tiny_config(), 5);
        let graph = toy_graph();
        let run = || {
            let mut t = Tape::new();
            let vals = model.stage(&mut t, false);
            let enc = vals.encode_graph(&mut t, &graph);
            vals.predict(&mut t, &[4, 7, 2], &enc, 1)
        };
        assert_eq!(run(), run());
    }
}
