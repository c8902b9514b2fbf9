//! Multi-head attention fusing the instruction and graph branches.
//!
//! Instruction states act as queries over the graph's triplet states
//! (keys and values). Each head projects both sides to d_k = d_model / h,
//! runs scaled dot-product attention, and the concatenated head outputs go
//! through an output projection. The fused rows are then concatenated
//! per position with the instruction states and reduced by a fully
//! connected tanh layer to the decoder context dimension.

use rand_chacha::ChaCha20Rng;

use crate::encoders::EncoderOutput;
use crate::tensor::{Tape, Tensor, Val};

/// Scaled dot-product attention: softmax(Q Kᵀ / √d_k) V.
/// Also hands back the attention weights for inspection.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    /// [m, d_v]
    pub output: Val,
    /// [m, n] rows summing to 1
    pub weights: Val,
}

pub fn scaled_dot_attention(t: &mut Tape, q: Val, k: Val, v: Val) -> Attention {
    let d_k = t.shape(q)[1];
    let kt = t.transpose(k);
    let logits = t.matmul(q, kt);
    let scaled = t.scale(logits, 1.0 / (d_k as f64).sqrt());
    let weights = t.softmax(scaled, 1);
    let output = t.matmul(weights, v);
    Attention { output, weights }
}

/// Per-head projections plus the output projection.
#[derive(Debug, Clone)]
pub struct MultiHeadParams {
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    pub wo: Tensor,
}

impl MultiHeadParams {
    pub fn init(d_model: usize, heads: usize, rng: &mut ChaCha20Rng) -> MultiHeadParams {
        assert!(
            heads >= 1 && d_model % heads == 0,
            "d_model {d_model} must be divisible by head count {heads}"
        );
        let d_k = d_model / heads;
        let bound = 1.0 / (d_model as f64).sqrt();
        let proj = |rng: &mut ChaCha20Rng| Tensor::uniform(vec![d_model, d_k], bound, rng).with_grad();
        MultiHeadParams {
            wq: (0..heads).map(|_| proj(rng)).collect(),
            wk: (0..heads).map(|_| proj(rng)).collect(),
            wv: (0..heads).map(|_| proj(rng)).collect(),
            wo: Tensor::uniform(vec![d_model, d_model], bound, rng).with_grad(),
        }
    }

    pub fn heads(&self) -> usize {
        self.wq.len()
    }

    pub fn param_count(&self) -> usize {
        self.wq
            .iter()
            .chain(&self.wk)
            .chain(&self.wv)
            .map(Tensor::numel)
            .sum::<usize>()
            + self.wo.numel()
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (q, (k, v))) in self.wq.iter().zip(self.wk.iter().zip(&self.wv)).enumerate() {
            out.push((format!("{prefix}.head{i}.wq"), q));
            out.push((format!("{prefix}.head{i}.wk"), k));
            out.push((format!("{prefix}.head{i}.wv"), v));
        }
        out.push((format!("{prefix}.wo"), &self.wo));
        out
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, (q, (k, v))) in self
            .wq
            .iter_mut()
            .zip(self.wk.iter_mut().zip(self.wv.iter_mut()))
            .enumerate()
        {
            out.push((format!("{prefix}.head{i}.wq"), q));
            out.push((format!("{prefix}.head{i}.wk"), k));
            out.push((format!("{prefix}.head{i}.wv"), v));
        }
        out.push((format!("{prefix}.wo"), &mut self.wo));
        out
    }

    pub fn stage(&self, t: &mut Tape, trainable: bool) -> MultiHeadVals {
        let mut put = |x: &Tensor| if trainable { t.leaf(x) } else { t.frozen(x) };
        MultiHeadVals {
            wq: self.wq.iter().map(&mut put).collect(),
            wk: self.wk.iter().map(&mut put).collect(),
            wv: self.wv.iter().map(&mut put).collect(),
            wo: put(&self.wo),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultiHeadVals {
    pub wq: Vec<Val>,
    pub wk: Vec<Val>,
    pub wv: Vec<Val>,
    pub wo: Val,
}

/// Multi-head attention output plus each head's attention weights.
#[derive(Debug, Clone)]
pub struct MultiHeadOutput {
    /// [m, d_model]
    pub output: Val,
    /// one [m, n] weight matrix per head
    pub head_weights: Vec<Val>,
}

pub fn multi_head_attention(
    t: &mut Tape,
    queries: Val,
    keys_values: Val,
    p: &MultiHeadVals,
) -> MultiHeadOutput {
    let mut heads = Vec::with_capacity(p.wq.len());
    let mut head_weights = Vec::with_capacity(p.wq.len());
    for i in 0..p.wq.len() {
        let q = t.matmul(queries, p.wq[i]);
        let k = t.matmul(keys_values, p.wk[i]);
        let v = t.matmul(keys_values, p.wv[i]);
        let att = scaled_dot_attention(t, q, k, v);
        heads.push(att.output);
        head_weights.push(att.weights);
    }
    let cat = if heads.len() == 1 { heads[0] } else { t.concat(&heads, 1) };
    let output = t.matmul(cat, p.wo);
    MultiHeadOutput { output, head_weights }
}

/// The FC reduction after fusion.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub mha: MultiHeadParams,
    pub fc_w: Tensor,
    pub fc_b: Tensor,
}

impl FusionParams {
    pub fn init(d_model: usize, d_ctx: usize, heads: usize, rng: &mut ChaCha20Rng) -> FusionParams {
        let bound = 1.0 / (d_model as f64).sqrt();
        FusionParams {
            mha: MultiHeadParams::init(d_model, heads, rng),
            fc_w: Tensor::uniform(vec![2 * d_model, d_ctx], bound, rng).with_grad(),
            fc_b: Tensor::uniform(vec![d_ctx], bound, rng).with_grad(),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = self.mha.named(&format!("{prefix}.mha"));
        out.push((format!("{prefix}.fc_w"), &self.fc_w));
        out.push((format!("{prefix}.fc_b"), &self.fc_b));
        out
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = self.mha.named_mut(&format!("{prefix}.mha"));
        out.push((format!("{prefix}.fc_w"), &mut self.fc_w));
        out.push((format!("{prefix}.fc_b"), &mut self.fc_b));
        out
    }

    pub fn stage(&self, t: &mut Tape, trainable: bool) -> FusionVals {
        let mha = self.mha.stage(t, trainable);
        let mut put = |x: &Tensor| if trainable { t.leaf(x) } else { t.frozen(x) };
        FusionVals {
            mha,
            fc_w: put(&self.fc_w),
            fc_b: put(&self.fc_b),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionVals {
    pub mha: MultiHeadVals,
    pub fc_w: Val,
    pub fc_b: Val,
}

/// The decoder context: one d_ctx vector per instruction position.
#[derive(Debug, Clone)]
pub struct FusedContext {
    /// [m, d_ctx]
    pub c: Val,
    pub head_weights: Vec<Val>,
}

pub fn fuse(
    t: &mut Tape,
    instr: &EncoderOutput,
    graph: &EncoderOutput,
    p: &FusionVals,
) -> FusedContext {
    let att = multi_head_attention(t, instr.states, graph.states, &p.mha);
    let cat = t.concat(&[att.output, instr.states], 1);
    let affine = t.matmul(cat, p.fc_w);
    let biased = t.add_bias(affine, p.fc_b);
    let c = t.tanh(biased);
    FusedContext {
        c,
        head_weights: att.head_weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{bigru_encode, GruParams};
    use crate::seeding::derive_rng;
    use crate::tensor::grad_check;
    use rand::Rng;

    fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha20Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::new(vec![n, n], data)
    }

    #[test]
    fn single_key_passes_value_through() {
        let mut rng = derive_rng(1, &["single-key"]);
        let mut t = Tape::new();
        let q = t.frozen(&random_tensor(vec![3, 4], &mut rng));
        let k = t.frozen(&random_tensor(vec![1, 4], &mut rng));
        let vt = random_tensor(vec![1, 5], &mut rng);
        let v = t.frozen(&vt);
        let att = scaled_dot_attention(&mut t, q, k, v);
        for row in t.data(att.output).chunks(5) {
            assert_eq!(row, vt.data());
        }
        assert!(t.data(att.weights).iter().all(|&w| w == 1.0));
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = derive_rng(2, &["uniform"]);
        let mut t = Tape::new();
        let q = t.frozen(&random_tensor(vec![2, 4], &mut rng));
        let krow: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = t.constant(vec![3, 4], krow.repeat(3));
        let vt = random_tensor(vec![3, 2], &mut rng);
        let v = t.frozen(&vt);
        let att = scaled_dot_attention(&mut t, q, k, v);
        let mean = [
            (vt.data()[0] + vt.data()[2] + vt.data()[4]) / 3.0,
            (vt.data()[1] + vt.data()[3] + vt.data()[5]) / 3.0,
        ];
        for row in t.data(att.output).chunks(2) {
            assert!((row[0] - mean[0]).abs() < 1e-12);
            assert!((row[1] - mean[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_passes_grad_check() {
        let mut rng = derive_rng(3, &["att-grad"]);
        for _ in 0..5 {
            let q = random_tensor(vec![3, 4], &mut rng);
            let k = random_tensor(vec![5, 4], &mut rng);
            let v = random_tensor(vec![5, 2], &mut rng);
            grad_check(
                |t, vs| {
                    let att = scaled_dot_attention(t, vs[0], vs[1], vs[2]);
                    let sq = t.mul(att.output, att.output);
                    t.sum(sq)
                },
                &[q, k, v],
                1e-5,
                1e-4,
            )
            .assert_pass();
        }
    }

    #[test]
    fn attention_rows_are_normalized_and_shift_invariant() {
        let mut rng = derive_rng(4, &["att-norm"]);
        let qt = random_tensor(vec![4, 6], &mut rng);
        let kt = random_tensor(vec![7, 6], &mut rng);
        let vt = random_tensor(vec![7, 3], &mut rng);

        let mut t = Tape::new();
        let (q, k, v) = (t.frozen(&qt), t.frozen(&kt), t.frozen(&vt));
        let att = scaled_dot_attention(&mut t, q, k, v);
        for row in t.data(att.weights).chunks(7) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&w| w >= 0.0));
        }

        // adding a constant to all logits of a row leaves its weights unchanged
        let shift = 3.7;
        let mut t2 = Tape::new();
        let (q, k) = (t2.frozen(&qt), t2.frozen(&kt));
        let ktr = t2.transpose(k);
        let logits = t2.matmul(q, ktr);
        let scaled = t2.scale(logits, 1.0 / 6.0f64.sqrt());
        let ones = t2.ones(vec![4, 7]);
        let offset = t2.scale(ones, shift);
        let shifted = t2.add(scaled, offset);
        let w2 = t2.softmax(shifted, 1);
        for (a, b) in t.data(att.weights).iter().zip(t2.data(w2)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn one_head_identity_projections_reduce_to_plain_attention() {
        let mut rng = derive_rng(5, &["one-head"]);
        let qt = random_tensor(vec![3, 4], &mut rng);
        let kvt = random_tensor(vec![5, 4], &mut rng);

        let mut t = Tape::new();
        let id = eye(4);
        let vals = MultiHeadVals {
            wq: vec![t.frozen(&id)],
            wk: vec![t.frozen(&id)],
            wv: vec![t.frozen(&id)],
            wo: t.frozen(&id),
        };
        let q = t.frozen(&qt);
        let kv = t.frozen(&kvt);
        let mh = multi_head_attention(&mut t, q, kv, &vals);
        let plain = scaled_dot_attention(&mut t, q, kv, kv);
        assert_eq!(t.data(mh.output), t.data(plain.output));
    }

    #[test]
    fn four_heads_match_per_head_composition() {
        let mut rng = derive_rng(6, &["four-heads"]);
        let p = MultiHeadParams::init(8, 4, &mut rng);
        let qt = random_tensor(vec![3, 8], &mut rng);
        let kvt = random_tensor(vec![5, 8], &mut rng);

        let mut t = Tape::new();
        let vals = p.stage(&mut t, false);
        let q = t.frozen(&qt);
        let kv = t.frozen(&kvt);
        let mh = multi_head_attention(&mut t, q, kv, &vals);

        // oracle: each head separately, concatenated, projected
        let mut parts = Vec::new();
        for i in 0..4 {
            let qi = t.matmul(q, vals.wq[i]);
            let ki = t.matmul(kv, vals.wk[i]);
            let vi = t.matmul(kv, vals.wv[i]);
            let att = scaled_dot_attention(&mut t, qi, ki, vi);
            parts.push(att.output);
        }
        let cat = t.concat(&parts, 1);
        let expect = t.matmul(cat, vals.wo);
        assert_eq!(t.data(mh.output), t.data(expect));
    }

    #[test]
    fn parameter_count_audit() {
        let mut rng = derive_rng(7, &["count"]);
        for heads in [1, 2, 4] {
            let d_model = 64;
            let p = MultiHeadParams::init(d_model, heads, &mut rng);
            let d_k = d_model / heads;
            assert_eq!(p.param_count(), heads * 3 * d_model * d_k + d_model * d_model);
        }
    }

    #[test]
    fn head_count_only_changes_fusion_parameters() {
        let mut rng1 = derive_rng(8, &["h1"]);
        let mut rng4 = derive_rng(8, &["h4"]);
        let f1 = FusionParams::init(8, 4, 1, &mut rng1);
        let f4 = FusionParams::init(8, 4, 4, &mut rng4);
        assert_eq!(f1.fc_w.shape(), f4.fc_w.shape());
        assert_eq!(f1.fc_b.shape(), f4.fc_b.shape());
        assert_eq!(f1.mha.wo.shape(), f4.mha.wo.shape());
        assert_eq!(f1.mha.heads(), 1);
        assert_eq!(f4.mha.heads(), 4);
        assert_eq!(f1.mha.wq[0].shape(), &[8, 8]);
        assert_eq!(f4.mha.wq[0].shape(), &[8, 2]);
    }

    #[test]
    fn fused_context_is_instruction_aligned() {
        let mut rng = derive_rng(9, &["shape"]);
        let d_model = 8;
        let fwd = GruParams::init(3, 4, &mut rng);
        let bwd = GruParams::init(3, 4, &mut rng);
        let fusion = FusionParams::init(d_model, 4, 2, &mut rng);
        for _ in 0..100 {
            let m = rng.random_range(1..=10);
            let n = rng.random_range(1..=6);
            let mut t = Tape::new();
            let (fv, bv) = (fwd.stage(&mut t, false), bwd.stage(&mut t, false));
            let f = fusion.stage(&mut t, false);
            let instr_in = t.frozen(&random_tensor(vec![m, 3], &mut rng));
            let graph_in = t.frozen(&random_tensor(vec![n, 3], &mut rng));
            let instr = bigru_encode(&mut t, instr_in, &fv, &bv);
            let graph = bigru_encode(&mut t, graph_in, &fv, &bv);
            let ctx = fuse(&mut t, &instr, &graph, &f);
            assert_eq!(t.shape(ctx.c), &[m, 4]);
            for w in &ctx.head_weights {
                assert_eq!(t.shape(*w), &[m, n]);
            }
        }
    }

    #[test]
    fn singleton_graph_contributes_its_value_everywhere() {
        let mut rng = derive_rng(10, &["singleton"]);
        let p = MultiHeadParams::init(4, 2, &mut rng);
        let mut t = Tape::new();
        let vals = p.stage(&mut t, false);
        let q = t.frozen(&random_tensor(vec![5, 4], &mut rng));
        let kv = t.frozen(&random_tensor(vec![1, 4], &mut rng));
        let mh = multi_head_attention(&mut t, q, kv, &vals);
        let rows: Vec<&[f64]> = t.data(mh.output).chunks(4).collect();
        for row in &rows[1..] {
            assert_eq!(*row, rows[0]);
        }
    }

    #[test]
    fn planted_alignment_is_recovered() {
        // Graph states: orthogonal one-hot-like rows. Queries: scaled copies
        // of specific key rows, so row i of the attention should peak at the
        // planted key. Identity projections keep the geometry intact.
        let n = 4;
        let alignment = [2usize, 0, 3, 1, 2];
        let scale = 8.0;
        let mut qdata = vec![0.0; alignment.len() * n];
        let mut kdata = vec![0.0; n * n];
        for i in 0..n {
            kdata[i * n + i] = 1.0;
        }
        for (i, &j) in alignment.iter().enumerate() {
            qdata[i * n + j] = scale;
        }
        let mut t = Tape::new();
        let id = eye(n);
        let vals = MultiHeadVals {
            wq: vec![t.frozen(&id)],
            wk: vec![t.frozen(&id)],
            wv: vec![t.frozen(&id)],
            wo: t.frozen(&id),
        };
        let q = t.constant(vec![alignment.len(), n], qdata);
        let kv = t.constant(vec![n, n], kdata);
        let mh = multi_head_attention(&mut t, q, kv, &vals);
        for (i, &j) in alignment.iter().enumerate() {
            let row = &t.data(mh.head_weights[0])[i * n..(i + 1) * n];
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, j, "row {i}: {row:?}");
            assert!(row[j] > 0.9, "row {i} not peaked: {row:?}");
        }
    }

    #[test]
    fn multi_head_attention_passes_grad_check() {
        let mut rng = derive_rng(11, &["mha-grad"]);
        let p = MultiHeadParams::init(4, 2, &mut rng);
        let q = random_tensor(vec![3, 4], &mut rng);
        let kv = random_tensor(vec![5, 4], &mut rng);
        let mut inputs = vec![q, kv];
        inputs.extend(p.named("m").into_iter().map(|(_, t)| t.clone()));
        grad_check(
            |t, vs| {
                let vals = MultiHeadVals {
                    wq: vec![vs[2], vs[5]],
                    wk: vec![vs[3], vs[6]],
                    wv: vec![vs[4], vs[7]],
                    wo: vs[8],
                };
                let mh = multi_head_attention(t, vs[0], vs[1], &vals);
                let sq = t.mul(mh.output, mh.output);
                t.sum(sq)
            },
            &inputs,
            1e-5,
            1e-4,
        )
        .assert_pass();
    }
}
