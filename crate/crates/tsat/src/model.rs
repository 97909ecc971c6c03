//! The forecaster: an RNN time embedding feeding M post-norm attention
//! blocks whose per-head scores mix three terms — softmax(QKᵀ/√d_k), the
//! per-IMF similarity matrices, and the adjacency — weighted by a trainable
//! alpha vector shared across heads. A final LayerNorm yields per-node
//! embeddings; the forecast head is a shared affine map applied per node,
//! and the mean over nodes is exported as the pooled graph embedding.

use crate::error::{Result, TsatError};
use crate::graph::DynamicGraph;
use crate::rng::{seed_stream, streams};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Activation applied to the IMF similarity matrices inside the score mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImfActivation {
    /// Row-wise softmax (the default).
    Softmax,
    /// Elementwise exp.
    Exp,
    /// Identity.
    None,
}

impl fmt::Display for ImfActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ImfActivation::Softmax => "softmax",
            ImfActivation::Exp => "exp",
            ImfActivation::None => "none",
        };
        f.write_str(s)
    }
}

impl FromStr for ImfActivation {
    type Err = TsatError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(ImfActivation::Softmax),
            "exp" => Ok(ImfActivation::Exp),
            "none" => Ok(ImfActivation::None),
            other => Err(TsatError::Parameter {
                name: "imf_activation",
                detail: format!("expected softmax|exp|none, got {:?}", other),
            }),
        }
    }
}

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TsatConfig {
    pub num_series: usize,
    pub backcast_len: usize,
    pub forecast_len: usize,
    pub num_imfs: usize,
    pub model_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub ffn_width: usize,
    pub dropout_p: f64,
    pub imf_activation: ImfActivation,
    pub use_edge: bool,
    pub use_adjacency: bool,
    pub threshold: f64,
    pub seed: u64,
}

impl TsatConfig {
    /// Defaults for a given data shape; ffn width follows the 4×d convention.
    pub fn new(num_series: usize, backcast_len: usize, forecast_len: usize) -> Self {
        let model_dim = 16;
        TsatConfig {
            num_series,
            backcast_len,
            forecast_len,
            num_imfs: 4,
            model_dim,
            key_dim: model_dim / 2,
            value_dim: model_dim / 2,
            num_heads: 4,
            num_blocks: 1,
            ffn_width: 4 * model_dim,
            dropout_p: 0.1,
            imf_activation: ImfActivation::Softmax,
            use_edge: true,
            use_adjacency: true,
            threshold: crate::graph::DEFAULT_THRESHOLD,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, usize); 9] = [
            ("num_series", self.num_series),
            ("backcast_len", self.backcast_len),
            ("forecast_len", self.forecast_len),
            ("num_imfs", self.num_imfs),
            ("model_dim", self.model_dim),
            ("key_dim", self.key_dim),
            ("value_dim", self.value_dim),
            ("num_heads", self.num_heads),
            ("ffn_width", self.ffn_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(TsatError::Config(format!("{} must be at least 1", name)));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(TsatError::Config(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(TsatError::Config(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    /// Key width rule ⌊backcast_len / 2^n⌋ for n in 1..=4.
    pub fn suggested_key_width(backcast_len: usize, n: u32) -> usize {
        backcast_len >> n
    }

    /// Total trainable parameter count as a pure function of the config;
    /// used as a regression check against the initialized tensors.
    pub fn parameter_count(&self) -> usize {
        let d = self.model_dim;
        let per_block = self.num_heads * (2 * d * self.key_dim + d * self.value_dim)
            + self.num_heads * self.value_dim * d
            + 2 * d
            + d * self.ffn_width
            + self.ffn_width
            + self.ffn_width * d
            + d
            + 2 * d;
        d + d * d + d                                  // rnn
            + (self.num_imfs + 2)                      // alpha
            + self.num_blocks * per_block
            + 2 * d                                    // final layer norm
            + d * self.forecast_len + self.forecast_len // head
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub heads: Vec<HeadParams>,
    pub w_o: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

/// All trainable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TsatParams {
    pub rnn_w_in: Tensor,
    pub rnn_w_hh: Tensor,
    pub rnn_bias: Tensor,
    pub alpha: Tensor,
    pub blocks: Vec<BlockParams>,
    pub final_ln_gain: Tensor,
    pub final_ln_bias: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl TsatParams {
    /// Glorot-uniform matrices, zero biases, unit LayerNorm gains, and a
    /// uniform alpha vector summing to 1. Fully determined by the seed.
    pub fn init(config: &TsatConfig, seed: u64) -> Result<TsatParams> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(seed, streams::INIT));
        let d = config.model_dim;
        let rnn_w_in = glorot(&mut rng, 1, d);
        let rnn_w_hh = glorot(&mut rng, d, d);
        let rnn_bias = Tensor::zeros(vec![d]);
        let alpha_val = 1.0 / (config.num_imfs + 2) as f64;
        let alpha = Tensor::from_vec(vec![alpha_val; config.num_imfs + 2]);
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for _ in 0..config.num_blocks {
            let heads = (0..config.num_heads)
                .map(|_| HeadParams {
                    w_q: glorot(&mut rng, d, config.key_dim),
                    w_k: glorot(&mut rng, d, config.key_dim),
                    w_v: glorot(&mut rng, d, config.value_dim),
                })
                .collect();
            blocks.push(BlockParams {
                heads,
                w_o: glorot(&mut rng, config.num_heads * config.value_dim, d),
                ln1_gain: Tensor::from_vec(vec![1.0; d]),
                ln1_bias: Tensor::zeros(vec![d]),
                ffn_w1: glorot(&mut rng, d, config.ffn_width),
                ffn_b1: Tensor::zeros(vec![config.ffn_width]),
                ffn_w2: glorot(&mut rng, config.ffn_width, d),
                ffn_b2: Tensor::zeros(vec![d]),
                ln2_gain: Tensor::from_vec(vec![1.0; d]),
                ln2_bias: Tensor::zeros(vec![d]),
            });
        }
        Ok(TsatParams {
            rnn_w_in,
            rnn_w_hh,
            rnn_bias,
            alpha,
            blocks,
            final_ln_gain: Tensor::from_vec(vec![1.0; d]),
            final_ln_bias: Tensor::zeros(vec![d]),
            head_w: glorot(&mut rng, d, config.forecast_len),
            head_b: Tensor::zeros(vec![config.forecast_len]),
        })
    }

    /// Parameter tensors in canonical order with stable names. The order is
    /// the contract between staging, gradient extraction, optimizer states,
    /// and checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("rnn_w_in".to_string(), &self.rnn_w_in),
            ("rnn_w_hh".to_string(), &self.rnn_w_hh),
            ("rnn_bias".to_string(), &self.rnn_bias),
            ("alpha".to_string(), &self.alpha),
        ];
        for (b, block) in self.blocks.iter().enumerate() {
            for (h, head) in block.heads.iter().enumerate() {
                out.push((format!("block{}.head{}.w_q", b, h), &head.w_q));
                out.push((format!("block{}.head{}.w_k", b, h), &head.w_k));
                out.push((format!("block{}.head{}.w_v", b, h), &head.w_v));
            }
            out.push((format!("block{}.w_o", b), &block.w_o));
            out.push((format!("block{}.ln1_gain", b), &block.ln1_gain));
            out.push((format!("block{}.ln1_bias", b), &block.ln1_bias));
            out.push((format!("block{}.ffn_w1", b), &block.ffn_w1));
            out.push((format!("block{}.ffn_b1", b), &block.ffn_b1));
            out.push((format!("block{}.ffn_w2", b), &block.ffn_w2));
            out.push((format!("block{}.ffn_b2", b), &block.ffn_b2));
            out.push((format!("block{}.ln2_gain", b), &block.ln2_gain));
            out.push((format!("block{}.ln2_bias", b), &block.ln2_bias));
        }
        out.push(("final_ln_gain".to_string(), &self.final_ln_gain));
        out.push(("final_ln_bias".to_string(), &self.final_ln_bias));
        out.push(("head_w".to_string(), &self.head_w));
        out.push(("head_b".to_string(), &self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![
            &mut self.rnn_w_in,
            &mut self.rnn_w_hh,
            &mut self.rnn_bias,
            &mut self.alpha,
        ];
        for block in &mut self.blocks {
            for head in &mut block.heads {
                out.push(&mut head.w_q);
                out.push(&mut head.w_k);
                out.push(&mut head.w_v);
            }
            out.push(&mut block.w_o);
            out.push(&mut block.ln1_gain);
            out.push(&mut block.ln1_bias);
            out.push(&mut block.ffn_w1);
            out.push(&mut block.ffn_b1);
            out.push(&mut block.ffn_w2);
            out.push(&mut block.ffn_b2);
            out.push(&mut block.ln2_gain);
            out.push(&mut block.ln2_bias);
        }
        out.push(&mut self.final_ln_gain);
        out.push(&mut self.final_ln_bias);
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn total_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let data: Vec<f64> = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("sized data")
}

/// Parameter node ids on a tape, in the same canonical order as
/// [`TsatParams::named_tensors`].
pub struct StagedParams {
    pub ids: Vec<NodeId>,
    pub rnn_w_in: NodeId,
    pub rnn_w_hh: NodeId,
    pub rnn_bias: NodeId,
    pub alpha: NodeId,
    pub blocks: Vec<StagedBlock>,
    pub final_ln_gain: NodeId,
    pub final_ln_bias: NodeId,
    pub head_w: NodeId,
    pub head_b: NodeId,
}

pub struct StagedBlock {
    pub heads: Vec<StagedHead>,
    pub w_o: NodeId,
    pub ln1_gain: NodeId,
    pub ln1_bias: NodeId,
    pub ffn_w1: NodeId,
    pub ffn_b1: NodeId,
    pub ffn_w2: NodeId,
    pub ffn_b2: NodeId,
    pub ln2_gain: NodeId,
    pub ln2_bias: NodeId,
}

pub struct StagedHead {
    pub w_q: NodeId,
    pub w_k: NodeId,
    pub w_v: NodeId,
}

/// Insert every parameter tensor as a trainable leaf.
pub fn stage_params(tape: &mut Tape, params: &TsatParams) -> StagedParams {
    let mut ids = Vec::new();
    let push = |tape: &mut Tape, t: &Tensor, ids: &mut Vec<NodeId>| {
        let id = tape.param(t.clone());
        ids.push(id);
        id
    };
    let rnn_w_in = push(tape, &params.rnn_w_in, &mut ids);
    let rnn_w_hh = push(tape, &params.rnn_w_hh, &mut ids);
    let rnn_bias = push(tape, &params.rnn_bias, &mut ids);
    let alpha = push(tape, &params.alpha, &mut ids);
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let heads = block
            .heads
            .iter()
            .map(|h| StagedHead {
                w_q: push(tape, &h.w_q, &mut ids),
                w_k: push(tape, &h.w_k, &mut ids),
                w_v: push(tape, &h.w_v, &mut ids),
            })
            .collect();
        blocks.push(StagedBlock {
            heads,
            w_o: push(tape, &block.w_o, &mut ids),
            ln1_gain: push(tape, &block.ln1_gain, &mut ids),
            ln1_bias: push(tape, &block.ln1_bias, &mut ids),
            ffn_w1: push(tape, &block.ffn_w1, &mut ids),
            ffn_b1: push(tape, &block.ffn_b1, &mut ids),
            ffn_w2: push(tape, &block.ffn_w2, &mut ids),
            ffn_b2: push(tape, &block.ffn_b2, &mut ids),
            ln2_gain: push(tape, &block.ln2_gain, &mut ids),
            ln2_bias: push(tape, &block.ln2_bias, &mut ids),
        });
    }
    let final_ln_gain = push(tape, &params.final_ln_gain, &mut ids);
    let final_ln_bias = push(tape, &params.final_ln_bias, &mut ids);
    let head_w = push(tape, &params.head_w, &mut ids);
    let head_b = push(tape, &params.head_b, &mut ids);
    StagedParams {
        ids,
        rnn_w_in,
        rnn_w_hh,
        rnn_bias,
        alpha,
        blocks,
        final_ln_gain,
        final_ln_bias,
        head_w,
        head_b,
    }
}

/// Constant graph-side inputs staged once per forward pass.
pub struct StagedGraph {
    pub imf_matrices: Vec<NodeId>,
    pub adjacency: NodeId,
    pub inv_sqrt_dk: NodeId,
}

pub fn stage_graph(tape: &mut Tape, graph: &DynamicGraph, config: &TsatConfig) -> StagedGraph {
    let imf_matrices = (0..config.num_imfs)
        .map(|k| tape.constant(graph.imf_similarity_matrix(k)))
        .collect();
    let adjacency = tape.constant(graph.adjacency.to_tensor());
    let inv_sqrt_dk = tape.constant(Tensor::scalar(1.0 / (config.key_dim as f64).sqrt()));
    StagedGraph {
        imf_matrices,
        adjacency,
        inv_sqrt_dk,
    }
}

/// Run the shared-weight tanh recurrence over the backcast steps of every
/// node; returns the N×d matrix of final hidden states.
pub fn time_embed(
    tape: &mut Tape,
    x: &Tensor,
    rnn_w_in: NodeId,
    rnn_w_hh: NodeId,
    rnn_bias: NodeId,
    config: &TsatConfig,
) -> Result<NodeId> {
    let (n, l_x) = x.dims2("time_embed")?;
    if n != config.num_series || l_x != config.backcast_len {
        return Err(TsatError::dimension(
            "time_embed",
            format!(
                "window is {}x{} but config expects {}x{}",
                n, l_x, config.num_series, config.backcast_len
            ),
        ));
    }
    let mut h = tape.constant(Tensor::zeros(vec![n, config.model_dim]));
    for t in 0..l_x {
        let col: Vec<f64> = (0..n).map(|i| x.at(i, t)).collect();
        let c = tape.constant(Tensor::new(vec![n, 1], col)?);
        let xin = tape.matmul(c, rnn_w_in)?;
        let hh = tape.matmul(h, rnn_w_hh)?;
        let s = tape.add(xin, hh)?;
        let sb = tape.add_row(s, rnn_bias)?;
        h = tape.tanh(sb);
    }
    Ok(h)
}

/// Mixed attention scores for one head:
/// `alpha_0 * softmax(QKᵀ/√d_k) + Σ_k alpha_k * act(D_k) + alpha_{K+1} * A`,
/// with the edge sum and adjacency term dropped when the corresponding
/// ablation flag is off.
pub fn attention_scores(
    tape: &mut Tape,
    h: NodeId,
    staged_graph: &StagedGraph,
    w_q: NodeId,
    w_k: NodeId,
    alpha: NodeId,
    config: &TsatConfig,
) -> Result<NodeId> {
    let q = tape.matmul(h, w_q)?;
    let k = tape.matmul(h, w_k)?;
    let kt = tape.transpose(k)?;
    let qk = tape.matmul(q, kt)?;
    let scaled = tape.scale_by(qk, staged_graph.inv_sqrt_dk)?;
    let sm = tape.softmax_rows(scaled)?;
    let alpha0 = tape.index(alpha, 0)?;
    let mut mixed = tape.scale_by(sm, alpha0)?;
    if config.use_edge {
        for (kk, &d_k) in staged_graph.imf_matrices.iter().enumerate() {
            let activated = match config.imf_activation {
                ImfActivation::Softmax => tape.softmax_rows(d_k)?,
                ImfActivation::Exp => tape.exp(d_k),
                ImfActivation::None => d_k,
            };
            let a_k = tape.index(alpha, kk + 1)?;
            let term = tape.scale_by(activated, a_k)?;
            mixed = tape.add(mixed, term)?;
        }
    }
    if config.use_adjacency {
        let a_last = tape.index(alpha, config.num_imfs + 1)?;
        let term = tape.scale_by(staged_graph.adjacency, a_last)?;
        mixed = tape.add(mixed, term)?;
    }
    Ok(mixed)
}

/// Per-head mixed scores times values, concatenated and projected by W_O.
pub fn multi_head_attention(
    tape: &mut Tape,
    h: NodeId,
    staged_graph: &StagedGraph,
    block: &StagedBlock,
    alpha: NodeId,
    config: &TsatConfig,
) -> Result<NodeId> {
    let mut head_outputs = Vec::with_capacity(block.heads.len());
    for head in &block.heads {
        let scores = attention_scores(tape, h, staged_graph, head.w_q, head.w_k, alpha, config)?;
        let v = tape.matmul(h, head.w_v)?;
        head_outputs.push(tape.matmul(scores, v)?);
    }
    let concat = tape.concat_cols(&head_outputs)?;
    tape.matmul(concat, block.w_o)
}

/// One post-norm block: LayerNorm(H + MHA(H)), then LayerNorm(· + FFN(·)),
/// with dropout on the block output while training.
#[allow(clippy::too_many_arguments)]
pub fn tsat_block(
    tape: &mut Tape,
    h: NodeId,
    staged_graph: &StagedGraph,
    block: &StagedBlock,
    alpha: NodeId,
    config: &TsatConfig,
    training: bool,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    let mha = multi_head_attention(tape, h, staged_graph, block, alpha, config)?;
    let sum1 = tape.add(h, mha)?;
    let ha = tape.layer_norm(sum1, block.ln1_gain, block.ln1_bias, LAYER_NORM_EPS)?;
    let f1 = tape.matmul(ha, block.ffn_w1)?;
    let f1b = tape.add_row(f1, block.ffn_b1)?;
    let act = tape.relu(f1b);
    let f2 = tape.matmul(act, block.ffn_w2)?;
    let f2b = tape.add_row(f2, block.ffn_b2)?;
    let sum2 = tape.add(ha, f2b)?;
    let out = tape.layer_norm(sum2, block.ln2_gain, block.ln2_bias, LAYER_NORM_EPS)?;
    Ok(apply_dropout(tape, out, config, training, dropout_rng)?)
}

fn apply_dropout(
    tape: &mut Tape,
    x: NodeId,
    config: &TsatConfig,
    training: bool,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    if !training || config.dropout_p == 0.0 {
        return Ok(x);
    }
    let rng = dropout_rng.ok_or_else(|| {
        TsatError::Contract("training forward with dropout_p > 0 needs a dropout rng".to_string())
    })?;
    Ok(tape.dropout(x, config.dropout_p, rng))
}

/// Forecast, embedding, and loss-relevant node ids of a staged forward pass.
pub struct StagedForward {
    pub forecasts: NodeId,
    pub node_embeddings: NodeId,
}

/// Full forward pass on an existing tape.
pub fn forward_staged(
    tape: &mut Tape,
    graph: &DynamicGraph,
    staged: &StagedParams,
    config: &TsatConfig,
    training: bool,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<StagedForward> {
    if graph.num_series() != config.num_series || graph.num_imfs() != config.num_imfs {
        return Err(TsatError::dimension(
            "forward",
            format!(
                "graph has {} series / {} IMFs but config expects {} / {}",
                graph.num_series(),
                graph.num_imfs(),
                config.num_series,
                config.num_imfs
            ),
        ));
    }
    let staged_graph = stage_graph(tape, graph, config);
    let mut h = time_embed(
        tape,
        graph.nodes.matrix(),
        staged.rnn_w_in,
        staged.rnn_w_hh,
        staged.rnn_bias,
        config,
    )?;
    for block in &staged.blocks {
        h = tsat_block(
            tape,
            h,
            &staged_graph,
            block,
            staged.alpha,
            config,
            training,
            dropout_rng.as_deref_mut(),
        )?;
    }
    let node_embeddings = tape.layer_norm(h, staged.final_ln_gain, staged.final_ln_bias, LAYER_NORM_EPS)?;
    let head_in = apply_dropout(tape, node_embeddings, config, training, dropout_rng.as_deref_mut())?;
    let projected = tape.matmul(head_in, staged.head_w)?;
    let forecasts = tape.add_row(projected, staged.head_b)?;
    Ok(StagedForward {
        forecasts,
        node_embeddings,
    })
}

/// Forecasts, per-node embeddings, and the node-mean pooled graph embedding.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub forecasts: Tensor,
    pub node_embeddings: Tensor,
    pub graph_embedding: Tensor,
}

/// Convenience forward on a fresh tape; returns plain tensors.
pub fn forward(
    graph: &DynamicGraph,
    params: &TsatParams,
    config: &TsatConfig,
    training: bool,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let staged = stage_params(&mut tape, params);
    let out = forward_staged(&mut tape, graph, &staged, config, training, dropout_rng)?;
    let forecasts = tape.value(out.forecasts).clone();
    let node_embeddings = tape.value(out.node_embeddings).clone();
    let graph_embedding = pool_nodes(&node_embeddings)?;
    Ok(ForwardOutput {
        forecasts,
        node_embeddings,
        graph_embedding,
    })
}

/// Mean over the node axis.
pub fn pool_nodes(node_embeddings: &Tensor) -> Result<Tensor> {
    let (n, d) = node_embeddings.dims2("pool_nodes")?;
    let mut out = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            out[j] += node_embeddings.at(i, j);
        }
    }
    for v in out.iter_mut() {
        *v /= n as f64;
    }
    Ok(Tensor::from_vec(out))
}
