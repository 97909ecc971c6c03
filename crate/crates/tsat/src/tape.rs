//! Reverse-mode automatic differentiation on a linear operation tape.
//!
//! Forward calls append nodes in topological order (every input id precedes
//! its consumer); [`Tape::backward`] walks the tape once in reverse and
//! accumulates adjoints. First-order only, which is all the training loop
//! needs.

use crate::error::{Result, TsatError};
use crate::tensor::{matmul_raw, transpose_raw, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddRow { m: usize, row: usize },
    Tanh { x: usize },
    Relu { x: usize },
    Exp { x: usize },
    SoftmaxRows { x: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, eps: f64 },
    Transpose { x: usize },
    ConcatCols { parts: Vec<usize> },
    ScaleBy { m: usize, s: usize },
    Index { v: usize, i: usize },
    MeanAll { x: usize },
    Dropout { x: usize, mask: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records primitive operations and replays them in reverse for gradients.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        value.debug_check_finite("tape_push");
        let id = self.nodes.len();
        self.nodes.push(Node { value, op });
        NodeId(id)
    }

    /// Insert a constant (no gradient requested).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { trainable: false })
    }

    /// Insert a trainable leaf; `backward` will produce its gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf { trainable: true })
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of a node after `backward`. Trainable leaves always have one.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.nodes[a.0].value.dims2("matmul")?;
        let (k2, n) = self.nodes[b.0].value.dims2("matmul")?;
        if k != k2 {
            return Err(TsatError::dimension(
                "matmul",
                format!("inner dimensions differ: {}x{} vs {}x{}", m, k, k2, n),
            ));
        }
        let data = matmul_raw(self.nodes[a.0].value.data(), self.nodes[b.0].value.data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::MatMul { a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.nodes[a.0].value.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(self.nodes[a.0].value.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Sub { a: a.0, b: b.0 }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data: Vec<f64> = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.nodes[a.0].value.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a: a.0, b: b.0 }))
    }

    /// Broadcast-add a length-c row vector to every row of an r×c matrix.
    pub fn add_row(&mut self, m: NodeId, row: NodeId) -> Result<NodeId> {
        let (r, c) = self.nodes[m.0].value.dims2("add_row")?;
        if self.nodes[row.0].value.shape() != [c] {
            return Err(TsatError::dimension(
                "add_row",
                format!(
                    "row shape {:?} does not match matrix width {}",
                    self.nodes[row.0].value.shape(),
                    c
                ),
            ));
        }
        let mut data = self.nodes[m.0].value.data().to_vec();
        let rv = self.nodes[row.0].value.data();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += rv[j];
            }
        }
        let value = Tensor::new(vec![r, c], data)?;
        Ok(self.push(value, Op::AddRow { m: m.0, row: row.0 }))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[x.0].value.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(self.nodes[x.0].value.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Tanh { x: x.0 })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[x.0].value.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::new(self.nodes[x.0].value.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Relu { x: x.0 })
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f64> = self.nodes[x.0].value.data().iter().map(|v| v.exp()).collect();
        let value = Tensor::new(self.nodes[x.0].value.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Exp { x: x.0 })
    }

    /// Row-wise softmax with per-row max subtraction, so a row like
    /// `[1000, 0]` cannot overflow.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.nodes[x.0].value.dims2("softmax_rows")?;
        let mut data = self.nodes[x.0].value.data().to_vec();
        softmax_rows_inplace(&mut data, r, c);
        let value = Tensor::new(vec![r, c], data)?;
        Ok(self.push(value, Op::SoftmaxRows { x: x.0 }))
    }

    /// Per-row normalization to mean 0 / variance 1, then the affine map
    /// `gain ⊙ x̂ + bias`.
    ///
    /// `eps` guards the variance: rows whose variance falls below `eps` are
    /// scaled by `sqrt(eps)` instead, so a constant row maps to the bias
    /// vector rather than dividing by zero.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        if eps <= 0.0 {
            return Err(TsatError::Parameter {
                name: "eps",
                detail: format!("must be > 0, got {}", eps),
            });
        }
        let (r, c) = self.nodes[x.0].value.dims2("layer_norm")?;
        if self.nodes[gain.0].value.shape() != [c] || self.nodes[bias.0].value.shape() != [c] {
            return Err(TsatError::dimension(
                "layer_norm",
                format!(
                    "gain {:?} / bias {:?} do not match width {}",
                    self.nodes[gain.0].value.shape(),
                    self.nodes[bias.0].value.shape(),
                    c
                ),
            ));
        }
        let xv = self.nodes[x.0].value.data();
        let g = self.nodes[gain.0].value.data();
        let b = self.nodes[bias.0].value.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let (mean, denom) = layer_norm_row_stats(row, eps);
            for j in 0..c {
                data[i * c + j] = g[j] * (row[j] - mean) / denom + b[j];
            }
        }
        let value = Tensor::new(vec![r, c], data)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                eps,
            },
        ))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.nodes[x.0].value.dims2("transpose")?;
        let data = transpose_raw(self.nodes[x.0].value.data(), r, c);
        let value = Tensor::new(vec![c, r], data)?;
        Ok(self.push(value, Op::Transpose { x: x.0 }))
    }

    /// Concatenate matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TsatError::dimension("concat_cols", "no parts".to_string()));
        }
        let (r, _) = self.nodes[parts[0].0].value.dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = self.nodes[p.0].value.dims2("concat_cols")?;
            if pr != r {
                return Err(TsatError::dimension(
                    "concat_cols",
                    format!("row counts differ: {} vs {}", r, pr),
                ));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; r * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let pv = self.nodes[p.0].value.data();
            for i in 0..r {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&pv[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let value = Tensor::new(vec![r, total], data)?;
        Ok(self.push(
            value,
            Op::ConcatCols {
                parts: parts.iter().map(|p| p.0).collect(),
            },
        ))
    }

    /// Multiply a tensor by a scalar node (shape `[1]`).
    pub fn scale_by(&mut self, m: NodeId, s: NodeId) -> Result<NodeId> {
        if !self.nodes[s.0].value.is_scalar() {
            return Err(TsatError::dimension(
                "scale_by",
                format!("scale must be a scalar, got {:?}", self.nodes[s.0].value.shape()),
            ));
        }
        let sv = self.nodes[s.0].value.data()[0];
        let data: Vec<f64> = self.nodes[m.0].value.data().iter().map(|v| v * sv).collect();
        let value = Tensor::new(self.nodes[m.0].value.shape().to_vec(), data)?;
        Ok(self.push(value, Op::ScaleBy { m: m.0, s: s.0 }))
    }

    /// Extract element `i` of a vector node as a scalar node.
    pub fn index(&mut self, v: NodeId, i: usize) -> Result<NodeId> {
        if i >= self.nodes[v.0].value.numel() {
            return Err(TsatError::dimension(
                "index",
                format!("index {} out of range for {} elements", i, self.nodes[v.0].value.numel()),
            ));
        }
        let value = Tensor::scalar(self.nodes[v.0].value.data()[i]);
        Ok(self.push(value, Op::Index { v: v.0, i }))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let d = self.nodes[x.0].value.data();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let value = Tensor::scalar(mean);
        self.push(value, Op::MeanAll { x: x.0 })
    }

    /// Inverted dropout: kept entries are scaled by 1/(1-p) so evaluation
    /// needs no rescaling. `p == 0` records an identity mask.
    pub fn dropout(&mut self, x: NodeId, p: f64, rng: &mut ChaCha8Rng) -> NodeId {
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = self.nodes[x.0]
            .value
            .data()
            .iter()
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep_scale })
            .collect();
        let data: Vec<f64> = self.nodes[x.0]
            .value
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let value = Tensor::new(self.nodes[x.0].value.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Dropout { x: x.0, mask })
    }

    /// Mean squared error between a prediction node and a constant target.
    pub fn mse_against(&mut self, pred: NodeId, target: &Tensor) -> Result<NodeId> {
        if self.nodes[pred.0].value.shape() != target.shape() {
            return Err(TsatError::dimension(
                "mse_loss",
                format!(
                    "prediction shape {:?} vs target shape {:?}",
                    self.nodes[pred.0].value.shape(),
                    target.shape()
                ),
            ));
        }
        let t = self.constant(target.clone());
        let diff = self.sub(pred, t)?;
        let sq = self.mul(diff, diff)?;
        Ok(self.mean_all(sq))
    }

    /// Reverse sweep from a scalar loss node. Every trainable leaf ends up
    /// with a gradient of its own shape.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(TsatError::Contract(format!(
                "backward requires a scalar loss node, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let n = self.nodes.len();
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|nd| vec![0.0; nd.value.numel()]).collect();
        adj[loss.0][0] = 1.0;

        for id in (0..=loss.0).rev() {
            if adj[id].iter().all(|&g| g == 0.0) && id != loss.0 {
                continue;
            }
            // Copy this node's adjoint so inputs can be borrowed mutably.
            let g = adj[id].clone();
            match &self.nodes[id].op {
                Op::Leaf { .. } => {}
                Op::MatMul { a, b } => {
                    let (m, k) = (self.nodes[*a].value.shape()[0], self.nodes[*a].value.shape()[1]);
                    let nn = self.nodes[*b].value.shape()[1];
                    let bv = self.nodes[*b].value.data();
                    let av = self.nodes[*a].value.data();
                    let bt = transpose_raw(bv, k, nn);
                    let da = matmul_raw(&g, &bt, m, nn, k);
                    let at = transpose_raw(av, m, k);
                    let db = matmul_raw(&at, &g, k, m, nn);
                    accumulate(&mut adj[*a], &da);
                    accumulate(&mut adj[*b], &db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut adj[*a], &g);
                    accumulate(&mut adj[*b], &g);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut adj[*a], &g);
                    for (dst, src) in adj[*b].iter_mut().zip(&g) {
                        *dst -= src;
                    }
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.len() {
                        adj[a][i] += g[i] * self.nodes[b].value.data()[i];
                    }
                    for i in 0..g.len() {
                        adj[b][i] += g[i] * self.nodes[a].value.data()[i];
                    }
                }
                Op::AddRow { m, row } => {
                    let c = self.nodes[*row].value.numel();
                    accumulate(&mut adj[*m], &g);
                    let dr = &mut adj[*row];
                    for (i, gv) in g.iter().enumerate() {
                        dr[i % c] += gv;
                    }
                }
                Op::Tanh { x } => {
                    let y = self.nodes[id].value.data();
                    for i in 0..g.len() {
                        adj[*x][i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Relu { x } => {
                    let xv = self.nodes[*x].value.data();
                    for i in 0..g.len() {
                        if xv[i] > 0.0 {
                            adj[*x][i] += g[i];
                        }
                    }
                }
                Op::Exp { x } => {
                    let y = self.nodes[id].value.data();
                    for i in 0..g.len() {
                        adj[*x][i] += g[i] * y[i];
                    }
                }
                Op::SoftmaxRows { x } => {
                    let y = self.nodes[id].value.data();
                    let c = self.nodes[id].value.shape()[1];
                    let r = self.nodes[id].value.shape()[0];
                    let dx = &mut adj[*x];
                    for i in 0..r {
                        let yr = &y[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                        for j in 0..c {
                            dx[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (x, gain, bias, eps) = (*x, *gain, *bias, *eps);
                    let (r, c) = (self.nodes[x].value.shape()[0], self.nodes[x].value.shape()[1]);
                    let xv = self.nodes[x].value.data().to_vec();
                    let gv = self.nodes[gain].value.data().to_vec();
                    for i in 0..r {
                        let row = &xv[i * c..(i + 1) * c];
                        let (mean, var) = layer_norm_row_moments(row);
                        let var_guarded = var <= eps;
                        let denom = var.max(eps).sqrt();
                        let gr = &g[i * c..(i + 1) * c];
                        // u = gain ⊙ upstream for this row
                        let u: Vec<f64> = (0..c).map(|j| gv[j] * gr[j]).collect();
                        let mean_u = u.iter().sum::<f64>() / c as f64;
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) / denom).collect();
                        let mean_ux = u.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            adj[bias][j] += gr[j];
                            adj[gain][j] += gr[j] * xhat[j];
                            let d = if var_guarded {
                                // denominator is the constant sqrt(eps)
                                (u[j] - mean_u) / denom
                            } else {
                                (u[j] - mean_u - xhat[j] * mean_ux) / denom
                            };
                            adj[x][i * c + j] += d;
                        }
                    }
                }
                Op::Transpose { x } => {
                    let (r, c) = (self.nodes[id].value.shape()[0], self.nodes[id].value.shape()[1]);
                    let gt = transpose_raw(&g, r, c);
                    accumulate(&mut adj[*x], &gt);
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let r = self.nodes[id].value.shape()[0];
                    let total = self.nodes[id].value.shape()[1];
                    let mut offset = 0;
                    for p in parts {
                        let w = self.nodes[p].value.shape()[1];
                        for i in 0..r {
                            for j in 0..w {
                                adj[p][i * w + j] += g[i * total + offset + j];
                            }
                        }
                        offset += w;
                    }
                }
                Op::ScaleBy { m, s } => {
                    let (m, s) = (*m, *s);
                    let sv = self.nodes[s].value.data()[0];
                    let mut ds = 0.0;
                    for i in 0..g.len() {
                        adj[m][i] += g[i] * sv;
                        ds += g[i] * self.nodes[m].value.data()[i];
                    }
                    adj[s][0] += ds;
                }
                Op::Index { v, i } => {
                    adj[*v][*i] += g[0];
                }
                Op::MeanAll { x } => {
                    let numel = self.nodes[*x].value.numel() as f64;
                    let share = g[0] / numel;
                    for dst in adj[*x].iter_mut() {
                        *dst += share;
                    }
                }
                Op::Dropout { x, mask } => {
                    let x = *x;
                    for i in 0..g.len() {
                        adj[x][i] += g[i] * mask[i];
                    }
                }
            }
        }

        self.grads = (0..n)
            .map(|id| {
                if adj[id].is_empty() {
                    None
                } else {
                    Tensor::new(self.nodes[id].value.shape().to_vec(), std::mem::take(&mut adj[id])).ok()
                }
            })
            .collect();
        // Consumed (non-leaf) adjoints were moved out during the sweep; make
        // sure trainable leaves always report a gradient tensor.
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf { trainable: true }) && self.grads[id].is_none() {
                self.grads[id] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(())
    }

    /// One text line per node with its gradient l2 norm; the debug dump
    /// behind the CLI's --dump-grad-norms flag.
    pub fn grad_norm_report(&self) -> String {
        let mut out = String::new();
        for (id, node) in self.nodes.iter().enumerate() {
            let norm = self
                .grads
                .get(id)
                .and_then(|g| g.as_ref())
                .map(|g| g.l2_norm())
                .unwrap_or(0.0);
            out.push_str(&format!(
                "node {:5}  {:12}  shape {:?}  grad_l2 {}\n",
                id,
                op_name(&node.op),
                node.value.shape(),
                norm
            ));
        }
        out
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.nodes[a.0].value.shape() != self.nodes[b.0].value.shape() {
            return Err(TsatError::dimension(
                op,
                format!(
                    "shapes differ: {:?} vs {:?}",
                    self.nodes[a.0].value.shape(),
                    self.nodes[b.0].value.shape()
                ),
            ));
        }
        Ok(())
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf { trainable: true } => "param",
        Op::Leaf { trainable: false } => "const",
        Op::MatMul { .. } => "matmul",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::AddRow { .. } => "add_row",
        Op::Tanh { .. } => "tanh",
        Op::Relu { .. } => "relu",
        Op::Exp { .. } => "exp",
        Op::SoftmaxRows { .. } => "softmax_rows",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Transpose { .. } => "transpose",
        Op::ConcatCols { .. } => "concat_cols",
        Op::ScaleBy { .. } => "scale_by",
        Op::Index { .. } => "index",
        Op::MeanAll { .. } => "mean_all",
        Op::Dropout { .. } => "dropout",
    }
}

pub(crate) fn softmax_rows_inplace(data: &mut [f64], rows: usize, cols: usize) {
    for i in 0..rows {
        let row = &mut data[i * cols..(i + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Row mean and population variance, shared by forward and backward.
pub(crate) fn layer_norm_row_moments(row: &[f64]) -> (f64, f64) {
    let c = row.len() as f64;
    let mean = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
    (mean, var)
}

pub(crate) fn layer_norm_row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let (mean, var) = layer_norm_row_moments(row);
    (mean, var.max(eps).sqrt())
}
