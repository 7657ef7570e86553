//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is built per forward pass: every operation evaluates eagerly and
//! records enough structure to propagate gradients backwards. Nodes are
//! created in topological order, so a single reverse sweep over the node list
//! is a valid backward schedule. The engine is deliberately small: only the
//! operations the encoders need, all in f64, all single-threaded.

use std::rc::Rc;

use crate::tensor::{softmax_rows_inplace, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(Var, Var),
    /// A @ B^T
    MatmulTransB(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// (n x d) + broadcast (1 x d)
    AddRowBroadcast(Var, Var),
    /// k * x + c elementwise; only the slope matters for gradients
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    MeanRows(Var),
    SumAll(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
    LayerNormRows {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    /// Per-row cross entropy of logits against integer targets -> k x 1.
    CrossEntropyRows(Var, Vec<usize>),
    /// Per-row binary cross entropy of logits against float targets -> k x 1.
    BceWithLogits(Var, Vec<f64>),
    /// Neighborhood-softmax attention aggregation over node features.
    GatAggregate {
        feats: Var,
        score_src: Var,
        score_dst: Var,
        neighbors: Rc<Vec<Vec<usize>>>,
        slope: f64,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward root w.r.t. `v`; zeros if the node was
    /// never reached.
    pub fn grad(&self, v: Var) -> Tensor {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[v.0].value.rows(), self.nodes[v.0].value.cols()),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        self.push(v, Op::Matmul(a, b))
    }

    pub fn matmul_transb(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.matmul_transb(&self.nodes[b.0].value);
        self.push(v, Op::MatmulTransB(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.add(&self.nodes[b.0].value);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.sub(&self.nodes[b.0].value);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.mul(&self.nodes[b.0].value);
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_row_broadcast(&mut self, a: Var, row: Var) -> Var {
        let av = &self.nodes[a.0].value;
        let rv = &self.nodes[row.0].value;
        assert_eq!(rv.rows(), 1);
        assert_eq!(av.cols(), rv.cols());
        let mut out = av.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let v = out.get(r, c) + rv.get(0, c);
                out.set(r, c, v);
            }
        }
        self.push(out, Op::AddRowBroadcast(a, row))
    }

    pub fn affine(&mut self, a: Var, k: f64, c: f64) -> Var {
        let v = self.nodes[a.0].value.map(|x| k * x + c);
        self.push(v, Op::Affine(a, k))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.affine(a, k, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.nodes[a.0].value.map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.nodes[a.0].value.clone();
        softmax_rows_inplace(&mut v);
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mean_rows();
        self.push(v, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::from_vec(1, 1, vec![self.nodes[a.0].value.sum()]);
        self.push(v, Op::SumAll(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| &self.nodes[p.0].value).collect();
        let v = Tensor::concat_rows(&tensors);
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| &self.nodes[p.0].value).collect();
        let v = Tensor::concat_cols(&tensors);
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[a.0].value.slice_rows(start, len);
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.nodes[a.0].value.slice_cols(start, len);
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.nodes[a.0].value.gather_rows(idx);
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = &self.nodes[a.0].value;
        let mut out = Tensor::zeros(av.rows(), idx.len());
        for r in 0..av.rows() {
            for (c, &i) in idx.iter().enumerate() {
                out.set(r, c, av.get(r, i));
            }
        }
        self.push(out, Op::GatherCols(a, idx.to_vec()))
    }

    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gamma.0].value;
        let b = &self.nodes[beta.0].value;
        assert_eq!(g.rows(), 1);
        assert_eq!(b.rows(), 1);
        assert_eq!(g.cols(), xv.cols());
        let d = xv.cols();
        let mut out = Tensor::zeros(xv.rows(), d);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for c in 0..d {
                let xh = (row[c] - mean) * inv_std;
                out.set(r, c, g.get(0, c) * xh + b.get(0, c));
            }
        }
        self.push(out, Op::LayerNormRows { x, gamma, beta, eps })
    }

    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.rows(), targets.len());
        let mut out = Tensor::zeros(targets.len(), 1);
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            assert!(t < row.len(), "target out of range");
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            out.set(r, 0, lse - row[t]);
        }
        self.push(out, Op::CrossEntropyRows(logits, targets.to_vec()))
    }

    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.rows(), targets.len());
        assert_eq!(lv.cols(), 1);
        let mut out = Tensor::zeros(targets.len(), 1);
        for (r, &y) in targets.iter().enumerate() {
            let x = lv.get(r, 0);
            // max(x,0) - x*y + ln(1 + exp(-|x|)) is the stable form.
            let loss = x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
            out.set(r, 0, loss);
        }
        self.push(out, Op::BceWithLogits(logits, targets.to_vec()))
    }

    /// For each node i: out[i] = sum_j alpha_ij * feats[j] with
    /// alpha = softmax_j(leaky_relu(score_src[i] + score_dst[j])) over
    /// `neighbors[i]`. Every neighbor list must be non-empty.
    pub fn gat_aggregate(
        &mut self,
        feats: Var,
        score_src: Var,
        score_dst: Var,
        neighbors: Rc<Vec<Vec<usize>>>,
        slope: f64,
    ) -> Var {
        let f = &self.nodes[feats.0].value;
        let ss = &self.nodes[score_src.0].value;
        let sd = &self.nodes[score_dst.0].value;
        assert_eq!(f.rows(), neighbors.len());
        assert_eq!(ss.shape(), (f.rows(), 1));
        assert_eq!(sd.shape(), (f.rows(), 1));
        let d = f.cols();
        let mut out = Tensor::zeros(f.rows(), d);
        for (i, nb) in neighbors.iter().enumerate() {
            assert!(!nb.is_empty(), "empty neighborhood {i}");
            let alpha = gat_attention(ss, sd, i, nb, slope);
            for (&j, &a) in nb.iter().zip(alpha.iter()) {
                for c in 0..d {
                    let v = out.get(i, c) + a * f.get(j, c);
                    out.set(i, c, v);
                }
            }
        }
        self.push(
            out,
            Op::GatAggregate {
                feats,
                score_src,
                score_dst,
                neighbors,
                slope,
            },
        )
    }

    /// Propagate gradients from a 1x1 scalar root back to every reachable node.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(
            self.nodes[root.0].value.shape(),
            (1, 1),
            "backward root must be scalar"
        );
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[root.0].grad = Some(Tensor::from_vec(1, 1, vec![1.0]));

        for i in (0..=root.0).rev() {
            let g = match self.nodes[i].grad.take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_parents(i, &g);
            self.nodes[i].grad = Some(g);
        }
    }

    fn add_grad(&mut self, v: Var, delta: &Tensor) {
        let node = &mut self.nodes[v.0];
        match &mut node.grad {
            Some(g) => g.add_assign(delta),
            None => node.grad = Some(delta.clone()),
        }
    }

    fn accumulate_parents(&mut self, i: usize, g: &Tensor) {
        // Ops are matched by value snapshots; parent values are immutable once
        // created, so reading them back during the reverse sweep is sound.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let da = g.matmul_transb(&self.nodes[b.0].value);
                let db = self.nodes[a.0].value.matmul_transa(g);
                self.add_grad(*a, &da);
                self.add_grad(*b, &db);
            }
            Op::MatmulTransB(a, b) => {
                let da = g.matmul(&self.nodes[b.0].value);
                let db = g.matmul_transa(&self.nodes[a.0].value);
                self.add_grad(*a, &da);
                self.add_grad(*b, &db);
            }
            Op::Add(a, b) => {
                self.add_grad(*a, g);
                self.add_grad(*b, g);
            }
            Op::Sub(a, b) => {
                self.add_grad(*a, g);
                let neg = g.scale(-1.0);
                self.add_grad(*b, &neg);
            }
            Op::Mul(a, b) => {
                let da = g.mul(&self.nodes[b.0].value);
                let db = g.mul(&self.nodes[a.0].value);
                self.add_grad(*a, &da);
                self.add_grad(*b, &db);
            }
            Op::AddRowBroadcast(a, row) => {
                self.add_grad(*a, g);
                let mut drow = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        let v = drow.get(0, c) + g.get(r, c);
                        drow.set(0, c, v);
                    }
                }
                self.add_grad(*row, &drow);
            }
            Op::Affine(a, k) => {
                let da = g.scale(*k);
                self.add_grad(*a, &da);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let da = g.mul(&y.map(|v| v * (1.0 - v)));
                self.add_grad(*a, &da);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                let da = g.mul(&y.map(|v| 1.0 - v * v));
                self.add_grad(*a, &da);
            }
            Op::Relu(a) => {
                let x = &self.nodes[a.0].value;
                let da = g.mul(&x.map(|v| if v > 0.0 { 1.0 } else { 0.0 }));
                self.add_grad(*a, &da);
            }
            Op::LeakyRelu(a, slope) => {
                let x = &self.nodes[a.0].value;
                let s = *slope;
                let da = g.mul(&x.map(|v| if v > 0.0 { 1.0 } else { s }));
                self.add_grad(*a, &da);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let mut da = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr.iter()).map(|(&a, &b)| a * b).sum();
                    for c in 0..y.cols() {
                        da.set(r, c, yr[c] * (gr[c] - dot));
                    }
                }
                self.add_grad(*a, &da);
            }
            Op::MeanRows(a) => {
                let n = self.nodes[a.0].value.rows();
                let inv = 1.0 / n as f64;
                let mut da = Tensor::zeros(n, g.cols());
                for r in 0..n {
                    for c in 0..g.cols() {
                        da.set(r, c, g.get(0, c) * inv);
                    }
                }
                self.add_grad(*a, &da);
            }
            Op::SumAll(a) => {
                let shape = self.nodes[a.0].value.shape();
                let da = Tensor::full(shape.0, shape.1, g.get(0, 0));
                self.add_grad(*a, &da);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = self.nodes[p.0].value.rows();
                    let dp = g.slice_rows(start, rows);
                    self.add_grad(*p, &dp);
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let cols = self.nodes[p.0].value.cols();
                    let dp = g.slice_cols(start, cols);
                    self.add_grad(*p, &dp);
                    start += cols;
                }
            }
            Op::SliceRows(a, start) => {
                let shape = self.nodes[a.0].value.shape();
                let mut da = Tensor::zeros(shape.0, shape.1);
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        da.set(start + r, c, g.get(r, c));
                    }
                }
                self.add_grad(*a, &da);
            }
            Op::SliceCols(a, start) => {
                let shape = self.nodes[a.0].value.shape();
                let mut da = Tensor::zeros(shape.0, shape.1);
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        da.set(r, start + c, g.get(r, c));
                    }
                }
                self.add_grad(*a, &da);
            }
            Op::GatherRows(a, idx) => {
                let shape = self.nodes[a.0].value.shape();
                let mut da = Tensor::zeros(shape.0, shape.1);
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..g.cols() {
                        let v = da.get(src, c) + g.get(r, c);
                        da.set(src, c, v);
                    }
                }
                self.add_grad(*a, &da);
            }
            Op::GatherCols(a, idx) => {
                let shape = self.nodes[a.0].value.shape();
                let mut da = Tensor::zeros(shape.0, shape.1);
                for r in 0..g.rows() {
                    for (c, &src) in idx.iter().enumerate() {
                        let v = da.get(r, src) + g.get(r, c);
                        da.set(r, src, v);
                    }
                }
                self.add_grad(*a, &da);
            }
            Op::LayerNormRows { x, gamma, beta, eps } => {
                let xv = &self.nodes[x.0].value;
                let gv = &self.nodes[gamma.0].value;
                let d = xv.cols();
                let inv_d = 1.0 / d as f64;
                let mut dx = Tensor::zeros(xv.rows(), d);
                let mut dgamma = Tensor::zeros(1, d);
                let mut dbeta = Tensor::zeros(1, d);
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let mean = row.iter().sum::<f64>() * inv_d;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * inv_d;
                    let inv_std = 1.0 / (var + eps).sqrt();
                    // dxhat for this row, plus the two reductions it needs.
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    let mut dxhat = vec![0.0; d];
                    for c in 0..d {
                        let xh = (row[c] - mean) * inv_std;
                        let gr = g.get(r, c);
                        dgamma.set(0, c, dgamma.get(0, c) + gr * xh);
                        dbeta.set(0, c, dbeta.get(0, c) + gr);
                        let dh = gr * gv.get(0, c);
                        dxhat[c] = dh;
                        sum_dxhat += dh;
                        sum_dxhat_xhat += dh * xh;
                    }
                    for c in 0..d {
                        let xh = (row[c] - mean) * inv_std;
                        let v = inv_std * (dxhat[c] - inv_d * sum_dxhat - inv_d * xh * sum_dxhat_xhat);
                        dx.set(r, c, v);
                    }
                }
                self.add_grad(*x, &dx);
                self.add_grad(*gamma, &dgamma);
                self.add_grad(*beta, &dbeta);
            }
            Op::CrossEntropyRows(logits, targets) => {
                let lv = &self.nodes[logits.0].value;
                let mut dl = Tensor::zeros(lv.rows(), lv.cols());
                for (r, &t) in targets.iter().enumerate() {
                    let row = lv.row(r);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
                    let gr = g.get(r, 0);
                    for c in 0..lv.cols() {
                        let p = (row[c] - max).exp() / sum;
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        dl.set(r, c, gr * (p - onehot));
                    }
                }
                self.add_grad(*logits, &dl);
            }
            Op::BceWithLogits(logits, targets) => {
                let lv = &self.nodes[logits.0].value;
                let mut dl = Tensor::zeros(lv.rows(), 1);
                for (r, &y) in targets.iter().enumerate() {
                    let x = lv.get(r, 0);
                    dl.set(r, 0, g.get(r, 0) * (sigmoid(x) - y));
                }
                self.add_grad(*logits, &dl);
            }
            Op::GatAggregate {
                feats,
                score_src,
                score_dst,
                neighbors,
                slope,
            } => {
                let f = &self.nodes[feats.0].value;
                let ss = &self.nodes[score_src.0].value;
                let sd = &self.nodes[score_dst.0].value;
                let d = f.cols();
                let mut df = Tensor::zeros(f.rows(), d);
                let mut dss = Tensor::zeros(f.rows(), 1);
                let mut dsd = Tensor::zeros(f.rows(), 1);
                for (n, nb) in neighbors.iter().enumerate() {
                    let alpha = gat_attention(ss, sd, n, nb, *slope);
                    let grow = g.row(n);
                    // d(alpha_j) = g . feats[j]; softmax backward; leaky backward.
                    let mut dalpha = vec![0.0; nb.len()];
                    for (k, &j) in nb.iter().enumerate() {
                        let a = alpha[k];
                        let frow = f.row(j);
                        let mut dot = 0.0;
                        for c in 0..d {
                            let v = df.get(j, c) + a * grow[c];
                            df.set(j, c, v);
                            dot += grow[c] * frow[c];
                        }
                        dalpha[k] = dot;
                    }
                    let inner: f64 = alpha.iter().zip(dalpha.iter()).map(|(&a, &da)| a * da).sum();
                    let mut dsrc_sum = 0.0;
                    for (k, &j) in nb.iter().enumerate() {
                        let dlogit = alpha[k] * (dalpha[k] - inner);
                        let pre = ss.get(n, 0) + sd.get(j, 0);
                        let dpre = if pre > 0.0 { dlogit } else { slope * dlogit };
                        dsrc_sum += dpre;
                        dsd.set(j, 0, dsd.get(j, 0) + dpre);
                    }
                    dss.set(n, 0, dss.get(n, 0) + dsrc_sum);
                }
                self.add_grad(*feats, &df);
                self.add_grad(*score_src, &dss);
                self.add_grad(*score_dst, &dsd);
            }
        }
        self.nodes[i].op = op;
    }
}

fn gat_attention(ss: &Tensor, sd: &Tensor, node: usize, nb: &[usize], slope: f64) -> Vec<f64> {
    let mut logits: Vec<f64> = nb
        .iter()
        .map(|&j| {
            let pre = ss.get(node, 0) + sd.get(j, 0);
            if pre > 0.0 {
                pre
            } else {
                slope * pre
            }
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in &mut logits {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in &mut logits {
        *l /= sum;
    }
    logits
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
