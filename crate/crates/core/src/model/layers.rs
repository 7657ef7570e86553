//! Differentiable building blocks: linear layers, GRU sequences and the
//! transformer encoder shared by the route encoder and the interactor.

use crate::model::{GruDir, Linear, Transformer};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// x @ W^T + b for x: n x in, W: out x in.
pub fn linear(tape: &mut Tape, l: &Linear<Var>, x: Var) -> Var {
    let y = tape.matmul_transb(x, l.weight);
    tape.add_row_broadcast(y, l.bias)
}

/// Run one GRU direction over `inputs` (each 1 x in) and return every hidden
/// state. The initial state is zero.
pub fn gru_sequence(tape: &mut Tape, p: &GruDir<Var>, inputs: &[Var], hidden: usize) -> Vec<Var> {
    let mut h = tape.leaf(Tensor::zeros(1, hidden));
    let mut states = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let rx = linear(tape, &p.rx, x);
        let rh = linear(tape, &p.rh, h);
        let r_pre = tape.add(rx, rh);
        let r = tape.sigmoid(r_pre);

        let zx = linear(tape, &p.zx, x);
        let zh = linear(tape, &p.zh, h);
        let z_pre = tape.add(zx, zh);
        let z = tape.sigmoid(z_pre);

        let nx = linear(tape, &p.nx, x);
        let nh = linear(tape, &p.nh, h);
        let gated = tape.mul(r, nh);
        let n_pre = tape.add(nx, gated);
        let n = tape.tanh(n_pre);

        // h' = (1 - z) * n + z * h
        let keep = tape.mul(z, h);
        let one_minus_z = tape.affine(z, -1.0, 1.0);
        let update = tape.mul(one_minus_z, n);
        h = tape.add(update, keep);
        states.push(h);
    }
    states
}

/// Multi-head self attention + FFN encoder stack (pre-norm residual blocks).
/// No positional signal is added here; callers inject whatever ordering
/// information the stage needs.
pub fn transformer_encode(tape: &mut Tape, t: &Transformer<Var>, x: Var, heads: usize) -> Var {
    let mut h = x;
    for layer in &t.layers {
        let width = tape.value(h).cols();
        debug_assert_eq!(width % heads, 0);
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let n1 = tape.layer_norm_rows(h, layer.norm1.gamma, layer.norm1.beta, LAYER_NORM_EPS);
        let q = linear(tape, &layer.wq, n1);
        let k = linear(tape, &layer.wk, n1);
        let v = linear(tape, &layer.wv, n1);
        let mut head_outs = Vec::with_capacity(heads);
        for i in 0..heads {
            let qh = tape.slice_cols(q, i * dh, dh);
            let kh = tape.slice_cols(k, i * dh, dh);
            let vh = tape.slice_cols(v, i * dh, dh);
            let scores = tape.matmul_transb(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores);
            head_outs.push(tape.matmul(attn, vh));
        }
        let ctx = tape.concat_cols(&head_outs);
        let attn_out = linear(tape, &layer.wo, ctx);
        let h1 = tape.add(h, attn_out);

        let n2 = tape.layer_norm_rows(h1, layer.norm2.gamma, layer.norm2.beta, LAYER_NORM_EPS);
        let f1 = linear(tape, &layer.ffn1, n2);
        let f1 = tape.relu(f1);
        let f2 = linear(tape, &layer.ffn2, f1);
        h = tape.add(h1, f2);
    }
    h
}
