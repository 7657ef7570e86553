//! Trainable heads and label transforms for the downstream protocols. The
//! backbone stays frozen; everything here fits small heads on extracted
//! representations.

use crate::model::Linear;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Column-wise standardization statistics fitted on a training fold.
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor) -> Self {
        let n = x.rows().max(1) as f64;
        let d = x.cols();
        let mut mean = vec![0.0; d];
        for r in 0..x.rows() {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += x.get(r, c);
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut std = vec![0.0; d];
        for r in 0..x.rows() {
            for c in 0..d {
                let dlt = x.get(r, c) - mean[c];
                std[c] += dlt * dlt;
            }
        }
        for s in &mut std {
            *s = (*s / n).sqrt();
            if *s < 1e-9 {
                *s = 1.0;
            }
        }
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let v = (out.get(r, c) - self.mean[c]) / self.std[c];
                out.set(r, c, v);
            }
        }
        out
    }
}

/// Multinomial logistic regression trained by full-batch gradient descent
/// from a zero initialization (the problem is convex, so this is
/// deterministic without any seed).
pub fn train_softmax_probe(
    x: &Tensor,
    y: &[usize],
    classes: usize,
    epochs: usize,
    lr: f64,
) -> Linear<Tensor> {
    assert_eq!(x.rows(), y.len());
    let n = x.rows();
    let mut head = Linear {
        weight: Tensor::zeros(classes, x.cols()),
        bias: Tensor::zeros(1, classes),
    };
    for _ in 0..epochs {
        let mut probs = x.matmul_transb(&head.weight);
        for r in 0..n {
            for c in 0..classes {
                let v = probs.get(r, c) + head.bias.get(0, c);
                probs.set(r, c, v);
            }
        }
        crate::tensor::softmax_rows_inplace(&mut probs);
        for (r, &label) in y.iter().enumerate() {
            let v = probs.get(r, label) - 1.0;
            probs.set(r, label, v);
        }
        // dW = (P - Y)^T X / n, db = colsum(P - Y) / n
        let dw = probs.matmul_transa(x).scale(1.0 / n as f64);
        head.weight.scaled_add_assign(&dw, -lr);
        let mut db = Tensor::zeros(1, classes);
        for r in 0..n {
            for c in 0..classes {
                let v = db.get(0, c) + probs.get(r, c);
                db.set(0, c, v);
            }
        }
        head.bias.scaled_add_assign(&db.scale(1.0 / n as f64), -lr);
    }
    head
}

pub fn probe_predict(head: &Linear<Tensor>, x: &Tensor) -> Vec<usize> {
    let mut logits = x.matmul_transb(&head.weight);
    (0..x.rows())
        .map(|r| {
            let row = logits.row_mut(r);
            for (c, v) in row.iter_mut().enumerate() {
                *v += head.bias.get(0, c);
            }
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect()
}

/// (micro F1, macro F1) for single-label multiclass predictions. Micro F1
/// over all instances equals accuracy; macro averages per-class F1 with
/// undefined classes scored 0.
pub fn micro_macro_f1(pred: &[usize], truth: &[usize], classes: usize) -> (f64, f64) {
    assert_eq!(pred.len(), truth.len());
    let n = truth.len();
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    let micro = correct as f64 / n.max(1) as f64;
    let mut macro_sum = 0.0;
    for c in 0..classes {
        let tp = pred
            .iter()
            .zip(truth)
            .filter(|&(&p, &t)| p == c && t == c)
            .count() as f64;
        let fp = pred
            .iter()
            .zip(truth)
            .filter(|&(&p, &t)| p == c && t != c)
            .count() as f64;
        let fal_n = pred
            .iter()
            .zip(truth)
            .filter(|&(&p, &t)| p != c && t == c)
            .count() as f64;
        let f1 = if 2.0 * tp + fp + fal_n > 0.0 {
            2.0 * tp / (2.0 * tp + fp + fal_n)
        } else {
            0.0
        };
        macro_sum += f1;
    }
    (micro, macro_sum / classes.max(1) as f64)
}

/// Ridge regression with intercept, solved in closed form. Returns d + 1
/// coefficients, intercept last.
pub fn ridge_fit(x: &Tensor, y: &[f64], lambda: f64) -> Vec<f64> {
    assert_eq!(x.rows(), y.len());
    let d = x.cols() + 1;
    // Normal equations over the augmented design matrix [x | 1].
    let mut a = vec![vec![0.0; d + 1]; d]; // last column holds A^T y
    for r in 0..x.rows() {
        let mut row = Vec::with_capacity(d);
        row.extend_from_slice(x.row(r));
        row.push(1.0);
        for i in 0..d {
            for j in 0..d {
                a[i][j] += row[i] * row[j];
            }
            a[i][d] += row[i] * y[r];
        }
    }
    for (i, row) in a.iter_mut().enumerate().take(d) {
        row[i] += lambda;
    }
    gaussian_solve(&mut a)
}

fn gaussian_solve(a: &mut [Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        let diag = a[col][col];
        assert!(diag.abs() > 1e-12, "singular system");
        for j in col..=n {
            a[col][j] /= diag;
        }
        for i in 0..n {
            if i != col && a[i][col] != 0.0 {
                let factor = a[i][col];
                for j in col..=n {
                    a[i][j] -= factor * a[col][j];
                }
            }
        }
    }
    (0..n).map(|i| a[i][n]).collect()
}

pub fn ridge_predict(coef: &[f64], x: &Tensor) -> Vec<f64> {
    (0..x.rows())
        .map(|r| {
            let row = x.row(r);
            row.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>() + coef[x.cols()]
        })
        .collect()
}

/// Inverse standard normal CDF (Acklam's rational approximation, relative
/// error below 1.2e-9).
pub fn probit(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probit domain (0, 1), got {p}");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    let p_high = 1.0 - p_low;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= p_high {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Rank-based inverse normal transform (Blom offsets, ties get their average
/// rank) together with the monotone map back to the original scale.
pub struct NormalTransform {
    /// Ascending (score, original value) knots; ties collapse to one knot.
    knots: Vec<(f64, f64)>,
}

impl NormalTransform {
    pub fn fit(y: &[f64]) -> (Self, Vec<f64>) {
        let n = y.len();
        assert!(n > 0);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| y[i].partial_cmp(&y[j]).unwrap());
        let mut scores = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && y[order[j + 1]] == y[order[i]] {
                j += 1;
            }
            // Average 1-based rank of the tie run [i, j].
            let avg_rank = (i + j) as f64 / 2.0 + 1.0;
            let z = probit((avg_rank - 0.375) / (n as f64 + 0.25));
            for &idx in &order[i..=j] {
                scores[idx] = z;
            }
            i = j + 1;
        }
        let mut knots: Vec<(f64, f64)> = Vec::new();
        for &idx in &order {
            let pair = (scores[idx], y[idx]);
            if knots.last() != Some(&pair) {
                knots.push(pair);
            }
        }
        (NormalTransform { knots }, scores)
    }

    /// Piecewise-linear inverse of the empirical quantile map, clamped at the
    /// ends. Exact at every training label.
    pub fn inverse(&self, z: f64) -> f64 {
        let k = &self.knots;
        if z <= k[0].0 {
            return k[0].1;
        }
        if z >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let pos = k.partition_point(|&(s, _)| s < z);
        let (z0, y0) = k[pos - 1];
        let (z1, y1) = k[pos];
        if z1 == z0 {
            return y0;
        }
        y0 + (y1 - y0) * (z - z0) / (z1 - z0)
    }
}

/// Two-hidden-layer ReLU regressor trained with full-batch Adam on mean
/// squared error over normalized targets.
pub struct MlpRegressor {
    l1: Linear<Tensor>,
    l2: Linear<Tensor>,
    l3: Linear<Tensor>,
}

impl MlpRegressor {
    pub fn predict(&self, x: &Tensor) -> Vec<f64> {
        let h1 = affine(x, &self.l1).map(|v| v.max(0.0));
        let h2 = affine(&h1, &self.l2).map(|v| v.max(0.0));
        let out = affine(&h2, &self.l3);
        (0..out.rows()).map(|r| out.get(r, 0)).collect()
    }
}

fn affine(x: &Tensor, l: &Linear<Tensor>) -> Tensor {
    let mut out = x.matmul_transb(&l.weight);
    for r in 0..out.rows() {
        for c in 0..out.cols() {
            let v = out.get(r, c) + l.bias.get(0, c);
            out.set(r, c, v);
        }
    }
    out
}

pub fn train_mlp_regressor(
    x: &Tensor,
    y: &[f64],
    hidden: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> MlpRegressor {
    assert_eq!(x.rows(), y.len());
    let n = x.rows();
    let d = x.cols();
    let mut rng = Rng::seed_stream(seed, 0x6d6c70);
    let bound = |inw: usize| 1.0 / (inw as f64).sqrt();
    let mut params = vec![
        Tensor::uniform(hidden, d, bound(d), &mut rng),
        Tensor::zeros(1, hidden),
        Tensor::uniform(hidden, hidden, bound(hidden), &mut rng),
        Tensor::zeros(1, hidden),
        Tensor::uniform(1, hidden, bound(hidden), &mut rng),
        Tensor::zeros(1, 1),
    ];
    let mut m: Vec<Tensor> = params.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
    let mut v = m.clone();
    let targets = Tensor::from_vec(n, 1, y.to_vec());
    for t in 1..=epochs {
        let mut tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let xv = tape.leaf(x.clone());
        let yv = tape.leaf(targets.clone());
        let lin = |tape: &mut Tape, x, w, b| {
            let h = tape.matmul_transb(x, w);
            tape.add_row_broadcast(h, b)
        };
        let h1 = lin(&mut tape, xv, vars[0], vars[1]);
        let h1 = tape.relu(h1);
        let h2 = lin(&mut tape, h1, vars[2], vars[3]);
        let h2 = tape.relu(h2);
        let out = lin(&mut tape, h2, vars[4], vars[5]);
        let err = tape.sub(out, yv);
        let sq = tape.mul(err, err);
        let sum = tape.sum_all(sq);
        let loss = tape.scale(sum, 1.0 / n as f64);
        tape.backward(loss);
        let grads: Vec<Tensor> = vars.iter().map(|&w| tape.grad(w)).collect();
        drop(tape);
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let bc1 = 1.0 - f64::powi(b1, t as i32);
        let bc2 = 1.0 - f64::powi(b2, t as i32);
        for i in 0..params.len() {
            let pd = params[i].data_mut();
            let gd = grads[i].data();
            let md = m[i].data_mut();
            let vd = v[i].data_mut();
            for k in 0..pd.len() {
                md[k] = b1 * md[k] + (1.0 - b1) * gd[k];
                vd[k] = b2 * vd[k] + (1.0 - b2) * gd[k] * gd[k];
                pd[k] -= lr * (md[k] / bc1) / ((vd[k] / bc2).sqrt() + eps);
            }
        }
    }
    let mut it = params.into_iter();
    let l1 = Linear {
        weight: it.next().unwrap(),
        bias: it.next().unwrap(),
    };
    let l2 = Linear {
        weight: it.next().unwrap(),
        bias: it.next().unwrap(),
    };
    let l3 = Linear {
        weight: it.next().unwrap(),
        bias: it.next().unwrap(),
    };
    MlpRegressor { l1, l2, l3 }
}

/// Stratified fold ids: indices of each class are shuffled and dealt
/// round-robin, so every fold sees every class whenever counts allow.
pub fn stratified_folds(labels: &[usize], classes: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = Rng::seed_stream(seed, 0xf01d);
    let mut fold_of = vec![0usize; labels.len()];
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        rng.shuffle(&mut members);
        for (k, idx) in members.into_iter().enumerate() {
            fold_of[idx] = k % folds;
        }
    }
    fold_of
}

/// Plain shuffled folds for regression targets.
pub fn shuffled_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = Rng::seed_stream(seed, 0xf01d_2);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut fold_of = vec![0usize; n];
    for (k, idx) in order.into_iter().enumerate() {
        fold_of[idx] = k % folds;
    }
    fold_of
}

pub fn mae_rmse(pred: &[f64], truth: &[f64]) -> (f64, f64) {
    assert_eq!(pred.len(), truth.len());
    let n = pred.len().max(1) as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let e = p - t;
        abs += e.abs();
        sq += e * e;
    }
    (abs / n, (sq / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probit_matches_known_quantiles() {
        assert!(probit(0.5).abs() < 1e-9);
        assert!((probit(0.975) - 1.959964).abs() < 1e-4);
        assert!((probit(0.025) + 1.959964).abs() < 1e-4);
        assert!((probit(0.841344746) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normal_transform_round_trips_training_labels() {
        let y = vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0];
        let (map, scores) = NormalTransform::fit(&y);
        for (i, &yi) in y.iter().enumerate() {
            let back = map.inverse(scores[i]);
            assert!((back - yi).abs() <= 1e-9, "{yi} -> {} -> {back}", scores[i]);
        }
        // Ties share one score.
        assert_eq!(scores[1], scores[3]);
        assert_eq!(scores[4], scores[8]);
    }

    #[test]
    fn separable_probe_reaches_perfect_f1() {
        // One-hot representations of the true label.
        let n = 40;
        let classes = 4;
        let mut x = Tensor::zeros(n, classes);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % classes;
            x.set(i, c, 1.0);
            y.push(c);
        }
        let head = train_softmax_probe(&x, &y, classes, 200, 0.5);
        let pred = probe_predict(&head, &x);
        let (micro, macro_) = micro_macro_f1(&pred, &y, classes);
        assert_eq!(micro, 1.0);
        assert_eq!(macro_, 1.0);
    }

    #[test]
    fn noise_probe_sits_at_chance_level() {
        let mut rng = Rng::seed(3);
        let n = 400;
        let classes = 4;
        let x = Tensor::uniform(n, 8, 1.0, &mut rng);
        let y: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let folds = stratified_folds(&y, classes, 4, 7);
        let mut micro_sum = 0.0;
        for f in 0..4 {
            let train_idx: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let test_idx: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            let xt = x.gather_rows(&train_idx);
            let yt: Vec<usize> = train_idx.iter().map(|&i| y[i]).collect();
            let head = train_softmax_probe(&xt, &yt, classes, 100, 0.3);
            let xs = x.gather_rows(&test_idx);
            let ys: Vec<usize> = test_idx.iter().map(|&i| y[i]).collect();
            let pred = probe_predict(&head, &xs);
            micro_sum += micro_macro_f1(&pred, &ys, classes).0;
        }
        let micro = micro_sum / 4.0;
        assert!((micro - 0.25).abs() < 0.05, "chance-level micro {micro}");
    }

    #[test]
    fn ridge_recovers_linear_map() {
        let mut rng = Rng::seed(5);
        let n = 100;
        let x = Tensor::uniform(n, 3, 1.0, &mut rng);
        let y: Vec<f64> = (0..n)
            .map(|r| 2.0 * x.get(r, 0) - 0.5 * x.get(r, 1) + 3.0)
            .collect();
        let coef = ridge_fit(&x, &y, 1e-9);
        let pred = ridge_predict(&coef, &x);
        let (mae, _) = mae_rmse(&pred, &y);
        assert!(mae < 1e-6, "mae {mae}");
        assert!((coef[0] - 2.0).abs() < 1e-6);
        assert!((coef[3] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn mlp_fits_a_smooth_function() {
        let mut rng = Rng::seed(6);
        let n = 120;
        let x = Tensor::uniform(n, 2, 1.0, &mut rng);
        let y: Vec<f64> = (0..n)
            .map(|r| (x.get(r, 0) * 1.5).tanh() + 0.5 * x.get(r, 1))
            .collect();
        let model = train_mlp_regressor(&x, &y, 16, 400, 0.01, 1);
        let pred = model.predict(&x);
        let (mae, _) = mae_rmse(&pred, &y);
        assert!(mae < 0.08, "mae {mae}");
    }

    #[test]
    fn stratified_folds_cover_every_class() {
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let folds = stratified_folds(&labels, 3, 5, 2);
        for f in 0..5 {
            for c in 0..3 {
                assert!(
                    (0..60).any(|i| folds[i] == f && labels[i] == c),
                    "fold {f} missing class {c}"
                );
            }
        }
    }
}
