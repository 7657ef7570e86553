//! Self-supervised objectives: shared span masking, masked-segment recovery
//! losses for both views, and the cross-modal match loss with hardest
//! in-batch negatives.

use crate::error::{Error, Result};
use crate::model::layers::linear;
use crate::model::{MlmDenominator, SslHeads};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::cosine_similarity;

/// The set of masked segment positions shared by both views of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    masked: Vec<usize>,
    is_masked: Vec<bool>,
    pub span_length: usize,
    pub span_rate: f64,
}

impl MaskSpec {
    pub fn empty(m: usize) -> Self {
        MaskSpec {
            masked: Vec::new(),
            is_masked: vec![false; m],
            span_length: 0,
            span_rate: 0.0,
        }
    }

    fn from_flags(is_masked: Vec<bool>, span_length: usize, span_rate: f64) -> Self {
        let masked = is_masked
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect();
        MaskSpec {
            masked,
            is_masked,
            span_length,
            span_rate,
        }
    }

    /// Sorted masked positions.
    pub fn masked_positions(&self) -> &[usize] {
        &self.masked
    }

    pub fn is_masked(&self, j: usize) -> bool {
        self.is_masked.get(j).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.is_masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }
}

/// Raw span draw: spans start at 0, l, 2l, ...; each is masked with
/// probability p and covers [start, min(start + l, m)).
fn draw_spans(m: usize, l: usize, p: f64, rng: &mut Rng) -> Vec<bool> {
    let mut flags = vec![false; m];
    let mut start = 0;
    while start < m {
        if rng.bernoulli(p) {
            for f in flags.iter_mut().take((start + l).min(m)).skip(start) {
                *f = true;
            }
        }
        start += l;
    }
    flags
}

/// Sample the shared mask for a sequence of `m` segments.
///
/// Two guarantees are applied after the raw draw, in order: if every position
/// came out masked the final span is unmasked, and if nothing came out masked
/// one span (uniformly chosen) is force-masked so training always has a
/// target. When the sequence is a single span the force-mask wins and no
/// unmasked position remains; callers keep `m > l` for trainable data.
pub fn sample_shared_mask(m: usize, l: usize, p: f64, seed: u64) -> Result<MaskSpec> {
    let mut rng = Rng::seed(seed);
    sample_shared_mask_with(m, l, p, &mut rng)
}

pub fn sample_shared_mask_with(m: usize, l: usize, p: f64, rng: &mut Rng) -> Result<MaskSpec> {
    if l < 2 {
        return Err(Error::InvalidArgument(format!(
            "span length must be >= 2, got {l}"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("empty sequence".to_string()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("span rate {p} outside [0, 1]")));
    }
    let mut flags = draw_spans(m, l, p, rng);
    let span_starts: Vec<usize> = (0..m).step_by(l).collect();
    if flags.iter().all(|&f| f) {
        let last = *span_starts.last().unwrap();
        for f in flags.iter_mut().take((last + l).min(m)).skip(last) {
            *f = false;
        }
    }
    if flags.iter().all(|&f| !f) {
        let pick = span_starts[rng.index(span_starts.len())];
        for f in flags.iter_mut().take((pick + l).min(m)).skip(pick) {
            *f = true;
        }
    }
    Ok(MaskSpec::from_flags(flags, l, p))
}

/// Masked-segment recovery loss for one trajectory and one view: mean
/// cross-entropy over the masked positions of `tokens` (m x d).
pub fn mlm_loss_for_trajectory(
    tape: &mut Tape,
    cls_head: &crate::model::Linear<Var>,
    tokens: Var,
    mask: &MaskSpec,
    true_road_ids: &[usize],
    denominator: MlmDenominator,
) -> Result<Var> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument(
            "mlm loss needs at least one masked position".to_string(),
        ));
    }
    let m = tape.value(tokens).rows();
    if true_road_ids.len() != m || mask.len() != m {
        return Err(Error::InvalidArgument(format!(
            "tokens ({m}), labels ({}) and mask ({}) must agree",
            true_road_ids.len(),
            mask.len()
        )));
    }
    let positions = mask.masked_positions().to_vec();
    let picked = tape.gather_rows(tokens, &positions);
    let logits = linear(tape, cls_head, picked);
    let losses = match denominator {
        MlmDenominator::Vocab => {
            let targets: Vec<usize> = positions.iter().map(|&j| true_road_ids[j]).collect();
            tape.cross_entropy_rows(logits, &targets)
        }
        MlmDenominator::Trajectory => {
            // Restrict the softmax support to segments of this trajectory.
            let mut support: Vec<usize> = true_road_ids.to_vec();
            support.sort_unstable();
            support.dedup();
            let narrowed = tape.gather_cols(logits, &support);
            let targets: Vec<usize> = positions
                .iter()
                .map(|&j| support.binary_search(&true_road_ids[j]).unwrap())
                .collect();
            tape.cross_entropy_rows(narrowed, &targets)
        }
    };
    let total = tape.sum_all(losses);
    Ok(tape.scale(total, 1.0 / positions.len() as f64))
}

/// Mean of per-trajectory scalars.
pub fn batch_mean(tape: &mut Tape, per_trajectory: &[Var]) -> Var {
    assert!(!per_trajectory.is_empty());
    let stacked = tape.concat_rows(per_trajectory);
    let total = tape.sum_all(stacked);
    tape.scale(total, 1.0 / per_trajectory.len() as f64)
}

/// Index of the hardest in-batch negative for each query: the candidate with
/// the highest cosine similarity, excluding the aligned index.
pub fn hardest_negatives(queries: &[Vec<f64>], candidates: &[Vec<f64>]) -> Vec<usize> {
    assert_eq!(queries.len(), candidates.len());
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut best = usize::MAX;
            let mut best_sim = f64::NEG_INFINITY;
            for (j, c) in candidates.iter().enumerate() {
                if j == i {
                    continue;
                }
                let sim = cosine_similarity(q, c);
                if sim > best_sim {
                    best_sim = sim;
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub struct MatchOutput {
    pub loss: Var,
    /// Sigmoid scores of the aligned pairs.
    pub positive_scores: Vec<f64>,
    /// Sigmoid scores of each query's hardest negative (max of the two
    /// retrieval directions).
    pub hardest_negative_scores: Vec<f64>,
}

/// Cross-modal match loss over a batch of trajectory representations taken
/// straight from the two encoders (before interaction).
pub fn match_loss(
    tape: &mut Tape,
    heads: &SslHeads<Var>,
    gps_reps: &[Var],
    route_reps: &[Var],
) -> Result<MatchOutput> {
    let n = gps_reps.len();
    if n != route_reps.len() {
        return Err(Error::InvalidArgument("batch views differ in size".to_string()));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(
            "match loss needs at least 2 pairs for negatives".to_string(),
        ));
    }
    let gps_proj: Vec<Var> = gps_reps
        .iter()
        .map(|&z| linear(tape, &heads.proj_gps, z))
        .collect();
    let route_proj: Vec<Var> = route_reps
        .iter()
        .map(|&z| linear(tape, &heads.proj_route, z))
        .collect();

    // Negative selection happens on detached values.
    let gps_vals: Vec<Vec<f64>> = gps_proj.iter().map(|&v| tape.value(v).data().to_vec()).collect();
    let route_vals: Vec<Vec<f64>> = route_proj
        .iter()
        .map(|&v| tape.value(v).data().to_vec())
        .collect();
    let neg_route = hardest_negatives(&gps_vals, &route_vals);
    let neg_gps = hardest_negatives(&route_vals, &gps_vals);

    let mut terms = Vec::with_capacity(n);
    let mut positive_scores = Vec::with_capacity(n);
    let mut hardest_negative_scores = Vec::with_capacity(n);
    for i in 0..n {
        let pos_in = tape.concat_cols(&[gps_proj[i], route_proj[i]]);
        let pos_logit = linear(tape, &heads.pair_cls, pos_in);
        let neg_r_in = tape.concat_cols(&[gps_proj[i], route_proj[neg_route[i]]]);
        let neg_r_logit = linear(tape, &heads.pair_cls, neg_r_in);
        let neg_g_in = tape.concat_cols(&[gps_proj[neg_gps[i]], route_proj[i]]);
        let neg_g_logit = linear(tape, &heads.pair_cls, neg_g_in);

        positive_scores.push(sigmoid(tape.value(pos_logit).get(0, 0)));
        hardest_negative_scores.push(
            sigmoid(tape.value(neg_r_logit).get(0, 0)).max(sigmoid(tape.value(neg_g_logit).get(0, 0))),
        );

        let logits = tape.concat_rows(&[pos_logit, neg_r_logit, neg_g_logit]);
        let losses = tape.bce_with_logits(logits, &[1.0, 0.0, 0.0]);
        let sum = tape.sum_all(losses);
        terms.push(tape.scale(sum, 1.0 / 3.0));
    }
    let loss = batch_mean(tape, &terms);
    Ok(MatchOutput {
        loss,
        positive_scores,
        hardest_negative_scores,
    })
}

/// Weighted total of the three task losses.
pub fn total_loss(gmlm: f64, rmlm: f64, match_: f64, weights: (f64, f64, f64)) -> f64 {
    weights.0 * gmlm + weights.1 * rmlm + weights.2 * match_
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
