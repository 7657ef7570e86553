//! Spatio-temporal route encoder: graph-attention refresh of road embeddings,
//! discrete minute/weekday embeddings, soft-bucket travel-time embeddings,
//! additive fusion and a positional-encoding-free transformer stack.

use std::rc::Rc;

use crate::corpus::{
    RouteFeatureMatrix, ROUTE_COL_MINUTE, ROUTE_COL_ROAD_ID, ROUTE_COL_TIME_DELTA,
    ROUTE_COL_WEEKDAY,
};
use crate::error::{Error, Result};
use crate::model::layers::{linear, transformer_encode};
use crate::model::{RouteEncoderParams, TrainingConfig, ViewOutput, INTERVAL_NORM_S};
use crate::network::RoadNetwork;
use crate::objectives::MaskSpec;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Negative slope of the attention logits' LeakyReLU.
pub const GAT_LEAKY_SLOPE: f64 = 0.2;

/// Refresh the first |V| road embeddings with one graph-attention layer over
/// in-neighbors plus a self edge. The mask-token row is not part of the graph
/// and passes through untouched (it is read from the raw table). With
/// `use_gat` off the raw embeddings are returned as-is.
pub fn gat_update(
    tape: &mut Tape,
    params: &RouteEncoderParams<Var>,
    net: &RoadNetwork,
    use_gat: bool,
) -> Var {
    gat_update_with(
        tape,
        params,
        Rc::new(net.attention_neighborhoods()),
        use_gat,
    )
}

/// Same as [`gat_update`] with precomputed neighborhoods, so a training step
/// can reuse one immutable snapshot across the whole batch.
pub fn gat_update_with(
    tape: &mut Tape,
    params: &RouteEncoderParams<Var>,
    neighborhoods: Rc<Vec<Vec<usize>>>,
    use_gat: bool,
) -> Var {
    let vocab = neighborhoods.len();
    let real_rows = tape.slice_rows(params.road_embedding, 0, vocab);
    if !use_gat {
        return real_rows;
    }
    let transformed = tape.matmul_transb(real_rows, params.gat_weight);
    let score_src = tape.matmul(transformed, params.gat_attn_src);
    let score_dst = tape.matmul(transformed, params.gat_attn_dst);
    tape.gat_aggregate(
        transformed,
        score_src,
        score_dst,
        neighborhoods,
        GAT_LEAKY_SLOPE,
    )
}

/// Soft-bucket embedding of a travel-time delta: the normalized delta is
/// mapped to bucket weights by a feed-forward layer and softmax, and the
/// result is the weighted mix of bucket rows (a convex combination).
pub fn embed_interval(
    tape: &mut Tape,
    params: &RouteEncoderParams<Var>,
    delta_s: f64,
) -> Result<Var> {
    if !delta_s.is_finite() || delta_s < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "travel-time delta must be finite and nonnegative, got {delta_s}"
        )));
    }
    let x = tape.leaf(Tensor::from_vec(1, 1, vec![delta_s / INTERVAL_NORM_S]));
    let logits = linear(tape, &params.interval_net, x);
    let weights = tape.softmax_rows(logits);
    Ok(tape.matmul(weights, params.interval_buckets))
}

/// Assemble the pre-transformer row for every route record. Masked positions
/// read the mask-token embedding and keep the contextual time signal but drop
/// the travel-time interval; with `time_info` off all temporal embeddings are
/// dropped for every row.
fn assemble_rows(
    tape: &mut Tape,
    params: &RouteEncoderParams<Var>,
    re_prime: Var,
    features: &RouteFeatureMatrix,
    mask: &MaskSpec,
    time_info: bool,
) -> Result<Vec<Var>> {
    let m = features.values.rows();
    if m == 0 {
        return Err(Error::InvalidArgument("empty route features".to_string()));
    }
    let vocab = tape.value(re_prime).rows();
    let mask_row = vocab; // last row of the raw table
    let (te_min, te_week) = if time_info {
        let minute = features.values.get(0, ROUTE_COL_MINUTE) as usize;
        let weekday = features.values.get(0, ROUTE_COL_WEEKDAY) as usize;
        if minute >= 1440 || weekday >= 7 {
            return Err(Error::InvalidArgument(format!(
                "calendar indices out of range: minute {minute}, weekday {weekday}"
            )));
        }
        (
            Some(tape.gather_rows(params.minute_embedding, &[minute])),
            Some(tape.gather_rows(params.weekday_embedding, &[weekday])),
        )
    } else {
        (None, None)
    };

    let mut rows = Vec::with_capacity(m);
    for j in 0..m {
        let mut h = if mask.is_masked(j) {
            tape.gather_rows(params.road_embedding, &[mask_row])
        } else {
            let road = features.values.get(j, ROUTE_COL_ROAD_ID) as usize;
            if road >= vocab {
                return Err(Error::NotFound(road));
            }
            tape.gather_rows(re_prime, &[road])
        };
        if let (Some(tm), Some(tw)) = (&te_min, &te_week) {
            h = tape.add(h, *tm);
            h = tape.add(h, *tw);
        }
        if time_info && !mask.is_masked(j) {
            let delta = features.values.get(j, ROUTE_COL_TIME_DELTA);
            let ie = embed_interval(tape, params, delta)?;
            h = tape.add(h, ie);
        }
        rows.push(h);
    }
    Ok(rows)
}

/// Encode a route view. `re_prime` comes from [`gat_update`]; the transformer
/// adds no positional encoding (ordering information lives in the time
/// embeddings alone).
pub fn encode_route(
    tape: &mut Tape,
    params: &RouteEncoderParams<Var>,
    config: &TrainingConfig,
    re_prime: Var,
    features: &RouteFeatureMatrix,
    mask: &MaskSpec,
    time_info: bool,
) -> Result<ViewOutput> {
    let rows = assemble_rows(tape, params, re_prime, features, mask, time_info)?;
    let stacked = tape.concat_rows(&rows);
    let projected = linear(tape, &params.pre_ffn, stacked);
    let segment_reps = transformer_encode(tape, &params.transformer, projected, config.heads);
    let trajectory_rep = tape.mean_rows(segment_reps);
    Ok(ViewOutput {
        segment_reps,
        trajectory_rep,
    })
}
