//! Hierarchical GPS encoder: an intra-road BiGRU turns each sub-trajectory
//! into one vector, an inter-road BiGRU refines the sequence of segment
//! vectors, and mean pooling yields the trajectory representation.
//!
//! Masked segments never enter the intra stage; the learned mask vector is
//! injected directly at the inter stage, so masked raw points cannot leak
//! into any representation.

use crate::corpus::{
    GPS_COL_ACCEL, GPS_COL_ANGLE_DELTA, GPS_COL_DISTANCE, GPS_COL_LAT, GPS_COL_LNG, GPS_COL_SPEED,
    GPS_COL_TIME_DELTA, GPS_FEATURES,
};
use crate::error::{Error, Result};
use crate::geo::{ANCHOR_LAT, ANCHOR_LNG};
use crate::model::layers::gru_sequence;
use crate::model::{GpsEncoderParams, TrainingConfig};
use crate::model::ViewOutput;
use crate::objectives::MaskSpec;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Fixed affine scaling of the raw feature columns so GRU inputs sit near
/// unit scale. Centers coordinates on the tangent-plane anchor.
pub fn normalize_gps_rows(x: &Tensor) -> Tensor {
    assert_eq!(x.cols(), GPS_FEATURES);
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        row[GPS_COL_LNG] = (row[GPS_COL_LNG] - ANCHOR_LNG) * 50.0;
        row[GPS_COL_LAT] = (row[GPS_COL_LAT] - ANCHOR_LAT) * 50.0;
        row[GPS_COL_SPEED] /= 10.0;
        row[GPS_COL_ACCEL] /= 2.0;
        row[GPS_COL_ANGLE_DELTA] /= 90.0;
        row[GPS_COL_TIME_DELTA] /= 30.0;
        row[GPS_COL_DISTANCE] /= 150.0;
    }
    out
}

/// Encode one sub-trajectory (l x 7 raw features) into a single vector: the
/// forward terminal state of the intra BiGRU, or both terminal states
/// concatenated when `intra_concat_directions` is set.
pub fn encode_subtrajectory(
    tape: &mut Tape,
    params: &GpsEncoderParams<Var>,
    config: &TrainingConfig,
    raw: &Tensor,
) -> Result<Var> {
    if raw.rows() == 0 {
        return Err(Error::InvalidArgument("empty sub-trajectory".to_string()));
    }
    if raw.cols() != GPS_FEATURES {
        return Err(Error::InvalidArgument(format!(
            "expected {GPS_FEATURES} feature columns, got {}",
            raw.cols()
        )));
    }
    if !raw.is_finite() {
        return Err(Error::InvalidArgument(
            "non-finite GPS feature input".to_string(),
        ));
    }
    let normalized = normalize_gps_rows(raw);
    let l = normalized.rows();
    let block = tape.leaf(normalized);
    let rows: Vec<Var> = (0..l).map(|i| tape.slice_rows(block, i, 1)).collect();
    let fwd_states = gru_sequence(tape, &params.intra.fwd, &rows, config.d_intra);
    let fwd_final = *fwd_states.last().unwrap();
    if config.intra_concat_directions {
        let reversed: Vec<Var> = rows.iter().rev().copied().collect();
        let bwd_states = gru_sequence(tape, &params.intra.bwd, &reversed, config.d_intra);
        Ok(tape.concat_cols(&[fwd_final, *bwd_states.last().unwrap()]))
    } else {
        Ok(fwd_final)
    }
}

/// Encode a whole GPS view from its grouped sub-trajectories.
pub fn encode_gps(
    tape: &mut Tape,
    params: &GpsEncoderParams<Var>,
    config: &TrainingConfig,
    groups: &[(usize, Tensor)],
    mask: &MaskSpec,
) -> Result<ViewOutput> {
    let inter_inputs = inter_stage_inputs(tape, params, config, groups, mask)?;
    let m = inter_inputs.len();
    let fwd = gru_sequence(tape, &params.inter.fwd, &inter_inputs, config.d_inter);
    let reversed: Vec<Var> = inter_inputs.iter().rev().copied().collect();
    let bwd = gru_sequence(tape, &params.inter.bwd, &reversed, config.d_inter);
    let seg_rows: Vec<Var> = (0..m)
        .map(|j| tape.concat_cols(&[fwd[j], bwd[m - 1 - j]]))
        .collect();
    let segment_reps = tape.concat_rows(&seg_rows);
    let trajectory_rep = tape.mean_rows(segment_reps);
    Ok(ViewOutput {
        segment_reps,
        trajectory_rep,
    })
}

/// Diagnostic variant with the inter-road stage replaced by identity: segment
/// representation j is exactly the j-th inter-stage input. Exposes the
/// locality of the hierarchical design for tests.
#[doc(hidden)]
pub fn encode_gps_inter_identity(
    tape: &mut Tape,
    params: &GpsEncoderParams<Var>,
    config: &TrainingConfig,
    groups: &[(usize, Tensor)],
    mask: &MaskSpec,
) -> Result<ViewOutput> {
    let inter_inputs = inter_stage_inputs(tape, params, config, groups, mask)?;
    let segment_reps = tape.concat_rows(&inter_inputs);
    let trajectory_rep = tape.mean_rows(segment_reps);
    Ok(ViewOutput {
        segment_reps,
        trajectory_rep,
    })
}

fn inter_stage_inputs(
    tape: &mut Tape,
    params: &GpsEncoderParams<Var>,
    config: &TrainingConfig,
    groups: &[(usize, Tensor)],
    mask: &MaskSpec,
) -> Result<Vec<Var>> {
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no sub-trajectories".to_string()));
    }
    let mut inputs = Vec::with_capacity(groups.len());
    for (j, (_road_id, sub)) in groups.iter().enumerate() {
        if mask.is_masked(j) {
            // Masked sub-trajectories bypass the intra stage entirely.
            inputs.push(params.mask_vector);
        } else {
            inputs.push(encode_subtrajectory(tape, params, config, sub)?);
        }
    }
    Ok(inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{zero_gru, BiGru, ModelParams, ModelState};
    use crate::rng::Rng;

    fn micro_config() -> TrainingConfig {
        TrainingConfig {
            d_model: 8,
            d_intra: 4,
            d_inter: 4,
            d_emb: 8,
            d_rep: 8,
            d_proj: 4,
            l1_layers: 1,
            l2_layers: 1,
            heads: 2,
            batch_size: 2,
            max_route_len: 16,
            ..TrainingConfig::default()
        }
    }

    fn micro_params(seed: u64) -> ModelParams<Tensor> {
        let mut cfg = micro_config();
        cfg.seed = seed;
        ModelState::init(cfg, 12).unwrap().params
    }

    /// Feature rows in plausible physical ranges so the input normalizer
    /// lands near unit scale.
    fn plausible_rows(l: usize, rng: &mut Rng) -> Tensor {
        let mut t = Tensor::zeros(l, GPS_FEATURES);
        for r in 0..l {
            t.set(r, GPS_COL_LNG, ANCHOR_LNG + rng.uniform_in(-0.02, 0.02));
            t.set(r, GPS_COL_LAT, ANCHOR_LAT + rng.uniform_in(-0.02, 0.02));
            t.set(r, GPS_COL_SPEED, rng.uniform_in(0.0, 16.0));
            t.set(r, GPS_COL_ACCEL, rng.uniform_in(-2.0, 2.0));
            t.set(r, GPS_COL_ANGLE_DELTA, rng.uniform_in(-180.0, 180.0));
            t.set(r, GPS_COL_TIME_DELTA, rng.uniform_in(1.0, 30.0));
            t.set(r, GPS_COL_DISTANCE, rng.uniform_in(0.0, 300.0));
        }
        t
    }

    fn random_groups(m: usize, rng: &mut Rng) -> Vec<(usize, Tensor)> {
        (0..m)
            .map(|j| {
                let l = 1 + rng.index(4);
                (j, plausible_rows(l, rng))
            })
            .collect()
    }

    #[test]
    fn single_point_subtrajectory_is_valid() {
        let cfg = micro_config();
        let params = micro_params(1);
        let mut tape = Tape::new();
        let vars = params.gps.map(&mut |t| tape.leaf(t.clone()));
        let x = plausible_rows(1, &mut Rng::seed(2));
        let out = encode_subtrajectory(&mut tape, &vars, &cfg, &x).unwrap();
        assert_eq!(tape.value(out).shape(), (1, cfg.d_intra));
        assert!(tape.value(out).is_finite());
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let cfg = micro_config();
        let zero = GpsEncoderParams {
            intra: BiGru {
                fwd: zero_gru(GPS_FEATURES, cfg.d_intra),
                bwd: zero_gru(GPS_FEATURES, cfg.d_intra),
            },
            inter: BiGru {
                fwd: zero_gru(cfg.d_intra, cfg.d_inter),
                bwd: zero_gru(cfg.d_intra, cfg.d_inter),
            },
            mask_vector: Tensor::zeros(1, cfg.d_intra),
        };
        let mut tape = Tape::new();
        let vars = zero.map(&mut |t| tape.leaf(t.clone()));
        let x = plausible_rows(3, &mut Rng::seed(3));
        let out = encode_subtrajectory(&mut tape, &vars, &cfg, &x).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn row_order_changes_subtrajectory_encoding() {
        let cfg = micro_config();
        let params = micro_params(4);
        let x = plausible_rows(4, &mut Rng::seed(5));
        let mut reversed_data = Vec::new();
        for r in (0..4).rev() {
            reversed_data.extend_from_slice(x.row(r));
        }
        let rev = Tensor::from_vec(4, GPS_FEATURES, reversed_data);

        let mut tape = Tape::new();
        let vars = params.gps.map(&mut |t| tape.leaf(t.clone()));
        let a = encode_subtrajectory(&mut tape, &vars, &cfg, &x).unwrap();
        let b = encode_subtrajectory(&mut tape, &vars, &cfg, &rev).unwrap();
        let diff = tape
            .value(a)
            .data()
            .iter()
            .zip(tape.value(b).data())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-8);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let cfg = micro_config();
        let params = micro_params(6);
        let mut tape = Tape::new();
        let vars = params.gps.map(&mut |t| tape.leaf(t.clone()));
        let mut x = Tensor::zeros(2, GPS_FEATURES);
        x.set(1, 3, f64::NAN);
        assert!(matches!(
            encode_subtrajectory(&mut tape, &vars, &cfg, &x),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn view_shapes_and_pooling() {
        let cfg = micro_config();
        let params = micro_params(7);
        let mut rng = Rng::seed(8);
        let groups = random_groups(5, &mut rng);
        let mut tape = Tape::new();
        let vars = params.gps.map(&mut |t| tape.leaf(t.clone()));
        let out = encode_gps(&mut tape, &vars, &cfg, &groups, &MaskSpec::empty(5)).unwrap();
        assert_eq!(tape.value(out.segment_reps).shape(), (5, 2 * cfg.d_inter));
        assert_eq!(tape.value(out.trajectory_rep).shape(), (1, cfg.d_model));
        // Pooled vector is the exact row mean.
        let mean = tape.value(out.segment_reps).mean_rows();
        for c in 0..cfg.d_model {
            assert!((mean.get(0, c) - tape.value(out.trajectory_rep).get(0, c)).abs() <= 1e-6);
        }
    }

    #[test]
    fn single_segment_trajectory_pools_to_itself() {
        let cfg = micro_config();
        let params = micro_params(9);
        let mut rng = Rng::seed(10);
        let groups = random_groups(1, &mut rng);
        let mut tape = Tape::new();
        let vars = params.gps.map(&mut |t| tape.leaf(t.clone()));
        let out = encode_gps(&mut tape, &vars, &cfg, &groups, &MaskSpec::empty(1)).unwrap();
        for c in 0..cfg.d_model {
            assert_eq!(
                tape.value(out.trajectory_rep).get(0, c),
                tape.value(out.segment_reps).get(0, c)
            );
        }
    }

    #[test]
    fn segment_order_matters_for_inter_stage() {
        let cfg = micro_config();
        let params = micro_params(11);
        let mut rng = Rng::seed(12);
        let groups = random_groups(4, &mut rng);
        let mut permuted = groups.clone();
        permuted.swap(0, 3);
        let mut tape = Tape::new();
        let vars = params.gps.map(&mut |t| tape.leaf(t.clone()));
        let a = encode_gps(&mut tape, &vars, &cfg, &groups, &MaskSpec::empty(4)).unwrap();
        let b = encode_gps(&mut tape, &vars, &cfg, &permuted, &MaskSpec::empty(4)).unwrap();
        let diff = tape
            .value(a.segment_reps)
            .data()
            .iter()
            .zip(tape.value(b.segment_reps).data())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-8);
    }

    #[test]
    fn masked_segments_ignore_their_raw_points() {
        let cfg = micro_config();
        let params = micro_params(13);
        let mut rng = Rng::seed(14);
        let groups = random_groups(5, &mut rng);
        let mask = crate::objectives::sample_shared_mask(5, 2, 0.5, 99).unwrap();
        assert!(!mask.is_empty());
        let mut garbled = groups.clone();
        for (j, (_id, sub)) in garbled.iter_mut().enumerate() {
            if mask.is_masked(j) {
                *sub = Tensor::full(sub.rows(), GPS_FEATURES, 123.456);
            }
        }
        let run = |groups: &[(usize, Tensor)]| -> (Tensor, Tensor) {
            let mut tape = Tape::new();
            let vars = params.gps.map(&mut |t| tape.leaf(t.clone()));
            let out = encode_gps(&mut tape, &vars, &cfg, groups, &mask).unwrap();
            (
                tape.value(out.segment_reps).clone(),
                tape.value(out.trajectory_rep).clone(),
            )
        };
        let (a_seg, a_traj) = run(&groups);
        let (b_seg, b_traj) = run(&garbled);
        assert_eq!(a_seg, b_seg, "masked raw points must not leak");
        assert_eq!(a_traj, b_traj);
    }

    #[test]
    fn identity_inter_hook_is_local() {
        let cfg = micro_config();
        let params = micro_params(15);
        let mut rng = Rng::seed(16);
        let groups = random_groups(4, &mut rng);
        let mut bumped = groups.clone();
        // Perturb segment 2 only.
        bumped[2].1 = plausible_rows(bumped[2].1.rows(), &mut rng);
        let run = |groups: &[(usize, Tensor)]| -> Tensor {
            let mut tape = Tape::new();
            let vars = params.gps.map(&mut |t| tape.leaf(t.clone()));
            let out =
                encode_gps_inter_identity(&mut tape, &vars, &cfg, groups, &MaskSpec::empty(4))
                    .unwrap();
            tape.value(out.segment_reps).clone()
        };
        let a = run(&groups);
        let b = run(&bumped);
        for j in 0..4 {
            let row_diff: f64 = a
                .row(j)
                .iter()
                .zip(b.row(j))
                .map(|(p, q)| (p - q).abs())
                .sum();
            if j == 2 {
                assert!(row_diff > 1e-9, "perturbed segment must change");
            } else {
                assert_eq!(row_diff, 0.0, "segment {j} must be untouched");
            }
        }
    }
}
