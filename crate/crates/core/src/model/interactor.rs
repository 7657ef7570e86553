//! Shared transformer fusing the two views' token sequences.
//!
//! Each view contributes its trajectory token followed by its segment tokens;
//! mode embeddings mark the view and a learned position table (restarting per
//! view, trajectory token at position 0) lets attention align segments across
//! views by index. Fusion is the arithmetic mean of the two views' tokens.

use crate::error::{Error, Result};
use crate::model::layers::{linear, transformer_encode};
use crate::model::{InteractorParams, TrainingConfig, ViewOutput};
use crate::tape::{Tape, Var};

pub const MODE_GPS: usize = 0;
pub const MODE_ROUTE: usize = 1;

/// Post-interaction tokens for both views plus their fused means.
pub struct FusedOutput {
    pub gps_trajectory: Var,
    pub gps_segments: Var,
    pub route_trajectory: Var,
    pub route_segments: Var,
    pub fused_trajectory: Var,
    pub fused_segments: Var,
}

/// Run cross-modal interaction over the two encoder outputs. The token
/// sequence is [gps traj, gps segments, route traj, route segments], length
/// 2m + 2. Masked positions participate: their fused tokens carry the
/// recovery signal.
pub fn interact(
    tape: &mut Tape,
    params: &InteractorParams<Var>,
    config: &TrainingConfig,
    gps_view: &ViewOutput,
    route_view: &ViewOutput,
) -> Result<FusedOutput> {
    let m = tape.value(gps_view.segment_reps).rows();
    let m_route = tape.value(route_view.segment_reps).rows();
    if m != m_route {
        return Err(Error::InvalidArgument(format!(
            "view lengths differ: gps {m}, route {m_route}"
        )));
    }
    let d = config.d_model;
    if tape.value(gps_view.segment_reps).cols() != d
        || tape.value(route_view.segment_reps).cols() != d
    {
        return Err(Error::InvalidArgument(
            "view width must equal d_model".to_string(),
        ));
    }
    if m + 1 > tape.value(params.position_embedding).rows() {
        return Err(Error::InvalidArgument(format!(
            "route length {m} exceeds max_route_len {}",
            tape.value(params.position_embedding).rows() - 1
        )));
    }

    let positions: Vec<usize> = (0..=m).collect();
    let pe_block = tape.gather_rows(params.position_embedding, &positions);

    let mut embed_view = |traj: Var, segs: Var, mode: usize| -> Var {
        let tokens = tape.concat_rows(&[traj, segs]);
        let tokens = if config.use_mode_embedding {
            let me = tape.gather_rows(params.mode_embedding, &[mode]);
            tape.add_row_broadcast(tokens, me)
        } else {
            tokens
        };
        tape.add(tokens, pe_block)
    };
    let gps_tokens = embed_view(gps_view.trajectory_rep, gps_view.segment_reps, MODE_GPS);
    let route_tokens = embed_view(route_view.trajectory_rep, route_view.segment_reps, MODE_ROUTE);

    let sequence = tape.concat_rows(&[gps_tokens, route_tokens]);
    debug_assert_eq!(tape.value(sequence).rows(), 2 * m + 2);
    let projected = linear(tape, &params.input_ffn, sequence);
    let encoded = transformer_encode(tape, &params.transformer, projected, config.heads);

    let gps_trajectory = tape.slice_rows(encoded, 0, 1);
    let gps_segments = tape.slice_rows(encoded, 1, m);
    let route_trajectory = tape.slice_rows(encoded, m + 1, 1);
    let route_segments = tape.slice_rows(encoded, m + 2, m);

    let traj_sum = tape.add(gps_trajectory, route_trajectory);
    let fused_trajectory = tape.scale(traj_sum, 0.5);
    let seg_sum = tape.add(gps_segments, route_segments);
    let fused_segments = tape.scale(seg_sum, 0.5);

    Ok(FusedOutput {
        gps_trajectory,
        gps_segments,
        route_trajectory,
        route_segments,
        fused_trajectory,
        fused_segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, ModelState};
    use crate::rng::Rng;
    use crate::tensor::Tensor;

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
        ModelState::init(cfg, 10).unwrap().params
    }

    fn view(tape: &mut Tape, segs: Tensor) -> ViewOutput {
        let segment_reps = tape.leaf(segs);
        let trajectory_rep = tape.mean_rows(segment_reps);
        ViewOutput {
            segment_reps,
            trajectory_rep,
        }
    }

    #[test]
    fn sequence_length_and_shapes() {
        let cfg = micro_config();
        let params = micro_params(1);
        let mut rng = Rng::seed(2);
        let mut tape = Tape::new();
        let vars = params.interactor.map(&mut |t| tape.leaf(t.clone()));
        let g = view(&mut tape, Tensor::uniform(5, 8, 1.0, &mut rng));
        let r = view(&mut tape, Tensor::uniform(5, 8, 1.0, &mut rng));
        let before = tape.len();
        let out = interact(&mut tape, &vars, &cfg, &g, &r).unwrap();
        assert!(tape.len() > before);
        assert_eq!(tape.value(out.gps_segments).shape(), (5, 8));
        assert_eq!(tape.value(out.route_segments).shape(), (5, 8));
        assert_eq!(tape.value(out.fused_segments).shape(), (5, 8));
        assert_eq!(tape.value(out.fused_trajectory).shape(), (1, 8));
    }

    #[test]
    fn mismatched_views_are_rejected() {
        let cfg = micro_config();
        let params = micro_params(3);
        let mut rng = Rng::seed(4);
        let mut tape = Tape::new();
        let vars = params.interactor.map(&mut |t| tape.leaf(t.clone()));
        let g = view(&mut tape, Tensor::uniform(5, 8, 1.0, &mut rng));
        let r = view(&mut tape, Tensor::uniform(4, 8, 1.0, &mut rng));
        assert!(matches!(
            interact(&mut tape, &vars, &cfg, &g, &r),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn fusion_is_the_exact_mean() {
        let cfg = micro_config();
        let params = micro_params(5);
        let mut rng = Rng::seed(6);
        let mut tape = Tape::new();
        let vars = params.interactor.map(&mut |t| tape.leaf(t.clone()));
        let g = view(&mut tape, Tensor::uniform(4, 8, 1.0, &mut rng));
        let r = view(&mut tape, Tensor::uniform(4, 8, 1.0, &mut rng));
        let out = interact(&mut tape, &vars, &cfg, &g, &r).unwrap();
        let gs = tape.value(out.gps_segments).clone();
        let rs = tape.value(out.route_segments).clone();
        let fused = tape.value(out.fused_segments).clone();
        for j in 0..4 {
            for c in 0..8 {
                let mean = (gs.get(j, c) + rs.get(j, c)) / 2.0;
                assert!((fused.get(j, c) - mean).abs() <= 1e-6);
            }
        }
        let gt = tape.value(out.gps_trajectory).clone();
        let rt = tape.value(out.route_trajectory).clone();
        let ft = tape.value(out.fused_trajectory).clone();
        for c in 0..8 {
            assert!((ft.get(0, c) - (gt.get(0, c) + rt.get(0, c)) / 2.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn identical_views_with_bypass_reduce_to_input_ffn() {
        // L2 = 0 and identical mode rows: fused tokens equal either view's
        // tokens after the input projection.
        let mut cfg = micro_config();
        cfg.l2_layers = 0;
        let mut init_cfg = cfg.clone();
        init_cfg.seed = 7;
        let mut params = ModelState::init(init_cfg, 10).unwrap().params;
        let row: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        let mut me = Tensor::zeros(2, 8);
        for c in 0..8 {
            me.set(0, c, row[c]);
            me.set(1, c, row[c]);
        }
        params.interactor.mode_embedding = me;
        let mut rng = Rng::seed(8);
        let segs = Tensor::uniform(3, 8, 1.0, &mut rng);
        let mut tape = Tape::new();
        let vars = params.interactor.map(&mut |t| tape.leaf(t.clone()));
        let g = view(&mut tape, segs.clone());
        let r = view(&mut tape, segs.clone());
        let out = interact(&mut tape, &vars, &cfg, &g, &r).unwrap();
        let fused = tape.value(out.fused_segments).clone();
        let gps = tape.value(out.gps_segments).clone();
        for j in 0..3 {
            for c in 0..8 {
                assert!((fused.get(j, c) - gps.get(j, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swapping_views_and_mode_rows_leaves_fusion_invariant() {
        let cfg = micro_config();
        let params = micro_params(9);
        let mut rng = Rng::seed(10);
        let ga = Tensor::uniform(4, 8, 1.0, &mut rng);
        let rb = Tensor::uniform(4, 8, 1.0, &mut rng);

        let run = |params: &ModelParams<Tensor>, gps: &Tensor, route: &Tensor| -> (Tensor, Tensor) {
            let mut tape = Tape::new();
            let vars = params.interactor.map(&mut |t| tape.leaf(t.clone()));
            let g = view(&mut tape, gps.clone());
            let r = view(&mut tape, route.clone());
            let out = interact(&mut tape, &vars, &cfg, &g, &r).unwrap();
            (
                tape.value(out.fused_segments).clone(),
                tape.value(out.fused_trajectory).clone(),
            )
        };
        let (base_seg, base_traj) = run(&params, &ga, &rb);

        let mut swapped = params.clone();
        let me = &params.interactor.mode_embedding;
        let mut swapped_me = Tensor::zeros(2, 8);
        for c in 0..8 {
            swapped_me.set(0, c, me.get(1, c));
            swapped_me.set(1, c, me.get(0, c));
        }
        swapped.interactor.mode_embedding = swapped_me;
        let (swap_seg, swap_traj) = run(&swapped, &rb, &ga);

        for j in 0..4 {
            for c in 0..8 {
                assert!(
                    (base_seg.get(j, c) - swap_seg.get(j, c)).abs() <= 1e-5,
                    "segment {j} col {c}"
                );
            }
        }
        for c in 0..8 {
            assert!((base_traj.get(0, c) - swap_traj.get(0, c)).abs() <= 1e-5);
        }
    }

    #[test]
    fn cross_modal_influence_flows_between_views() {
        let cfg = micro_config();
        let params = micro_params(11);
        let mut rng = Rng::seed(12);
        let gps = Tensor::uniform(4, 8, 1.0, &mut rng);
        let route = Tensor::uniform(4, 8, 1.0, &mut rng);
        let mut route_bumped = route.clone();
        for c in 0..8 {
            route_bumped.set(2, c, route.get(2, c) + 0.5);
        }
        let run = |route: &Tensor| -> Tensor {
            let mut tape = Tape::new();
            let vars = params.interactor.map(&mut |t| tape.leaf(t.clone()));
            let g = view(&mut tape, gps.clone());
            let r = view(&mut tape, route.clone());
            let out = interact(&mut tape, &vars, &cfg, &g, &r).unwrap();
            tape.value(out.gps_segments).clone()
        };
        let a = run(&route);
        let b = run(&route_bumped);
        let diff: f64 = a
            .row(2)
            .iter()
            .zip(b.row(2))
            .map(|(p, q)| (p - q).abs())
            .sum();
        assert!(diff > 1e-8, "route perturbation must reach the GPS tokens");
    }

    #[test]
    fn overlong_routes_are_rejected() {
        let cfg = micro_config();
        let params = micro_params(13);
        let mut rng = Rng::seed(14);
        let mut tape = Tape::new();
        let vars = params.interactor.map(&mut |t| tape.leaf(t.clone()));
        let g = view(&mut tape, Tensor::uniform(17, 8, 1.0, &mut rng));
        let r = view(&mut tape, Tensor::uniform(17, 8, 1.0, &mut rng));
        assert!(matches!(
            interact(&mut tape, &vars, &cfg, &g, &r),
            Err(Error::InvalidArgument(_))
        ));
    }
}
