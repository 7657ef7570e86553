//! Browser bindings for the interactive demo page.
//!
//! Three operations are exposed: network + trajectory generation, detour
//! augmentation, and a live pretraining loop on a tiny corpus. Everything
//! returns JSON strings; the page draws them on a canvas.

use wasm_bindgen::prelude::*;

use trajfuse::corpus::{generate_corpus, generate_pair, GenOptions, TrajectoryPair};
use trajfuse::eval::detour::{detour_augment, detour_rate, DetourConfig};
use trajfuse::model::TrainingConfig;
use trajfuse::network::{build_grid_network, RoadNetwork};
use trajfuse::train::{masked_recovery_accuracy, Trainer};

fn segments_json(net: &RoadNetwork) -> serde_json::Value {
    serde_json::Value::Array(
        net.segments()
            .iter()
            .map(|s| {
                serde_json::json!({
                    "road_id": s.road_id,
                    "geometry": s.geometry,
                    "road_class": format!("{:?}", s.road_class).to_lowercase(),
                    "free_speed_mps": s.free_speed_mps,
                })
            })
            .collect(),
    )
}

fn pair_json(pair: &TrajectoryPair) -> serde_json::Value {
    serde_json::json!({
        "traj_id": pair.traj_id,
        "gps": pair.gps.points.iter().map(|p| (p.lat, p.lng, p.t)).collect::<Vec<_>>(),
        "route": pair.route.records.iter().map(|r| (r.road_id, r.t)).collect::<Vec<_>>(),
        "assignment": pair.assignment.rows.iter().map(|a| (a.start, a.end, a.road_id)).collect::<Vec<_>>(),
    })
}

/// Build a grid network and one sampled trajectory pair over it.
#[wasm_bindgen]
pub fn demo_trajectory(
    rows: usize,
    cols: usize,
    cell_m: f64,
    net_seed: u64,
    traj_seed: u64,
    sample_period_s: f64,
    gps_noise_m: f64,
) -> Result<String, JsError> {
    let net = build_grid_network(rows, cols, cell_m, net_seed).map_err(err)?;
    let opts = GenOptions {
        sample_period_s: sample_period_s.max(1.0),
        gps_noise_m: gps_noise_m.max(0.0),
        ..GenOptions::default()
    };
    let pair = generate_pair(&net, trajfuse::corpus::CORPUS_BASE_UNIX + 30_600.0, &opts, traj_seed)
        .map_err(err)?;
    Ok(serde_json::json!({
        "segments": segments_json(&net),
        "pair": pair_json(&pair),
    })
    .to_string())
}

/// Detour a sampled route and report both versions plus the replaced
/// fraction.
#[wasm_bindgen]
pub fn demo_detour(
    rows: usize,
    cols: usize,
    cell_m: f64,
    net_seed: u64,
    traj_seed: u64,
    subpath_rate: f64,
    area_threshold_m2: f64,
) -> Result<String, JsError> {
    let net = build_grid_network(rows, cols, cell_m, net_seed).map_err(err)?;
    let opts = GenOptions::default();
    let pair = generate_pair(&net, trajfuse::corpus::CORPUS_BASE_UNIX + 30_600.0, &opts, traj_seed)
        .map_err(err)?;
    let cfg = DetourConfig {
        subpath_rate: subpath_rate.clamp(0.05, 0.95),
        area_threshold_m2: area_threshold_m2.max(1.0),
        ..DetourConfig::default()
    };
    let detoured = detour_augment(&net, &pair.route, &cfg, traj_seed ^ 0xd7);
    let body = match detoured {
        Ok(d) => serde_json::json!({
            "segments": segments_json(&net),
            "original": pair.route.records.iter().map(|r| r.road_id).collect::<Vec<_>>(),
            "detoured": d.records.iter().map(|r| r.road_id).collect::<Vec<_>>(),
            "detour_rate": detour_rate(&pair.route, &d),
            "accepted": true,
        }),
        Err(_) => serde_json::json!({
            "segments": segments_json(&net),
            "original": pair.route.records.iter().map(|r| r.road_id).collect::<Vec<_>>(),
            "detoured": serde_json::Value::Null,
            "accepted": false,
        }),
    };
    Ok(body.to_string())
}

/// Incremental pretraining on a small in-memory corpus; `step_chunk` steps
/// per call so the page can animate the loss curves.
#[wasm_bindgen]
pub struct DemoTrainer {
    trainer: Trainer,
    net: RoadNetwork,
    corpus: Vec<TrajectoryPair>,
}

#[wasm_bindgen]
impl DemoTrainer {
    #[wasm_bindgen(constructor)]
    pub fn new(rows: usize, cols: usize, pairs: usize, seed: u64) -> Result<DemoTrainer, JsError> {
        let net = build_grid_network(rows.clamp(3, 8), cols.clamp(3, 8), 200.0, seed).map_err(err)?;
        let corpus = generate_corpus(&net, pairs.clamp(8, 64), seed ^ 0xc0, &GenOptions::default())
            .map_err(err)?;
        let config = TrainingConfig {
            d_model: 32,
            d_intra: 16,
            d_inter: 16,
            d_emb: 32,
            d_rep: 32,
            d_proj: 16,
            l1_layers: 1,
            l2_layers: 1,
            heads: 2,
            batch_size: 8,
            max_route_len: 32,
            seed,
            ..TrainingConfig::default()
        };
        let trainer = Trainer::new(config, &net, &corpus).map_err(err)?;
        Ok(DemoTrainer {
            trainer,
            net,
            corpus,
        })
    }

    /// Run `steps` optimization steps and return their loss rows.
    pub fn step(&mut self, steps: u32) -> Result<String, JsError> {
        let mut rows = Vec::new();
        for _ in 0..steps {
            let l = self.trainer.step().map_err(err)?;
            rows.push(serde_json::json!({
                "step": l.step,
                "gmlm": l.gmlm,
                "rmlm": l.rmlm,
                "match": l.match_loss,
                "total": l.total,
            }));
        }
        Ok(serde_json::Value::Array(rows).to_string())
    }

    /// Masked-segment top-1 recovery accuracy of both views right now.
    pub fn accuracy(&self) -> Result<String, JsError> {
        let (gps, route) =
            masked_recovery_accuracy(&self.trainer.state, &self.net, &self.corpus, 1).map_err(err)?;
        Ok(serde_json::json!({ "gps": gps, "route": route }).to_string())
    }
}

fn err(e: trajfuse::Error) -> JsError {
    JsError::new(&e.to_string())
}
