//! Pretraining loop: shared-mask sampling, both encoders, cross-modal
//! matching on encoder outputs, interaction, masked recovery losses, and the
//! weighted total optimized with Adam under global gradient clipping.
//!
//! Everything is single-threaded and seeded; two runs with the same config,
//! network and corpus produce byte-identical loss logs and checkpoints.

use std::fs;
use std::path::Path;
use std::rc::Rc;

use crate::corpus::{
    extract_gps_features, extract_route_features, group_subtrajectories, validate_pair_against,
    RouteFeatureMatrix, TrajectoryPair,
};
use crate::error::{Error, Result};
use crate::model::gps::encode_gps;
use crate::model::interactor::interact;
use crate::model::route::{encode_route, gat_update_with};
use crate::model::{ModelParams, ModelState, TrainingConfig, ViewOutput};
use crate::network::RoadNetwork;
use crate::objectives::{
    batch_mean, match_loss, mlm_loss_for_trajectory, sample_shared_mask_with, MaskSpec,
};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct StepLosses {
    pub step: u64,
    pub gmlm: f64,
    pub rmlm: f64,
    pub match_loss: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub losses: Vec<StepLosses>,
    /// Accumulated gradient norm per parameter table over the whole run.
    pub grad_norm_accum: Vec<(String, f64)>,
}

/// Preprocessed inputs for one pair; computed once, reused every epoch.
pub(crate) struct PairData {
    pub traj_id: u64,
    pub groups: Vec<(usize, Tensor)>,
    pub route_features: RouteFeatureMatrix,
    pub road_ids: Vec<usize>,
}

impl PairData {
    pub fn prepare(pair: &TrajectoryPair, net: &RoadNetwork) -> Result<Self> {
        validate_pair_against(pair, net)?;
        let gps_features = extract_gps_features(pair)?;
        let groups = group_subtrajectories(&gps_features, &pair.assignment)?;
        let route_features = extract_route_features(pair)?;
        Ok(PairData {
            traj_id: pair.traj_id,
            groups,
            route_features,
            road_ids: pair.route.road_ids(),
        })
    }

    pub fn len(&self) -> usize {
        self.road_ids.len()
    }
}

pub(crate) struct PairForward {
    pub gps: Option<ViewOutput>,
    pub route: Option<ViewOutput>,
}

/// Encode one pair under a shared mask. The same `mask` reference feeds both
/// encoders; the pointer assertion keeps the shared-mask contract visible at
/// the call site.
pub(crate) fn encode_pair(
    tape: &mut Tape,
    vars: &ModelParams<Var>,
    config: &TrainingConfig,
    re_prime: Option<Var>,
    data: &PairData,
    mask: &MaskSpec,
) -> Result<PairForward> {
    let gps_mask: &MaskSpec = mask;
    let route_mask: &MaskSpec = mask;
    assert!(
        std::ptr::eq(gps_mask, route_mask),
        "both views must consume the identical mask"
    );
    let gps = if config.use_gps_branch {
        Some(encode_gps(tape, &vars.gps, config, &data.groups, gps_mask)?)
    } else {
        None
    };
    let route = if config.use_route_branch {
        let re = re_prime.expect("route branch needs the refreshed embedding table");
        Some(encode_route(
            tape,
            &vars.route,
            config,
            re,
            &data.route_features,
            route_mask,
            config.use_time_info,
        )?)
    } else {
        None
    };
    Ok(PairForward { gps, route })
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    lr: f64,
    /// Steps of linear learning-rate warmup from zero.
    warmup: u64,
    /// Total step budget for the cosine decay; 0 disables decay.
    horizon: u64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shapes: &[(usize, usize)], lr: f64, warmup: u64, horizon: u64) -> Self {
        Adam {
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            t: 0,
            lr,
            warmup,
            horizon,
        }
    }

    fn update(&mut self, tables: &mut [(String, &mut Tensor)], grads: &[Tensor]) {
        self.t += 1;
        let lr = if self.warmup > 0 && self.t <= self.warmup {
            self.lr * self.t as f64 / self.warmup as f64
        } else if self.horizon > self.warmup && self.t <= self.horizon {
            // Hold the base rate for most of the run, then cosine-decay to
            // zero over the last 30% so late training crystallizes instead of
            // churning under optimizer noise.
            let decay_start = self.warmup + (self.horizon - self.warmup) * 7 / 10;
            if self.t <= decay_start {
                self.lr
            } else {
                let progress =
                    (self.t - decay_start) as f64 / (self.horizon - decay_start) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        } else if self.horizon > 0 {
            0.0
        } else {
            self.lr
        };
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for (((_, table), grad), (m, v)) in tables
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let td = table.data_mut();
            let gd = grad.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..td.len() {
                md[i] = Self::BETA1 * md[i] + (1.0 - Self::BETA1) * gd[i];
                vd[i] = Self::BETA2 * vd[i] + (1.0 - Self::BETA2) * gd[i] * gd[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                td[i] -= lr * mhat / (vhat.sqrt() + Self::EPS);
            }
        }
    }
}

pub struct Trainer {
    pub state: ModelState,
    neighborhoods: Rc<Vec<Vec<usize>>>,
    pairs: Vec<PairData>,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    adam: Adam,
    grad_accum: Vec<f64>,
    table_names: Vec<String>,
    losses: Vec<StepLosses>,
}

impl Trainer {
    pub fn new(config: TrainingConfig, net: &RoadNetwork, corpus: &[TrajectoryPair]) -> Result<Self> {
        config.validate()?;
        let state = ModelState::init(config, net.num_segments())?;
        Trainer::from_state(state, net, corpus)
    }

    pub fn from_state(
        state: ModelState,
        net: &RoadNetwork,
        corpus: &[TrajectoryPair],
    ) -> Result<Self> {
        state.config.validate()?;
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("empty corpus".to_string()));
        }
        if state.vocab_size != net.num_segments() {
            return Err(Error::ConfigMismatch(format!(
                "model vocabulary {} does not match network size {}",
                state.vocab_size,
                net.num_segments()
            )));
        }
        let pairs: Vec<PairData> = corpus
            .iter()
            .map(|p| PairData::prepare(p, net))
            .collect::<Result<_>>()?;
        for p in &pairs {
            if p.len() > state.config.max_route_len {
                return Err(Error::InvalidArgument(format!(
                    "trajectory {} has {} segments, max_route_len is {}",
                    p.traj_id,
                    p.len(),
                    state.config.max_route_len
                )));
            }
        }
        let shapes: Vec<(usize, usize)> = state
            .params
            .flatten()
            .iter()
            .map(|(_, t)| t.shape())
            .collect();
        let table_names: Vec<String> = state
            .params
            .flatten()
            .iter()
            .map(|(n, _)| n.clone())
            .collect();
        let lr = state.config.learning_rate;
        let warmup = state.config.warmup_steps.min(state.config.steps / 5);
        let horizon = state.config.steps;
        Ok(Trainer {
            neighborhoods: Rc::new(net.attention_neighborhoods()),
            order: (0..pairs.len()).collect(),
            cursor: usize::MAX, // force a shuffle on the first step
            epoch: 0,
            adam: Adam::new(&shapes, lr, warmup, horizon),
            grad_accum: vec![0.0; shapes.len()],
            table_names,
            losses: Vec::new(),
            pairs,
            state,
        })
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let b = self.state.config.batch_size.min(self.pairs.len());
        if self.cursor == usize::MAX || self.cursor + b > self.order.len() {
            let mut rng = Rng::seed_stream(self.state.config.seed ^ 0xba7c_4e11, self.epoch);
            rng.shuffle(&mut self.order);
            self.cursor = 0;
            self.epoch += 1;
        }
        let batch = self.order[self.cursor..self.cursor + b].to_vec();
        self.cursor += b;
        batch
    }

    /// Run one optimization step over the next batch.
    pub fn step(&mut self) -> Result<StepLosses> {
        let batch = self.next_batch();
        let config = self.state.config.clone();
        let step_no = self.state.step;

        let mut mask_rng = Rng::seed_stream(config.seed ^ 0x6d61_736b, step_no);
        let masks: Vec<MaskSpec> = batch
            .iter()
            .map(|&i| {
                sample_shared_mask_with(
                    self.pairs[i].len(),
                    config.mask_length,
                    config.mask_prob,
                    &mut mask_rng,
                )
            })
            .collect::<Result<_>>()?;

        let mut tape = Tape::new();
        let vars = self.state.params.bind(&mut tape);
        let re_prime = if config.use_route_branch {
            Some(gat_update_with(
                &mut tape,
                &vars.route,
                self.neighborhoods.clone(),
                config.use_gat,
            ))
        } else {
            None
        };

        let mut gps_traj_reps = Vec::new();
        let mut route_traj_reps = Vec::new();
        let mut gmlm_terms = Vec::new();
        let mut rmlm_terms = Vec::new();
        for (&i, mask) in batch.iter().zip(masks.iter()) {
            let data = &self.pairs[i];
            let fw = encode_pair(&mut tape, &vars, &config, re_prime, data, mask)?;
            if let (Some(g), Some(r)) = (&fw.gps, &fw.route) {
                gps_traj_reps.push(g.trajectory_rep);
                route_traj_reps.push(r.trajectory_rep);
            }
            let (gps_tokens, route_tokens) = if config.use_interactor {
                let fused = interact(
                    &mut tape,
                    &vars.interactor,
                    &config,
                    fw.gps.as_ref().expect("interactor needs both views"),
                    fw.route.as_ref().expect("interactor needs both views"),
                )?;
                (Some(fused.gps_segments), Some(fused.route_segments))
            } else {
                (
                    fw.gps.as_ref().map(|g| g.segment_reps),
                    fw.route.as_ref().map(|r| r.segment_reps),
                )
            };
            if config.w1 > 0.0 {
                let tokens = gps_tokens.expect("gps recovery needs the gps branch");
                gmlm_terms.push(mlm_loss_for_trajectory(
                    &mut tape,
                    &vars.heads.gps_cls,
                    tokens,
                    mask,
                    &data.road_ids,
                    config.mlm_denominator,
                )?);
            }
            if config.w2 > 0.0 {
                let tokens = route_tokens.expect("route recovery needs the route branch");
                rmlm_terms.push(mlm_loss_for_trajectory(
                    &mut tape,
                    &vars.heads.route_cls,
                    tokens,
                    mask,
                    &data.road_ids,
                    config.mlm_denominator,
                )?);
            }
        }

        let gmlm = if gmlm_terms.is_empty() {
            None
        } else {
            Some(batch_mean(&mut tape, &gmlm_terms))
        };
        let rmlm = if rmlm_terms.is_empty() {
            None
        } else {
            Some(batch_mean(&mut tape, &rmlm_terms))
        };
        let matching = if config.w3 > 0.0 {
            Some(match_loss(&mut tape, &vars.heads, &gps_traj_reps, &route_traj_reps)?.loss)
        } else {
            None
        };

        let mut total: Option<Var> = None;
        for (term, weight) in [(gmlm, config.w1), (rmlm, config.w2), (matching, config.w3)] {
            if let Some(v) = term {
                let scaled = tape.scale(v, weight);
                total = Some(match total {
                    Some(acc) => tape.add(acc, scaled),
                    None => scaled,
                });
            }
        }
        let total = total.expect("validated configs keep at least one loss");

        let read = |t: &Tape, v: Option<Var>| v.map(|v| t.value(v).get(0, 0)).unwrap_or(0.0);
        let losses = StepLosses {
            step: step_no,
            gmlm: read(&tape, gmlm),
            rmlm: read(&tape, rmlm),
            match_loss: read(&tape, matching),
            total: tape.value(total).get(0, 0),
        };
        if !losses.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: step_no,
                traj_ids: batch.iter().map(|&i| self.pairs[i].traj_id).collect(),
            });
        }

        tape.backward(total);
        let flat_vars = vars.flatten();
        let mut grads: Vec<Tensor> = Vec::with_capacity(flat_vars.len());
        for (name, var) in &flat_vars {
            let g = tape.grad(**var);
            debug_assert!(g.is_finite(), "non-finite gradient in {name}");
            grads.push(g);
        }
        drop(tape);

        // Global-norm clipping.
        let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
        if norm > config.grad_clip {
            let scale = config.grad_clip / norm;
            for g in &mut grads {
                *g = g.scale(scale);
            }
        }
        for (acc, g) in self.grad_accum.iter_mut().zip(grads.iter()) {
            *acc += g.sq_norm().sqrt();
        }
        let mut tables = self.state.params.flatten_mut();
        debug_assert!(tables
            .iter()
            .zip(flat_vars.iter())
            .all(|((a, _), (b, _))| a == b));
        self.adam.update(&mut tables, &grads);

        self.state.step += 1;
        self.losses.push(losses);
        Ok(losses)
    }

    pub fn losses(&self) -> &[StepLosses] {
        &self.losses
    }

    pub fn report(&self) -> TrainReport {
        TrainReport {
            losses: self.losses.clone(),
            grad_norm_accum: self
                .table_names
                .iter()
                .cloned()
                .zip(self.grad_accum.iter().copied())
                .collect(),
        }
    }
}

/// Train for `config.steps` steps and return the final state plus the report.
pub fn pretrain(
    config: TrainingConfig,
    net: &RoadNetwork,
    corpus: &[TrajectoryPair],
) -> Result<(ModelState, TrainReport)> {
    pretrain_to_files(config, net, corpus, None, None)
}

/// Same as [`pretrain`], optionally writing the loss log CSV and periodic
/// checkpoints. On a non-finite loss the offending batch is dumped next to
/// the log before the error propagates.
pub fn pretrain_to_files(
    config: TrainingConfig,
    net: &RoadNetwork,
    corpus: &[TrajectoryPair],
    checkpoint_path: Option<&Path>,
    log_path: Option<&Path>,
) -> Result<(ModelState, TrainReport)> {
    let mut trainer = Trainer::new(config.clone(), net, corpus)?;
    for _ in 0..config.steps {
        match trainer.step() {
            Ok(_) => {}
            Err(Error::NonFiniteLoss { step, traj_ids }) => {
                if let Some(log) = log_path {
                    let dump = log.with_extension("dump.json");
                    let body = serde_json::json!({ "step": step, "traj_ids": traj_ids });
                    let _ = fs::write(&dump, body.to_string());
                }
                return Err(Error::NonFiniteLoss { step, traj_ids });
            }
            Err(e) => return Err(e),
        }
        if config.checkpoint_every > 0 && trainer.state.step % config.checkpoint_every == 0 {
            if let Some(p) = checkpoint_path {
                trainer.state.save_checkpoint(p)?;
            }
        }
    }
    if let Some(p) = checkpoint_path {
        trainer.state.save_checkpoint(p)?;
    }
    let report = trainer.report();
    if let Some(p) = log_path {
        write_loss_log(p, &report.losses)?;
    }
    Ok((trainer.state, report))
}

pub fn loss_log_to_string(losses: &[StepLosses]) -> String {
    let mut out = String::from("step,gmlm,rmlm,match,total\n");
    for l in losses {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            l.step, l.gmlm, l.rmlm, l.match_loss, l.total
        ));
    }
    out
}

pub fn write_loss_log(path: impl AsRef<Path>, losses: &[StepLosses]) -> Result<()> {
    fs::write(&path, loss_log_to_string(losses)).map_err(|e| Error::io(&path, e))
}

/// Whether the given flat table name can receive gradient under `config`;
/// tables outside the active set must accumulate exactly zero gradient.
///
/// Gradient only reaches a table if some loss consumes its output: the
/// recovery losses read (post-interaction) segment tokens, the match loss
/// reads pre-interaction trajectory representations. In particular the
/// interactor is gradient-dead when both recovery losses are off, and an
/// encoder with its own recovery loss off is reached only through the match
/// loss or cross-modal attention.
pub fn table_is_active(name: &str, config: &TrainingConfig) -> bool {
    let mlm_on = config.w1 > 0.0 || config.w2 > 0.0;
    let gps_active = config.use_gps_branch
        && (config.w1 > 0.0
            || config.w3 > 0.0
            || (config.w2 > 0.0 && config.use_interactor));
    let route_active = config.use_route_branch
        && (config.w2 > 0.0
            || config.w3 > 0.0
            || (config.w1 > 0.0 && config.use_interactor));
    if let Some(rest) = name.strip_prefix("gps.") {
        if !gps_active {
            return false;
        }
        if rest.starts_with("intra.bwd") {
            return config.intra_concat_directions;
        }
        return true;
    }
    if let Some(rest) = name.strip_prefix("route.") {
        if !route_active {
            return false;
        }
        if rest.starts_with("gat_") {
            return config.use_gat;
        }
        if rest.starts_with("minute_embedding")
            || rest.starts_with("weekday_embedding")
            || rest.starts_with("interval_")
        {
            return config.use_time_info;
        }
        return true;
    }
    if let Some(rest) = name.strip_prefix("interactor.") {
        if !config.use_interactor || !mlm_on {
            return false;
        }
        if rest.starts_with("mode_embedding") {
            return config.use_mode_embedding;
        }
        return true;
    }
    if let Some(rest) = name.strip_prefix("heads.") {
        if rest.starts_with("gps_cls") {
            return config.w1 > 0.0 && config.use_gps_branch;
        }
        if rest.starts_with("route_cls") {
            return config.w2 > 0.0 && config.use_route_branch;
        }
        if rest.starts_with("proj_") || rest.starts_with("pair_cls") {
            return config.w3 > 0.0;
        }
        return mlm_on;
    }
    true
}

/// Top-1 recovery accuracy of masked segments for both views on `pairs`,
/// using freshly sampled masks. Returns (gps, route) accuracies.
pub fn masked_recovery_accuracy(
    state: &ModelState,
    net: &RoadNetwork,
    pairs: &[TrajectoryPair],
    seed: u64,
) -> Result<(f64, f64)> {
    let config = &state.config;
    let neighborhoods = Rc::new(net.attention_neighborhoods());
    let mut rng = Rng::seed_stream(seed ^ 0xacc0_ed1e, 1);
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for pair in pairs {
        let data = PairData::prepare(pair, net)?;
        let mask =
            sample_shared_mask_with(data.len(), config.mask_length, config.mask_prob, &mut rng)?;
        let mut tape = Tape::new();
        let vars = state.params.bind(&mut tape);
        let re_prime = if config.use_route_branch {
            Some(gat_update_with(
                &mut tape,
                &vars.route,
                neighborhoods.clone(),
                config.use_gat,
            ))
        } else {
            None
        };
        let fw = encode_pair(&mut tape, &vars, config, re_prime, &data, &mask)?;
        let (gps_tokens, route_tokens) = if config.use_interactor {
            let fused = interact(
                &mut tape,
                &vars.interactor,
                config,
                fw.gps.as_ref().expect("needs both views"),
                fw.route.as_ref().expect("needs both views"),
            )?;
            (Some(fused.gps_segments), Some(fused.route_segments))
        } else {
            (
                fw.gps.as_ref().map(|g| g.segment_reps),
                fw.route.as_ref().map(|r| r.segment_reps),
            )
        };
        for (slot, (tokens, head)) in [
            (gps_tokens, &vars.heads.gps_cls),
            (route_tokens, &vars.heads.route_cls),
        ]
        .into_iter()
        .enumerate()
        {
            let Some(tokens) = tokens else { continue };
            let picked = tape.gather_rows(tokens, mask.masked_positions());
            let logits = crate::model::layers::linear(&mut tape, head, picked);
            let values = tape.value(logits);
            for (r, &pos) in mask.masked_positions().iter().enumerate() {
                let row = values.row(r);
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                totals[slot] += 1;
                if argmax == data.road_ids[pos] {
                    hits[slot] += 1;
                }
            }
        }
    }
    let acc = |slot: usize| {
        if totals[slot] == 0 {
            0.0
        } else {
            hits[slot] as f64 / totals[slot] as f64
        }
    };
    Ok((acc(0), acc(1)))
}

/// Check, over one batch holding every given pair (unmasked forward), whether
/// each positive match score exceeds its hardest in-batch negative's score.
/// Returns (passed, total).
pub fn match_score_margins(
    state: &ModelState,
    net: &RoadNetwork,
    pairs: &[TrajectoryPair],
) -> Result<(usize, usize)> {
    let config = &state.config;
    if !config.use_gps_branch || !config.use_route_branch {
        return Err(Error::InvalidArgument(
            "match margins need both branches".to_string(),
        ));
    }
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two pairs".to_string()));
    }
    let neighborhoods = Rc::new(net.attention_neighborhoods());
    let mut tape = Tape::new();
    let vars = state.params.bind(&mut tape);
    let re_prime = gat_update_with(&mut tape, &vars.route, neighborhoods, config.use_gat);
    let mut gps_reps = Vec::new();
    let mut route_reps = Vec::new();
    for pair in pairs {
        let data = PairData::prepare(pair, net)?;
        let mask = MaskSpec::empty(data.len());
        let fw = encode_pair(&mut tape, &vars, config, Some(re_prime), &data, &mask)?;
        gps_reps.push(fw.gps.unwrap().trajectory_rep);
        route_reps.push(fw.route.unwrap().trajectory_rep);
    }
    let out = match_loss(&mut tape, &vars.heads, &gps_reps, &route_reps)?;
    let mut passed = 0usize;
    for (p, n) in out
        .positive_scores
        .iter()
        .zip(out.hardest_negative_scores.iter())
    {
        if p > n {
            passed += 1;
        }
    }
    Ok((passed, pairs.len()))
}

/// Hardest-negative selection maps over one batch of all pairs.
#[doc(hidden)]
pub fn match_selection_debug(
    state: &ModelState,
    net: &RoadNetwork,
    pairs: &[TrajectoryPair],
) -> Result<(Vec<usize>, Vec<usize>)> {
    use crate::model::layers::linear;
    use crate::objectives::hardest_negatives;
    let config = &state.config;
    let neighborhoods = Rc::new(net.attention_neighborhoods());
    let mut tape = Tape::new();
    let vars = state.params.bind(&mut tape);
    let re_prime = gat_update_with(&mut tape, &vars.route, neighborhoods, config.use_gat);
    let mut gps_proj = Vec::new();
    let mut route_proj = Vec::new();
    for pair in pairs {
        let data = PairData::prepare(pair, net)?;
        let mask = MaskSpec::empty(data.len());
        let fw = encode_pair(&mut tape, &vars, config, Some(re_prime), &data, &mask)?;
        let g = linear(&mut tape, &vars.heads.proj_gps, fw.gps.unwrap().trajectory_rep);
        let r = linear(&mut tape, &vars.heads.proj_route, fw.route.unwrap().trajectory_rep);
        gps_proj.push(tape.value(g).data().to_vec());
        route_proj.push(tape.value(r).data().to_vec());
    }
    Ok((
        hardest_negatives(&gps_proj, &route_proj),
        hardest_negatives(&route_proj, &gps_proj),
    ))
}

/// Positive and hardest-negative sigmoid scores over one batch of all pairs.
#[doc(hidden)]
pub fn match_scores_debug(
    state: &ModelState,
    net: &RoadNetwork,
    pairs: &[TrajectoryPair],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let config = &state.config;
    let neighborhoods = Rc::new(net.attention_neighborhoods());
    let mut tape = Tape::new();
    let vars = state.params.bind(&mut tape);
    let re_prime = gat_update_with(&mut tape, &vars.route, neighborhoods, config.use_gat);
    let mut gps_reps = Vec::new();
    let mut route_reps = Vec::new();
    for pair in pairs {
        let data = PairData::prepare(pair, net)?;
        let mask = MaskSpec::empty(data.len());
        let fw = encode_pair(&mut tape, &vars, config, Some(re_prime), &data, &mask)?;
        gps_reps.push(fw.gps.unwrap().trajectory_rep);
        route_reps.push(fw.route.unwrap().trajectory_rep);
    }
    let out = match_loss(&mut tape, &vars.heads, &gps_reps, &route_reps)?;
    Ok((out.positive_scores, out.hardest_negative_scores))
}
