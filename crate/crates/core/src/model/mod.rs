//! Model configuration, parameter containers and checkpoint IO.
//!
//! Parameter structs are generic over the cell type so the same shape
//! describes both stored tensors (`ModelParams<Tensor>`) and their tape
//! bindings (`ModelParams<Var>`). `map` and `flatten` traverse fields in the
//! same fixed order; the checkpoint format, the optimizer state and gradient
//! extraction all rely on that order.

pub mod gps;
pub mod interactor;
pub mod layers;
pub mod route;

use serde::{Deserialize, Serialize};

use crate::corpus::GPS_FEATURES;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const INTERVAL_BUCKETS: usize = 100;
/// Travel-time deltas are divided by this before the bucket net.
pub const INTERVAL_NORM_S: f64 = 600.0;
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"TJFCKPT1";

/// Per-view encoder output: one row per segment plus the pooled trajectory
/// vector (the exact row mean, masked positions included).
pub struct ViewOutput {
    pub segment_reps: Var,
    pub trajectory_rep: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MlmDenominator {
    /// Softmax over the full segment vocabulary.
    Vocab,
    /// Softmax restricted to segments appearing in the trajectory.
    Trajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub d_model: usize,
    pub d_intra: usize,
    pub d_inter: usize,
    pub d_emb: usize,
    pub d_rep: usize,
    #[serde(alias = "proj_dim")]
    pub d_proj: usize,
    /// Route-encoder transformer depth.
    pub l1_layers: usize,
    /// Interactor transformer depth.
    pub l2_layers: usize,
    pub heads: usize,
    pub mask_length: usize,
    pub mask_prob: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    /// Linear learning-rate warmup steps.
    pub warmup_steps: u64,
    pub grad_clip: f64,
    pub seed: u64,
    pub mlm_denominator: MlmDenominator,
    /// Feed both intra directions (concatenated) to the inter stage.
    pub intra_concat_directions: bool,
    pub use_gps_branch: bool,
    pub use_route_branch: bool,
    pub use_time_info: bool,
    pub use_interactor: bool,
    pub use_gat: bool,
    pub use_mode_embedding: bool,
    /// Longest route the interactor's position table can hold.
    pub max_route_len: usize,
    /// Checkpoint every K steps; 0 checkpoints only at the end.
    pub checkpoint_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            d_model: 64,
            d_intra: 32,
            d_inter: 32,
            d_emb: 64,
            d_rep: 64,
            d_proj: 32,
            l1_layers: 2,
            l2_layers: 2,
            heads: 4,
            mask_length: 2,
            mask_prob: 0.4,
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            batch_size: 16,
            steps: 300,
            learning_rate: 1e-2,
            warmup_steps: 20,
            grad_clip: 5.0,
            seed: 0,
            mlm_denominator: MlmDenominator::Vocab,
            intra_concat_directions: false,
            use_gps_branch: true,
            use_route_branch: true,
            use_time_info: true,
            use_interactor: true,
            use_gat: true,
            use_mode_embedding: true,
            max_route_len: 64,
            checkpoint_every: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.d_model == 0 || self.d_emb == 0 || self.d_intra == 0 || self.d_proj == 0 {
            return fail("widths must be positive".to_string());
        }
        if 2 * self.d_inter != self.d_model {
            return fail(format!(
                "2 * d_inter ({}) must equal d_model ({})",
                2 * self.d_inter,
                self.d_model
            ));
        }
        if self.d_rep != self.d_model {
            return fail(format!(
                "d_rep ({}) must equal d_model ({})",
                self.d_rep, self.d_model
            ));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 || self.d_rep % self.heads != 0 {
            return fail(format!(
                "widths must be divisible by heads ({})",
                self.heads
            ));
        }
        if self.mask_length < 2 {
            return fail(format!("mask_length must be >= 2, got {}", self.mask_length));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return fail(format!("mask_prob must be in [0, 1], got {}", self.mask_prob));
        }
        if self.w1 < 0.0 || self.w2 < 0.0 || self.w3 < 0.0 {
            return fail("loss weights must be nonnegative".to_string());
        }
        if self.w1 == 0.0 && self.w2 == 0.0 && self.w3 == 0.0 {
            return fail("at least one loss weight must be positive".to_string());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".to_string());
        }
        if self.w3 > 0.0 && self.batch_size < 2 {
            return fail("match loss needs batch_size >= 2".to_string());
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return fail("learning_rate and grad_clip must be positive".to_string());
        }
        if self.max_route_len < 2 {
            return fail("max_route_len must be >= 2".to_string());
        }
        if !self.use_gps_branch && !self.use_route_branch {
            return fail("at least one branch must be enabled".to_string());
        }
        if !self.use_gps_branch && (self.use_interactor || self.w1 != 0.0 || self.w3 != 0.0) {
            return fail(
                "without the GPS branch, disable the interactor and set w1 = w3 = 0".to_string(),
            );
        }
        if !self.use_route_branch && (self.use_interactor || self.w2 != 0.0 || self.w3 != 0.0) {
            return fail(
                "without the route branch, disable the interactor and set w2 = w3 = 0".to_string(),
            );
        }
        Ok(())
    }

    /// Width of the vectors the inter-road stage consumes.
    pub fn inter_input_width(&self) -> usize {
        if self.intra_concat_directions {
            2 * self.d_intra
        } else {
            self.d_intra
        }
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        let cfg: TrainingConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Architecture fields that a checkpoint must agree on to be loadable.
    fn architecture_key(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d_model", self.d_model.to_string()),
            ("d_intra", self.d_intra.to_string()),
            ("d_inter", self.d_inter.to_string()),
            ("d_emb", self.d_emb.to_string()),
            ("d_rep", self.d_rep.to_string()),
            ("d_proj", self.d_proj.to_string()),
            ("l1_layers", self.l1_layers.to_string()),
            ("l2_layers", self.l2_layers.to_string()),
            ("heads", self.heads.to_string()),
            ("intra_concat_directions", self.intra_concat_directions.to_string()),
            ("max_route_len", self.max_route_len.to_string()),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Clone, Debug)]
pub struct GruDir<T> {
    pub rx: Linear<T>,
    pub rh: Linear<T>,
    pub zx: Linear<T>,
    pub zh: Linear<T>,
    pub nx: Linear<T>,
    pub nh: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct BiGru<T> {
    pub fwd: GruDir<T>,
    pub bwd: GruDir<T>,
}

#[derive(Clone, Debug)]
pub struct LayerNorm<T> {
    pub gamma: T,
    pub beta: T,
}

#[derive(Clone, Debug)]
pub struct EncoderLayer<T> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    pub norm1: LayerNorm<T>,
    pub ffn1: Linear<T>,
    pub ffn2: Linear<T>,
    pub norm2: LayerNorm<T>,
}

#[derive(Clone, Debug)]
pub struct Transformer<T> {
    pub layers: Vec<EncoderLayer<T>>,
}

#[derive(Clone, Debug)]
pub struct GpsEncoderParams<T> {
    pub intra: BiGru<T>,
    pub inter: BiGru<T>,
    /// Injected at the inter stage in place of masked sub-trajectories.
    pub mask_vector: T,
}

#[derive(Clone, Debug)]
pub struct RouteEncoderParams<T> {
    /// (|V| + 1) x d_emb; the last row is the mask token.
    pub road_embedding: T,
    pub gat_weight: T,
    pub gat_attn_src: T,
    pub gat_attn_dst: T,
    pub minute_embedding: T,
    pub weekday_embedding: T,
    pub interval_net: Linear<T>,
    pub interval_buckets: T,
    pub pre_ffn: Linear<T>,
    pub transformer: Transformer<T>,
}

#[derive(Clone, Debug)]
pub struct InteractorParams<T> {
    pub mode_embedding: T,
    pub position_embedding: T,
    pub input_ffn: Linear<T>,
    pub transformer: Transformer<T>,
}

#[derive(Clone, Debug)]
pub struct SslHeads<T> {
    pub gps_cls: Linear<T>,
    pub route_cls: Linear<T>,
    pub proj_gps: Linear<T>,
    pub proj_route: Linear<T>,
    pub pair_cls: Linear<T>,
}

#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    pub gps: GpsEncoderParams<T>,
    pub route: RouteEncoderParams<T>,
    pub interactor: InteractorParams<T>,
    pub heads: SslHeads<T>,
}

// Field traversal order below is load-bearing: map and flatten must agree.

impl<T> Linear<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Linear<U> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    pub fn flatten<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub fn flatten_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut T)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

impl<T> GruDir<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> GruDir<U> {
        GruDir {
            rx: self.rx.map(f),
            rh: self.rh.map(f),
            zx: self.zx.map(f),
            zh: self.zh.map(f),
            nx: self.nx.map(f),
            nh: self.nh.map(f),
        }
    }

    pub fn flatten<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        self.rx.flatten(&format!("{prefix}.rx"), out);
        self.rh.flatten(&format!("{prefix}.rh"), out);
        self.zx.flatten(&format!("{prefix}.zx"), out);
        self.zh.flatten(&format!("{prefix}.zh"), out);
        self.nx.flatten(&format!("{prefix}.nx"), out);
        self.nh.flatten(&format!("{prefix}.nh"), out);
    }

    pub fn flatten_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut T)>) {
        self.rx.flatten_mut(&format!("{prefix}.rx"), out);
        self.rh.flatten_mut(&format!("{prefix}.rh"), out);
        self.zx.flatten_mut(&format!("{prefix}.zx"), out);
        self.zh.flatten_mut(&format!("{prefix}.zh"), out);
        self.nx.flatten_mut(&format!("{prefix}.nx"), out);
        self.nh.flatten_mut(&format!("{prefix}.nh"), out);
    }
}

impl<T> BiGru<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> BiGru<U> {
        BiGru {
            fwd: self.fwd.map(f),
            bwd: self.bwd.map(f),
        }
    }

    pub fn flatten<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        self.fwd.flatten(&format!("{prefix}.fwd"), out);
        self.bwd.flatten(&format!("{prefix}.bwd"), out);
    }

    pub fn flatten_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut T)>) {
        self.fwd.flatten_mut(&format!("{prefix}.fwd"), out);
        self.bwd.flatten_mut(&format!("{prefix}.bwd"), out);
    }
}

impl<T> LayerNorm<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LayerNorm<U> {
        LayerNorm {
            gamma: f(&self.gamma),
            beta: f(&self.beta),
        }
    }

    pub fn flatten<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        out.push((format!("{prefix}.gamma"), &self.gamma));
        out.push((format!("{prefix}.beta"), &self.beta));
    }

    pub fn flatten_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut T)>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }
}

impl<T> EncoderLayer<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EncoderLayer<U> {
        EncoderLayer {
            wq: self.wq.map(f),
            wk: self.wk.map(f),
            wv: self.wv.map(f),
            wo: self.wo.map(f),
            norm1: self.norm1.map(f),
            ffn1: self.ffn1.map(f),
            ffn2: self.ffn2.map(f),
            norm2: self.norm2.map(f),
        }
    }

    pub fn flatten<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        self.wq.flatten(&format!("{prefix}.wq"), out);
        self.wk.flatten(&format!("{prefix}.wk"), out);
        self.wv.flatten(&format!("{prefix}.wv"), out);
        self.wo.flatten(&format!("{prefix}.wo"), out);
        self.norm1.flatten(&format!("{prefix}.norm1"), out);
        self.ffn1.flatten(&format!("{prefix}.ffn1"), out);
        self.ffn2.flatten(&format!("{prefix}.ffn2"), out);
        self.norm2.flatten(&format!("{prefix}.norm2"), out);
    }

    pub fn flatten_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut T)>) {
        self.wq.flatten_mut(&format!("{prefix}.wq"), out);
        self.wk.flatten_mut(&format!("{prefix}.wk"), out);
        self.wv.flatten_mut(&format!("{prefix}.wv"), out);
        self.wo.flatten_mut(&format!("{prefix}.wo"), out);
        self.norm1.flatten_mut(&format!("{prefix}.norm1"), out);
        self.ffn1.flatten_mut(&format!("{prefix}.ffn1"), out);
        self.ffn2.flatten_mut(&format!("{prefix}.ffn2"), out);
        self.norm2.flatten_mut(&format!("{prefix}.norm2"), out);
    }
}

impl<T> Transformer<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Transformer<U> {
        Transformer {
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
        }
    }

    pub fn flatten<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a T)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.flatten(&format!("{prefix}.layer{i}"), out);
        }
    }

    pub fn flatten_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut T)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.flatten_mut(&format!("{prefix}.layer{i}"), out);
        }
    }
}

impl<T> GpsEncoderParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> GpsEncoderParams<U> {
        GpsEncoderParams {
            intra: self.intra.map(f),
            inter: self.inter.map(f),
            mask_vector: f(&self.mask_vector),
        }
    }
}

impl<T> RouteEncoderParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> RouteEncoderParams<U> {
        RouteEncoderParams {
            road_embedding: f(&self.road_embedding),
            gat_weight: f(&self.gat_weight),
            gat_attn_src: f(&self.gat_attn_src),
            gat_attn_dst: f(&self.gat_attn_dst),
            minute_embedding: f(&self.minute_embedding),
            weekday_embedding: f(&self.weekday_embedding),
            interval_net: self.interval_net.map(f),
            interval_buckets: f(&self.interval_buckets),
            pre_ffn: self.pre_ffn.map(f),
            transformer: self.transformer.map(f),
        }
    }
}

impl<T> InteractorParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> InteractorParams<U> {
        InteractorParams {
            mode_embedding: f(&self.mode_embedding),
            position_embedding: f(&self.position_embedding),
            input_ffn: self.input_ffn.map(f),
            transformer: self.transformer.map(f),
        }
    }
}

impl<T> SslHeads<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> SslHeads<U> {
        SslHeads {
            gps_cls: self.gps_cls.map(f),
            route_cls: self.route_cls.map(f),
            proj_gps: self.proj_gps.map(f),
            proj_route: self.proj_route.map(f),
            pair_cls: self.pair_cls.map(f),
        }
    }
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            gps: self.gps.map(f),
            route: self.route.map(f),
            interactor: self.interactor.map(f),
            heads: self.heads.map(f),
        }
    }

    pub fn flatten(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.gps.intra.flatten("gps.intra", &mut out);
        self.gps.inter.flatten("gps.inter", &mut out);
        out.push(("gps.mask_vector".to_string(), &self.gps.mask_vector));
        out.push(("route.road_embedding".to_string(), &self.route.road_embedding));
        out.push(("route.gat_weight".to_string(), &self.route.gat_weight));
        out.push(("route.gat_attn_src".to_string(), &self.route.gat_attn_src));
        out.push(("route.gat_attn_dst".to_string(), &self.route.gat_attn_dst));
        out.push(("route.minute_embedding".to_string(), &self.route.minute_embedding));
        out.push(("route.weekday_embedding".to_string(), &self.route.weekday_embedding));
        self.route.interval_net.flatten("route.interval_net", &mut out);
        out.push(("route.interval_buckets".to_string(), &self.route.interval_buckets));
        self.route.pre_ffn.flatten("route.pre_ffn", &mut out);
        self.route.transformer.flatten("route.transformer", &mut out);
        out.push(("interactor.mode_embedding".to_string(), &self.interactor.mode_embedding));
        out.push((
            "interactor.position_embedding".to_string(),
            &self.interactor.position_embedding,
        ));
        self.interactor.input_ffn.flatten("interactor.input_ffn", &mut out);
        self.interactor.transformer.flatten("interactor.transformer", &mut out);
        self.heads.gps_cls.flatten("heads.gps_cls", &mut out);
        self.heads.route_cls.flatten("heads.route_cls", &mut out);
        self.heads.proj_gps.flatten("heads.proj_gps", &mut out);
        self.heads.proj_route.flatten("heads.proj_route", &mut out);
        self.heads.pair_cls.flatten("heads.pair_cls", &mut out);
        out
    }

    pub fn flatten_mut(&mut self) -> Vec<(String, &mut T)> {
        let mut out = Vec::new();
        self.gps.intra.flatten_mut("gps.intra", &mut out);
        self.gps.inter.flatten_mut("gps.inter", &mut out);
        out.push(("gps.mask_vector".to_string(), &mut self.gps.mask_vector));
        out.push(("route.road_embedding".to_string(), &mut self.route.road_embedding));
        out.push(("route.gat_weight".to_string(), &mut self.route.gat_weight));
        out.push(("route.gat_attn_src".to_string(), &mut self.route.gat_attn_src));
        out.push(("route.gat_attn_dst".to_string(), &mut self.route.gat_attn_dst));
        out.push((
            "route.minute_embedding".to_string(),
            &mut self.route.minute_embedding,
        ));
        out.push((
            "route.weekday_embedding".to_string(),
            &mut self.route.weekday_embedding,
        ));
        self.route.interval_net.flatten_mut("route.interval_net", &mut out);
        out.push((
            "route.interval_buckets".to_string(),
            &mut self.route.interval_buckets,
        ));
        self.route.pre_ffn.flatten_mut("route.pre_ffn", &mut out);
        self.route.transformer.flatten_mut("route.transformer", &mut out);
        out.push((
            "interactor.mode_embedding".to_string(),
            &mut self.interactor.mode_embedding,
        ));
        out.push((
            "interactor.position_embedding".to_string(),
            &mut self.interactor.position_embedding,
        ));
        self.interactor.input_ffn.flatten_mut("interactor.input_ffn", &mut out);
        self.interactor
            .transformer
            .flatten_mut("interactor.transformer", &mut out);
        self.heads.gps_cls.flatten_mut("heads.gps_cls", &mut out);
        self.heads.route_cls.flatten_mut("heads.route_cls", &mut out);
        self.heads.proj_gps.flatten_mut("heads.proj_gps", &mut out);
        self.heads.proj_route.flatten_mut("heads.proj_route", &mut out);
        self.heads.pair_cls.flatten_mut("heads.pair_cls", &mut out);
        out
    }
}

fn init_linear(out_w: usize, in_w: usize, bound: f64, rng: &mut Rng) -> Linear<Tensor> {
    Linear {
        weight: Tensor::uniform(out_w, in_w, bound, rng),
        bias: Tensor::uniform(1, out_w, bound, rng),
    }
}

fn init_gru(input: usize, hidden: usize, rng: &mut Rng) -> GruDir<Tensor> {
    let bound = 1.0 / (hidden as f64).sqrt();
    GruDir {
        rx: init_linear(hidden, input, bound, rng),
        rh: init_linear(hidden, hidden, bound, rng),
        zx: init_linear(hidden, input, bound, rng),
        zh: init_linear(hidden, hidden, bound, rng),
        nx: init_linear(hidden, input, bound, rng),
        nh: init_linear(hidden, hidden, bound, rng),
    }
}

fn init_bigru(input: usize, hidden: usize, rng: &mut Rng) -> BiGru<Tensor> {
    BiGru {
        fwd: init_gru(input, hidden, rng),
        bwd: init_gru(input, hidden, rng),
    }
}

fn init_layer_norm(width: usize) -> LayerNorm<Tensor> {
    LayerNorm {
        gamma: Tensor::full(1, width, 1.0),
        beta: Tensor::zeros(1, width),
    }
}

fn init_transformer(width: usize, layers: usize, rng: &mut Rng) -> Transformer<Tensor> {
    let bound = 1.0 / (width as f64).sqrt();
    let ffn = 4 * width;
    let ffn_bound = 1.0 / (ffn as f64).sqrt();
    Transformer {
        layers: (0..layers)
            .map(|_| EncoderLayer {
                wq: init_linear(width, width, bound, rng),
                wk: init_linear(width, width, bound, rng),
                wv: init_linear(width, width, bound, rng),
                wo: init_linear(width, width, bound, rng),
                norm1: init_layer_norm(width),
                ffn1: init_linear(ffn, width, bound, rng),
                ffn2: init_linear(width, ffn, ffn_bound, rng),
                norm2: init_layer_norm(width),
            })
            .collect(),
    }
}

fn init_embedding(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    // Wider than 1/sqrt(d): embedding rows must be separable from the start
    // for the recovery heads to get traction quickly.
    Tensor::uniform(rows, cols, 0.8, rng)
}

impl ModelParams<Tensor> {
    pub fn init(config: &TrainingConfig, vocab_size: usize, rng: &mut Rng) -> Self {
        let inter_in = config.inter_input_width();
        let emb_bound = 1.0 / (config.d_emb as f64).sqrt();
        ModelParams {
            gps: GpsEncoderParams {
                intra: init_bigru(GPS_FEATURES, config.d_intra, rng),
                inter: init_bigru(inter_in, config.d_inter, rng),
                mask_vector: Tensor::uniform(1, inter_in, 1.0 / (inter_in as f64).sqrt(), rng),
            },
            route: RouteEncoderParams {
                road_embedding: init_embedding(vocab_size + 1, config.d_emb, rng),
                gat_weight: Tensor::uniform(config.d_emb, config.d_emb, emb_bound, rng),
                gat_attn_src: Tensor::uniform(config.d_emb, 1, emb_bound, rng),
                gat_attn_dst: Tensor::uniform(config.d_emb, 1, emb_bound, rng),
                minute_embedding: init_embedding(1440, config.d_emb, rng),
                weekday_embedding: init_embedding(7, config.d_emb, rng),
                interval_net: init_linear(INTERVAL_BUCKETS, 1, 1.0, rng),
                interval_buckets: init_embedding(INTERVAL_BUCKETS, config.d_emb, rng),
                pre_ffn: init_linear(config.d_rep, config.d_emb, emb_bound, rng),
                transformer: init_transformer(config.d_rep, config.l1_layers, rng),
            },
            interactor: InteractorParams {
                mode_embedding: init_embedding(2, config.d_model, rng),
                position_embedding: init_embedding(config.max_route_len + 1, config.d_model, rng),
                input_ffn: init_linear(
                    config.d_model,
                    config.d_model,
                    1.0 / (config.d_model as f64).sqrt(),
                    rng,
                ),
                transformer: init_transformer(config.d_model, config.l2_layers, rng),
            },
            heads: SslHeads {
                gps_cls: init_linear(
                    vocab_size,
                    config.d_model,
                    1.0 / (config.d_model as f64).sqrt(),
                    rng,
                ),
                route_cls: init_linear(
                    vocab_size,
                    config.d_model,
                    1.0 / (config.d_model as f64).sqrt(),
                    rng,
                ),
                proj_gps: init_linear(
                    config.d_proj,
                    config.d_model,
                    1.0 / (config.d_model as f64).sqrt(),
                    rng,
                ),
                proj_route: init_linear(
                    config.d_proj,
                    config.d_model,
                    1.0 / (config.d_model as f64).sqrt(),
                    rng,
                ),
                pair_cls: init_linear(
                    1,
                    2 * config.d_proj,
                    1.0 / (2.0 * config.d_proj as f64).sqrt(),
                    rng,
                ),
            },
        }
    }

    /// Leaf every table onto a fresh tape.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |t: &Tensor| tape.leaf(t.clone()))
    }
}

/// All learnable state plus the config it was built with.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: TrainingConfig,
    pub vocab_size: usize,
    pub step: u64,
    pub params: ModelParams<Tensor>,
}

impl ModelState {
    pub fn init(config: TrainingConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_stream(config.seed, 0x5eed_1a17);
        let params = ModelParams::init(&config, vocab_size, &mut rng);
        Ok(ModelState {
            config,
            vocab_size,
            step: 0,
            params,
        })
    }

    /// FNV-1a over every table's bytes; used by the frozen-backbone checks.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        };
        for (name, t) in self.params.flatten() {
            eat(name.as_bytes());
            for v in t.data() {
                eat(&v.to_le_bytes());
            }
        }
        eat(&self.step.to_le_bytes());
        h
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config)?;
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.vocab_size as u64).to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        let tables = self.params.flatten();
        out.extend_from_slice(&(tables.len() as u32).to_le_bytes());
        for (name, t) in tables {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::CorruptFile("bad magic header".to_string()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let cfg_len = cur.u32()? as usize;
        let cfg_bytes = cur.take(cfg_len)?;
        let config: TrainingConfig = serde_json::from_slice(cfg_bytes)
            .map_err(|e| Error::CorruptFile(format!("config block: {e}")))?;
        config
            .validate()
            .map_err(|e| Error::CorruptFile(format!("config block: {e}")))?;
        let vocab_size = cur.u64()? as usize;
        let step = cur.u64()?;
        let count = cur.u32()? as usize;
        let mut state = ModelState::init(config, vocab_size)?;
        state.step = step;
        let mut tables = state.params.flatten_mut();
        if tables.len() != count {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint holds {count} tables, architecture expects {}",
                tables.len()
            )));
        }
        for (name, tensor) in tables.iter_mut() {
            let name_len = cur.u32()? as usize;
            let got = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| Error::CorruptFile("non-utf8 table name".to_string()))?;
            if got != name {
                return Err(Error::ConfigMismatch(format!(
                    "table order mismatch: found {got}, expected {name}"
                )));
            }
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            if (rows, cols) != tensor.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "table {name} is {rows}x{cols}, architecture expects {}x{}",
                    tensor.shape().0,
                    tensor.shape().1
                )));
            }
            let data = tensor.data_mut();
            for v in data.iter_mut() {
                *v = cur.f64()?;
            }
        }
        if cur.pos != bytes.len() {
            return Err(Error::CorruptFile(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        Ok(state)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(&path, self.to_bytes()?).map_err(|e| Error::io(&path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Reject checkpoints whose architecture differs from `expected`.
    pub fn validate_against(&self, expected: &TrainingConfig) -> Result<()> {
        for ((key, a), (_, b)) in self
            .config
            .architecture_key()
            .iter()
            .zip(expected.architecture_key().iter())
        {
            if a != b {
                return Err(Error::ConfigMismatch(format!(
                    "{key}: checkpoint has {a}, expected {b}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) fn zero_gru(input: usize, hidden: usize) -> GruDir<Tensor> {
    let zl = |out: usize, inw: usize| Linear {
        weight: Tensor::zeros(out, inw),
        bias: Tensor::zeros(1, out),
    };
    GruDir {
        rx: zl(hidden, input),
        rh: zl(hidden, hidden),
        zx: zl(hidden, input),
        zh: zl(hidden, hidden),
        nx: zl(hidden, input),
        nh: zl(hidden, hidden),
    }
}

#[cfg(test)]
pub(crate) fn random_gru_for_tests(input: usize, hidden: usize, rng: &mut Rng) -> GruDir<Tensor> {
    init_gru(input, hidden, rng)
}

#[cfg(test)]
pub(crate) fn init_transformer_for_tests(
    width: usize,
    layers: usize,
    rng: &mut Rng,
) -> Transformer<Tensor> {
    init_transformer(width, layers, rng)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptFile("unexpected end of file".to_string()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
