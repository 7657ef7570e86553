//! Command-line surface: synthetic data generation, pretraining, downstream
//! evaluation and embedding export.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use trajfuse::corpus::{generate_corpus, load_corpus, save_corpus, GenOptions};
use trajfuse::eval::detour::DetourConfig;
use trajfuse::eval::{
    eval_road_classification, eval_speed_inference, eval_topk_query, eval_travel_time,
    export_embeddings_csv, segment_mean_speeds, static_segment_reps,
};
use trajfuse::model::{ModelState, TrainingConfig};
use trajfuse::network::{build_grid_network, RoadNetwork};
use trajfuse::rng::Rng;
use trajfuse::train::pretrain_to_files;
use trajfuse::Result;

#[derive(Parser)]
#[command(
    name = "trajfuse",
    about = "Joint GPS/route trajectory representation learning on synthetic road networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic grid road network.
    GenNetwork {
        #[arg(long, default_value_t = 8)]
        rows: usize,
        #[arg(long, default_value_t = 8)]
        cols: usize,
        /// Grid spacing in meters.
        #[arg(long = "cell-m", default_value_t = 200.0)]
        cell_m: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate paired GPS/route trajectories over a network.
    GenTrajectories {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        min_segments: usize,
        #[arg(long, default_value_t = 20)]
        max_segments: usize,
        /// GPS sampling period in seconds.
        #[arg(long, default_value_t = 15.0)]
        sample_period: f64,
        /// GPS position noise sigma in meters.
        #[arg(long, default_value_t = 8.0)]
        gps_noise: f64,
        /// Start-of-day window bound for trip start times, seconds.
        #[arg(long, default_value_t = 0.0)]
        tod_from: f64,
        /// End-of-day window bound for trip start times, seconds.
        #[arg(long, default_value_t = 86400.0)]
        tod_to: f64,
    },
    /// Pretrain the model with the self-supervised objectives.
    Pretrain {
        /// JSON config file; missing keys fall back to defaults, unknown keys
        /// are rejected.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        network: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Loss log CSV path.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Execution is always serial and seeded; the flag is accepted for
        /// compatibility with reproducibility scripts.
        #[arg(long, default_value_t = true)]
        deterministic: bool,
    },
    /// Evaluate a checkpoint on one downstream task.
    Eval {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        network: PathBuf,
        /// Report CSV path (task,metric,value,fold_or_seed).
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Number of similarity queries (simquery task).
        #[arg(long, default_value_t = 200)]
        queries: usize,
    },
    /// Write fused and per-view representations for a corpus as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Export at most this many trajectories.
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    RoadCls,
    Speed,
    Tte,
    Simquery,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn write_file(path: &PathBuf, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| trajfuse::Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenNetwork {
            rows,
            cols,
            cell_m,
            seed,
            out,
        } => {
            let net = build_grid_network(rows, cols, cell_m, seed)?;
            net.save_json(&out)?;
            println!(
                "wrote {} segments, {} edges to {}",
                net.num_segments(),
                net.edges().len(),
                out.display()
            );
            Ok(())
        }
        Command::GenTrajectories {
            network,
            count,
            seed,
            out,
            min_segments,
            max_segments,
            sample_period,
            gps_noise,
            tod_from,
            tod_to,
        } => {
            let net = RoadNetwork::load_json(&network)?;
            let opts = GenOptions {
                min_segments,
                max_segments,
                sample_period_s: sample_period,
                gps_noise_m: gps_noise,
                tod_window_s: (tod_from, tod_to),
                ..GenOptions::default()
            };
            let pairs = generate_corpus(&net, count, seed, &opts)?;
            save_corpus(&out, &pairs)?;
            println!("wrote {} trajectory pairs to {}", pairs.len(), out.display());
            Ok(())
        }
        Command::Pretrain {
            config,
            corpus,
            network,
            out,
            log,
            deterministic: _,
        } => {
            let cfg = match config {
                Some(path) => {
                    let text =
                        fs::read_to_string(&path).map_err(|e| trajfuse::Error::io(&path, e))?;
                    TrainingConfig::from_json_str(&text)?
                }
                None => TrainingConfig::default(),
            };
            let net = RoadNetwork::load_json(&network)?;
            let pairs = load_corpus(&corpus)?;
            let (state, report) = pretrain_to_files(cfg, &net, &pairs, Some(&out), log.as_deref())?;
            let last = report.losses.last();
            println!(
                "trained {} steps; final total loss {}",
                state.step,
                last.map(|l| l.total).unwrap_or(f64::NAN)
            );
            println!("checkpoint written to {}", out.display());
            Ok(())
        }
        Command::Eval {
            task,
            checkpoint,
            corpus,
            network,
            report,
            seed,
            folds,
            queries,
        } => {
            let state = ModelState::load_checkpoint(&checkpoint)?;
            let net = RoadNetwork::load_json(&network)?;
            let pairs = load_corpus(&corpus)?;
            let mut rows = Vec::new();
            match task {
                Task::RoadCls => {
                    let reps = static_segment_reps(&state, &net, &pairs)?;
                    let labels: Vec<usize> = reps
                        .iter()
                        .map(|r| net.segment(r.road_id).map(|s| s.road_class.index()))
                        .collect::<Result<_>>()?;
                    let (mi, ma) = eval_road_classification(&reps, &labels, 4, folds, seed)?;
                    rows.push(format!("road-cls,micro_f1,{mi},mean"));
                    rows.push(format!("road-cls,macro_f1,{ma},mean"));
                }
                Task::Speed => {
                    let reps = static_segment_reps(&state, &net, &pairs)?;
                    let speeds_by_road = segment_mean_speeds(&net, &pairs)?;
                    let mut speeds = Vec::new();
                    let mut kept = Vec::new();
                    for r in reps {
                        if let Some(s) = speeds_by_road[r.road_id] {
                            speeds.push(s);
                            kept.push(r);
                        }
                    }
                    let eval = eval_speed_inference(&kept, &speeds, folds, seed)?;
                    rows.push(format!("speed,mae,{},mean", eval.mae));
                    rows.push(format!("speed,rmse,{},mean", eval.rmse));
                    rows.push(format!("speed,baseline_mae,{},mean", eval.baseline_mae));
                    rows.push(format!("speed,baseline_rmse,{},mean", eval.baseline_rmse));
                }
                Task::Tte => {
                    let eval = eval_travel_time(&state, &net, &pairs, folds, seed)?;
                    rows.push(format!("tte,mae,{},mean", eval.mae));
                    rows.push(format!("tte,rmse,{},mean", eval.rmse));
                    rows.push(format!("tte,baseline_mae,{},mean", eval.baseline_mae));
                    rows.push(format!("tte,baseline_rmse,{},mean", eval.baseline_rmse));
                }
                Task::Simquery => {
                    let mut rng = Rng::seed_stream(seed, 0x51e4);
                    let mut idx: Vec<usize> = (0..pairs.len()).collect();
                    rng.shuffle(&mut idx);
                    idx.truncate(queries.min(pairs.len()));
                    let (metrics, skipped) = eval_topk_query(
                        &state,
                        &net,
                        &pairs,
                        &idx,
                        &DetourConfig::default(),
                        seed,
                        10,
                    )?;
                    rows.push(format!("simquery,mean_rank,{},seed{seed}", metrics.mean_rank));
                    rows.push(format!("simquery,hr_at_10,{},seed{seed}", metrics.hr_at_10));
                    rows.push(format!("simquery,no_hit,{},seed{seed}", metrics.no_hit));
                    rows.push(format!("simquery,queries,{},seed{seed}", metrics.queries));
                    rows.push(format!("simquery,skipped,{skipped},seed{seed}"));
                }
            }
            let mut body = String::from("task,metric,value,fold_or_seed\n");
            for r in &rows {
                body.push_str(r);
                body.push('\n');
                println!("{r}");
            }
            write_file(&report, &body)?;
            Ok(())
        }
        Command::ExportEmbeddings {
            checkpoint,
            corpus,
            network,
            out,
            limit,
        } => {
            let state = ModelState::load_checkpoint(&checkpoint)?;
            let net = RoadNetwork::load_json(&network)?;
            let pairs = load_corpus(&corpus)?;
            let csv = export_embeddings_csv(&state, &net, &pairs, limit)?;
            write_file(&out, &csv)?;
            println!(
                "wrote embeddings for {} trajectories to {}",
                limit.unwrap_or(pairs.len()).min(pairs.len()),
                out.display()
            );
            Ok(())
        }
    }
}
