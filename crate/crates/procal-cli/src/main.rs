//! `procal` command line: calibrate, evaluate, bias-test, and synth
//! subcommands over prediction-table CSVs and embedding files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use procal::pipeline::{BaseMethod, ProcalStage};
use procal::proximity::Metric;
use procal::report::{run_bias_test, run_calibrate, run_evaluate, run_synth, RunConfig};
use procal::synth::SynthKind;

#[derive(Parser)]
#[command(name = "procal", version, about = "Proximity-aware confidence calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InputArgs {
    /// Prediction table CSV: id,true_label,pred_label,confidence[,logit_0..]
    #[arg(long)]
    preds: PathBuf,
    /// Embeddings for the prediction rows (binary container or CSV)
    #[arg(long)]
    embs: Option<PathBuf>,
    /// Reference embeddings that proximity is measured against
    #[arg(long)]
    ref_embs: Option<PathBuf>,
    /// Neighbor count for proximity
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Distance metric: euclidean | cosine
    #[arg(long, default_value = "euclidean")]
    distance: String,
    /// Confidence bin count for ECE/ACE/MCE (and histogram binning)
    #[arg(long, default_value_t = 15)]
    metric_bins: usize,
    /// PIECE bin counts: confidence bins, proximity sub-bins
    #[arg(long, num_args = 2, value_names = ["M", "H"], default_values_t = [15, 10])]
    piece_bins: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON output path (bin tables are written next to it)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a calibration pipeline on one split, evaluate on the other
    Calibrate {
        #[command(flatten)]
        input: InputArgs,
        /// Base calibrator: conf | ts | hb | ir
        #[arg(long, default_value = "conf")]
        method: String,
        /// Proximity-aware stage: none | density-ratio | bin-mean-shift
        #[arg(long, default_value = "none")]
        procal: String,
        /// Bin-mean-shift cell counts: confidence, proximity
        #[arg(long, num_args = 2, value_names = ["M", "H"], default_values_t = [10, 10])]
        bms_bins: Vec<usize>,
        /// Bin-mean-shift shrinkage in (0,1]
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// Calibration split fraction in (0,1)
        #[arg(long, default_value_t = 0.5)]
        split: f64,
        /// Cap on KDE fit points per correctness partition (0 = no cap)
        #[arg(long, default_value_t = 5000)]
        dr_max_fit_points: usize,
        /// Also write the fitted model JSON here
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Metrics and reliability tables for raw confidences
    Evaluate {
        #[command(flatten)]
        input: InputArgs,
        /// Require a specific metric (currently: piece)
        #[arg(long)]
        metric: Option<String>,
    },
    /// Proximity-bias hypothesis test
    BiasTest {
        #[command(flatten)]
        input: InputArgs,
        /// Number of equal-mass proximity groups
        #[arg(long, default_value_t = 5)]
        groups: usize,
        /// Draws per matching direction
        #[arg(long, default_value_t = 10000)]
        n_draw: usize,
        /// Maximum confidence difference for a matched pair
        #[arg(long, default_value_t = 0.05)]
        max_diff: f64,
    },
    /// Write a synthetic dataset (preds.csv, embs.bin, ref_embs.bin)
    Synth {
        /// Generator: example1 | biased | unbiased | binary-brier
        kind: String,
        #[arg(long, default_value_t = 10000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
}

fn base_config(input: &InputArgs) -> procal::Result<RunConfig> {
    let mut cfg = RunConfig::new(&input.preds);
    cfg.embs = input.embs.clone();
    cfg.ref_embs = input.ref_embs.clone();
    cfg.k = input.k;
    cfg.distance = input.distance.parse::<Metric>()?;
    cfg.metric_bins = input.metric_bins;
    cfg.piece_bins = (input.piece_bins[0], input.piece_bins[1]);
    cfg.seed = input.seed;
    cfg.out = Some(input.out.clone());
    Ok(cfg)
}

fn run() -> procal::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Calibrate {
            input,
            method,
            procal,
            bms_bins,
            lambda,
            split,
            dr_max_fit_points,
            model_out,
        } => {
            let mut cfg = base_config(&input)?;
            cfg.method = method.parse::<BaseMethod>()?;
            cfg.procal = procal.parse::<ProcalStage>()?;
            cfg.bms_bins = (bms_bins[0], bms_bins[1]);
            cfg.lambda = lambda;
            cfg.split = split;
            cfg.dr_max_fit_points = if dr_max_fit_points == 0 {
                None
            } else {
                Some(dr_max_fit_points)
            };
            let (report, pipeline) = run_calibrate(&cfg)?;
            if let Some(path) = model_out {
                std::fs::write(path, serde_json::to_string_pretty(&pipeline)?)?;
            }
            report.write(&input.out)
        }
        Command::Evaluate { input, metric } => {
            let mut cfg = base_config(&input)?;
            cfg.metric = metric;
            run_evaluate(&cfg)?.write(&input.out)
        }
        Command::BiasTest {
            input,
            groups,
            n_draw,
            max_diff,
        } => {
            let mut cfg = base_config(&input)?;
            cfg.groups = groups;
            cfg.n_draw = n_draw;
            cfg.max_diff = max_diff;
            run_bias_test(&cfg)?.write(&input.out)
        }
        Command::Synth { kind, n, seed, out } => {
            let kind = kind.parse::<SynthKind>()?;
            run_synth(kind, n, seed, &out)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code().clamp(1, 255) as u8)
        }
    }
}
