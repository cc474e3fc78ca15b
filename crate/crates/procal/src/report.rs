//! Run orchestration shared by the CLI and the integration tests: load
//! inputs, compute proximity, fit/apply calibration pipelines, and emit a
//! versioned JSON report plus reliability bin tables in CSV.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bias::{bias_test, BiasTestResult, DEFAULT_GROUPS, DEFAULT_MAX_DIFF, DEFAULT_N_DRAW};
use crate::bin_mean_shift::{DEFAULT_BMS_BINS, DEFAULT_LAMBDA};
use crate::dataset::{
    load_embeddings, load_prediction_table, split_dataset, write_embeddings_binary,
    write_prediction_table, EmbeddingMatrix, PredictionSet, SplitSpec,
};
use crate::density_ratio::DensityRatioOptions;
use crate::error::{Error, Result};
use crate::metrics::{
    ace, brier, ece, mce, piece, reliability_table, BinScheme, BinTable, EvalTriples,
    DEFAULT_BINS, DEFAULT_PROX_BINS,
};
use crate::pipeline::{fit_pipeline, BaseMethod, Pipeline, PipelineOptions, ProcalStage};
use crate::proximity::{Metric, ProximityIndex};
use crate::synth::{generate, SynthKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub preds: PathBuf,
    pub embs: Option<PathBuf>,
    pub ref_embs: Option<PathBuf>,
    pub method: BaseMethod,
    pub procal: ProcalStage,
    pub k: usize,
    pub distance: Metric,
    /// Restrict `evaluate` to one metric name; `None` computes everything
    /// the inputs allow.
    pub metric: Option<String>,
    pub metric_bins: usize,
    pub piece_bins: (usize, usize),
    pub bms_bins: (usize, usize),
    pub lambda: f64,
    pub groups: usize,
    pub n_draw: usize,
    pub max_diff: f64,
    pub split: f64,
    pub seed: u64,
    pub dr_max_fit_points: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new<P: Into<PathBuf>>(preds: P) -> Self {
        RunConfig {
            preds: preds.into(),
            embs: None,
            ref_embs: None,
            method: BaseMethod::Conf,
            procal: ProcalStage::None,
            k: 10,
            distance: Metric::Euclidean,
            metric: None,
            metric_bins: DEFAULT_BINS,
            piece_bins: (DEFAULT_BINS, DEFAULT_PROX_BINS),
            bms_bins: DEFAULT_BMS_BINS,
            lambda: DEFAULT_LAMBDA,
            groups: DEFAULT_GROUPS,
            n_draw: DEFAULT_N_DRAW,
            max_diff: DEFAULT_MAX_DIFF,
            split: 0.5,
            seed: 0,
            dr_max_fit_points: DensityRatioOptions::default().max_fit_points,
            out: None,
        }
    }

    fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            hb_bins: self.metric_bins,
            bms_bins: self.bms_bins,
            lambda: self.lambda,
            dr: DensityRatioOptions {
                max_fit_points: self.dr_max_fit_points,
                seed: self.seed,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub ece: f64,
    pub ace: f64,
    pub mce: f64,
    pub brier: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub piece: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub config: serde_json::Value,
    pub methods: Vec<MethodReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<BiasTestResult>,
    /// Method name -> bin-table CSV path, when an output path was set.
    pub bin_tables: BTreeMap<String, String>,
    /// Wall-clock phase timings; excluded from determinism comparisons.
    pub timings_ms: BTreeMap<String, f64>,
}

impl Report {
    fn new(cfg: &RunConfig) -> Result<Report> {
        Ok(Report {
            schema_version: SCHEMA_VERSION,
            config: serde_json::to_value(cfg)?,
            methods: Vec::new(),
            bias: None,
            bin_tables: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
        })
    }

    /// Serialize with timings stripped, for determinism comparisons.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut clone = self.clone();
        clone.timings_ms.clear();
        Ok(serde_json::to_string_pretty(&clone)?)
    }

    pub fn write<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Compute the full metric block plus the reliability tables backing it.
pub fn metric_block(
    conf: &[f64],
    correct: &[bool],
    prox: Option<&[f64]>,
    metric_bins: usize,
    piece_bins: (usize, usize),
) -> Result<(Metrics, Vec<BinTable>)> {
    let t = EvalTriples::new(conf.to_vec(), correct.to_vec(), prox.map(|p| p.to_vec()))?;
    let mut tables = vec![
        reliability_table(&t, BinScheme::EqualWidth, metric_bins, None)?,
        reliability_table(&t, BinScheme::EqualMass, metric_bins, None)?,
    ];
    let piece_value = if prox.is_some() {
        tables.push(reliability_table(
            &t,
            BinScheme::ConfProximity,
            piece_bins.0,
            Some(piece_bins.1),
        )?);
        Some(piece(&t, piece_bins.0, piece_bins.1)?)
    } else {
        None
    };
    Ok((
        Metrics {
            ece: ece(&t, metric_bins)?,
            ace: ace(&t, metric_bins)?,
            mce: mce(&t, metric_bins)?,
            brier: brier(&t)?,
            piece: piece_value,
        },
        tables,
    ))
}

fn write_tables(
    report: &mut Report,
    cfg: &RunConfig,
    name: &str,
    tables: &[BinTable],
) -> Result<()> {
    let Some(out) = &cfg.out else { return Ok(()) };
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report");
    let path = out.with_file_name(format!("{}.{}.bins.csv", stem, name));
    let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    use std::io::Write;
    writeln!(
        file,
        "scheme,bin_lo,bin_hi,prox_lo,prox_hi,count,mean_conf,accuracy,gap"
    )?;
    drop(file);
    // Re-open per table appending rows under the single shared header.
    let mut rows = String::new();
    for table in tables {
        let tmp = out.with_file_name(format!("{}.{}.tmp.csv", stem, name));
        table.write_csv(&tmp)?;
        let content = std::fs::read_to_string(&tmp)?;
        std::fs::remove_file(&tmp)?;
        rows.push_str(content.split_once('\n').map(|(_, r)| r).unwrap_or(""));
    }
    let header = "scheme,bin_lo,bin_hi,prox_lo,prox_hi,count,mean_conf,accuracy,gap\n";
    std::fs::write(&path, format!("{}{}", header, rows))?;
    report
        .bin_tables
        .insert(name.to_string(), path.display().to_string());
    Ok(())
}

fn load_proximity(
    cfg: &RunConfig,
    embs: &EmbeddingMatrix,
    index: &ProximityIndex,
) -> Result<Vec<f64>> {
    // Ids shared between query and reference sets are excluded from their
    // own neighbor lists; disjoint ids are unaffected.
    index.batch_proximity(embs, cfg.k, true)
}

struct LoadedInputs {
    preds: PredictionSet,
    embs: Option<EmbeddingMatrix>,
    index: Option<ProximityIndex>,
}

fn load_inputs(cfg: &RunConfig, need_embeddings: bool) -> Result<LoadedInputs> {
    let preds = load_prediction_table(&cfg.preds)?;
    let embs = cfg.embs.as_deref().map(load_embeddings).transpose()?;
    let index = cfg
        .ref_embs
        .as_deref()
        .map(|p| -> Result<ProximityIndex> {
            ProximityIndex::build(load_embeddings(p)?, cfg.distance)
        })
        .transpose()?;
    if need_embeddings && (embs.is_none() || index.is_none()) {
        return Err(Error::MissingProximity(
            "this subcommand needs --embs and --ref-embs".into(),
        ));
    }
    if let Some(e) = &embs {
        if e.sample_id != preds.sample_id {
            return Err(Error::MisalignedIds);
        }
    }
    Ok(LoadedInputs { preds, embs, index })
}

/// Metrics of the raw confidences, plus reliability tables.
pub fn run_evaluate(cfg: &RunConfig) -> Result<Report> {
    let mut report = Report::new(cfg)?;
    let t0 = Instant::now();
    let inputs = load_inputs(cfg, false)?;
    report
        .timings_ms
        .insert("load".into(), t0.elapsed().as_secs_f64() * 1e3);

    let wants_piece = cfg.metric.as_deref() == Some("piece");
    let have_embeddings = inputs.embs.is_some() && inputs.index.is_some();
    if wants_piece && !have_embeddings {
        return Err(Error::MissingProximity(
            "--metric piece needs --embs and --ref-embs".into(),
        ));
    }
    let t1 = Instant::now();
    let prox = if have_embeddings {
        Some(load_proximity(
            cfg,
            inputs.embs.as_ref().unwrap(),
            inputs.index.as_ref().unwrap(),
        )?)
    } else {
        None
    };
    report
        .timings_ms
        .insert("proximity".into(), t1.elapsed().as_secs_f64() * 1e3);

    let t2 = Instant::now();
    let correct = inputs.preds.correct();
    let (metrics, tables) = metric_block(
        &inputs.preds.confidence,
        &correct,
        prox.as_deref(),
        cfg.metric_bins,
        cfg.piece_bins,
    )?;
    report
        .timings_ms
        .insert("metrics".into(), t2.elapsed().as_secs_f64() * 1e3);
    write_tables(&mut report, cfg, "conf", &tables)?;
    report.methods.push(MethodReport {
        name: "conf".into(),
        metrics,
    });
    Ok(report)
}

/// Fit the configured pipeline on the calibration split, evaluate base and
/// composed variants side by side on the evaluation split.
pub fn run_calibrate(cfg: &RunConfig) -> Result<(Report, Pipeline)> {
    let mut report = Report::new(cfg)?;
    let t0 = Instant::now();
    let inputs = load_inputs(cfg, true)?;
    report
        .timings_ms
        .insert("load".into(), t0.elapsed().as_secs_f64() * 1e3);

    let spec = SplitSpec::new(cfg.split, cfg.seed)?;
    let ((cal, cal_embs), (eval, eval_embs)) =
        split_dataset(&inputs.preds, inputs.embs.as_ref(), spec)?;
    let index = inputs.index.as_ref().unwrap();

    let t1 = Instant::now();
    let cal_prox = load_proximity(cfg, cal_embs.as_ref().unwrap(), index)?;
    let eval_prox = load_proximity(cfg, eval_embs.as_ref().unwrap(), index)?;
    report
        .timings_ms
        .insert("proximity".into(), t1.elapsed().as_secs_f64() * 1e3);

    let t2 = Instant::now();
    let pipeline = fit_pipeline(&cal, &cal_prox, cfg.method, cfg.procal, &cfg.pipeline_options())?;
    report
        .timings_ms
        .insert("fit".into(), t2.elapsed().as_secs_f64() * 1e3);

    let t3 = Instant::now();
    let correct = eval.correct();
    let base_conf = pipeline.apply_base_only(&eval)?;
    let (base_metrics, base_tables) = metric_block(
        &base_conf,
        &correct,
        Some(&eval_prox),
        cfg.metric_bins,
        cfg.piece_bins,
    )?;
    write_tables(&mut report, cfg, cfg.method.as_str(), &base_tables)?;
    report.methods.push(MethodReport {
        name: cfg.method.as_str().into(),
        metrics: base_metrics,
    });
    if cfg.procal != ProcalStage::None {
        let full_conf = pipeline.apply(&eval, &eval_prox)?;
        let (full_metrics, full_tables) = metric_block(
            &full_conf,
            &correct,
            Some(&eval_prox),
            cfg.metric_bins,
            cfg.piece_bins,
        )?;
        let name = pipeline.name();
        write_tables(&mut report, cfg, &name, &full_tables)?;
        report.methods.push(MethodReport {
            name,
            metrics: full_metrics,
        });
    }
    report
        .timings_ms
        .insert("apply".into(), t3.elapsed().as_secs_f64() * 1e3);
    Ok((report, pipeline))
}

/// Proximity-bias hypothesis test on the raw predictions.
pub fn run_bias_test(cfg: &RunConfig) -> Result<Report> {
    let mut report = Report::new(cfg)?;
    let t0 = Instant::now();
    let inputs = load_inputs(cfg, true)?;
    let prox = load_proximity(
        cfg,
        inputs.embs.as_ref().unwrap(),
        inputs.index.as_ref().unwrap(),
    )?;
    report
        .timings_ms
        .insert("load".into(), t0.elapsed().as_secs_f64() * 1e3);
    let t1 = Instant::now();
    report.bias = Some(bias_test(
        &inputs.preds,
        &prox,
        cfg.groups,
        cfg.n_draw,
        cfg.max_diff,
        cfg.seed,
    )?);
    report
        .timings_ms
        .insert("bias-test".into(), t1.elapsed().as_secs_f64() * 1e3);
    Ok(report)
}

/// Write a synthetic dataset (predictions + evaluation embeddings +
/// reference embeddings) into `out_dir`; returns the three paths.
pub fn run_synth(
    kind: SynthKind,
    n: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf, PathBuf)> {
    let data = generate(kind, n, seed)?;
    std::fs::create_dir_all(out_dir)?;
    let preds_path = out_dir.join("preds.csv");
    let embs_path = out_dir.join("embs.bin");
    let ref_path = out_dir.join("ref_embs.bin");
    write_prediction_table(&preds_path, &data.preds)?;
    write_embeddings_binary(&embs_path, &data.embs)?;
    write_embeddings_binary(&ref_path, &data.ref_embs)?;
    Ok((preds_path, embs_path, ref_path))
}
