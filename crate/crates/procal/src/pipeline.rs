//! Composition of a base calibrator with an optional proximity-aware
//! stage. The base is fitted on the calibration split first; the stage is
//! then fitted on the base-calibrated calibration confidences, so it learns
//! the residual miscalibration the base leaves behind.

use serde::{Deserialize, Serialize};

use crate::baseline::{
    apply_monotone, apply_temperature, fit_histogram_binning, fit_isotonic, fit_temperature,
    MonotoneMap, TemperatureModel,
};
use crate::bin_mean_shift::{
    apply_bin_mean_shift_batch, fit_bin_mean_shift, BinMeanShiftModel, DEFAULT_BMS_BINS,
    DEFAULT_LAMBDA,
};
use crate::dataset::PredictionSet;
use crate::density_ratio::{
    apply_density_ratio_batch, fit_density_ratio, DensityRatioModel, DensityRatioOptions,
};
use crate::error::{Error, Result};
use crate::exec::map_batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseMethod {
    /// Identity: raw model confidence.
    Conf,
    Ts,
    Hb,
    Ir,
}

impl BaseMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            BaseMethod::Conf => "conf",
            BaseMethod::Ts => "ts",
            BaseMethod::Hb => "hb",
            BaseMethod::Ir => "ir",
        }
    }

    /// Continuous methods output confidences on a continuum; discrete
    /// methods output finitely many values.
    pub fn is_continuous(&self) -> bool {
        matches!(self, BaseMethod::Conf | BaseMethod::Ts)
    }
}

impl std::str::FromStr for BaseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conf" => Ok(BaseMethod::Conf),
            "ts" => Ok(BaseMethod::Ts),
            "hb" => Ok(BaseMethod::Hb),
            "ir" => Ok(BaseMethod::Ir),
            other => Err(Error::InvalidParameter(format!(
                "unknown method '{}' (expected conf|ts|hb|ir)",
                other
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProcalStage {
    None,
    DensityRatio,
    BinMeanShift,
}

impl ProcalStage {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProcalStage::None => "none",
            ProcalStage::DensityRatio => "density-ratio",
            ProcalStage::BinMeanShift => "bin-mean-shift",
        }
    }
}

impl std::str::FromStr for ProcalStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ProcalStage::None),
            "density-ratio" | "dr" => Ok(ProcalStage::DensityRatio),
            "bin-mean-shift" | "bms" => Ok(ProcalStage::BinMeanShift),
            other => Err(Error::InvalidParameter(format!(
                "unknown stage '{}' (expected none|density-ratio|bin-mean-shift)",
                other
            ))),
        }
    }
}

// Untagged: the inner models already carry distinguishing shapes (and the
// temperature/monotone models their own "kind" field); the unit variants
// serialize as null.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseModel {
    Temperature(TemperatureModel),
    Monotone(MonotoneMap),
    Identity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StageModel {
    DensityRatio(DensityRatioModel),
    BinMeanShift(BinMeanShiftModel),
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pipeline {
    pub method: BaseMethod,
    pub stage_kind: ProcalStage,
    pub base: BaseModel,
    pub stage: StageModel,
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineOptions {
    /// Histogram-binning bin count.
    pub hb_bins: usize,
    /// Bin-mean-shift (confidence, proximity) cell counts.
    pub bms_bins: (usize, usize),
    pub lambda: f64,
    pub dr: DensityRatioOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            hb_bins: 15,
            bms_bins: DEFAULT_BMS_BINS,
            lambda: DEFAULT_LAMBDA,
            dr: DensityRatioOptions::default(),
        }
    }
}

fn apply_base(base: &BaseModel, preds: &PredictionSet) -> Result<Vec<f64>> {
    match base {
        BaseModel::Identity => Ok(preds.confidence.clone()),
        BaseModel::Temperature(t) => {
            if preds.logits.is_none() {
                return Err(Error::InvalidParameter(
                    "temperature scaling requires logit columns".into(),
                ));
            }
            let results = map_batch(preds.len(), |i| {
                apply_temperature(t, preds.logits_row(i).unwrap()).map(|(_, c)| c)
            });
            results.into_iter().collect()
        }
        BaseModel::Monotone(m) => Ok(map_batch(preds.len(), |i| {
            apply_monotone(m, preds.confidence[i])
        })),
    }
}

/// Fit the base calibrator on the calibration split, then the requested
/// stage on the base-calibrated calibration outputs.
pub fn fit_pipeline(
    cal: &PredictionSet,
    cal_prox: &[f64],
    method: BaseMethod,
    stage_kind: ProcalStage,
    opts: &PipelineOptions,
) -> Result<Pipeline> {
    if stage_kind != ProcalStage::None && cal_prox.len() != cal.len() {
        return Err(Error::DimensionMismatch {
            expected: cal.len(),
            got: cal_prox.len(),
        });
    }
    match (method.is_continuous(), stage_kind) {
        (true, ProcalStage::BinMeanShift) => log::warn!(
            "bin-mean-shift over the continuous base '{}'; density-ratio is the intended stage",
            method.as_str()
        ),
        (false, ProcalStage::DensityRatio) => log::warn!(
            "density-ratio over the discrete base '{}'; bin-mean-shift is the intended stage",
            method.as_str()
        ),
        _ => {}
    }

    let correct = cal.correct();
    let base = match method {
        BaseMethod::Conf => BaseModel::Identity,
        BaseMethod::Ts => {
            let logits = cal.logits.as_ref().ok_or_else(|| {
                Error::InvalidParameter("temperature scaling requires logit columns".into())
            })?;
            BaseModel::Temperature(fit_temperature(logits, cal.num_classes, &cal.true_label)?)
        }
        BaseMethod::Hb => BaseModel::Monotone(fit_histogram_binning(
            &cal.confidence,
            &correct,
            opts.hb_bins,
        )?),
        BaseMethod::Ir => BaseModel::Monotone(fit_isotonic(&cal.confidence, &correct)?),
    };

    let stage = match stage_kind {
        ProcalStage::None => StageModel::None,
        ProcalStage::DensityRatio => {
            let base_conf = apply_base(&base, cal)?;
            StageModel::DensityRatio(fit_density_ratio(
                &base_conf, cal_prox, &correct, &opts.dr,
            )?)
        }
        ProcalStage::BinMeanShift => {
            let base_conf = apply_base(&base, cal)?;
            StageModel::BinMeanShift(fit_bin_mean_shift(
                &base_conf,
                cal_prox,
                &correct,
                opts.bms_bins.0,
                opts.bms_bins.1,
                opts.lambda,
            )?)
        }
    };
    Ok(Pipeline {
        method,
        stage_kind,
        base,
        stage,
    })
}

impl Pipeline {
    pub fn name(&self) -> String {
        match self.stage_kind {
            ProcalStage::None => self.method.as_str().to_string(),
            s => format!("{}+{}", self.method.as_str(), s.as_str()),
        }
    }

    /// Base-calibrated confidences only (the "+ours" stage skipped).
    pub fn apply_base_only(&self, preds: &PredictionSet) -> Result<Vec<f64>> {
        apply_base(&self.base, preds)
    }

    /// Full pipeline: base then stage. Predicted labels are unchanged by
    /// every method here.
    pub fn apply(&self, preds: &PredictionSet, prox: &[f64]) -> Result<Vec<f64>> {
        let base_conf = apply_base(&self.base, preds)?;
        match &self.stage {
            StageModel::None => Ok(base_conf),
            StageModel::DensityRatio(m) => {
                if prox.len() != preds.len() {
                    return Err(Error::MissingProximity(
                        "density-ratio stage needs per-sample proximity".into(),
                    ));
                }
                Ok(apply_density_ratio_batch(m, &base_conf, prox))
            }
            StageModel::BinMeanShift(m) => {
                if prox.len() != preds.len() {
                    return Err(Error::MissingProximity(
                        "bin-mean-shift stage needs per-sample proximity".into(),
                    ));
                }
                Ok(apply_bin_mean_shift_batch(m, &base_conf, prox))
            }
        }
    }
}
