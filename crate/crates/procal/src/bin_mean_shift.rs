//! Bin-mean-shift calibration: nested quantile cells over (confidence,
//! proximity), each cell shifting its members by lambda times the cell's
//! accuracy-minus-mean-confidence gap.

use serde::{Deserialize, Serialize};

use crate::binning::equal_mass_edges;
use crate::error::{Error, Result};
use crate::exec::map_batch;

pub const DEFAULT_BMS_BINS: (usize, usize) = (10, 10);
pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinMeanShiftModel {
    /// M+1 ascending confidence quantile edges.
    pub conf_edges: Vec<f64>,
    /// Per confidence stripe, H+1 ascending proximity quantile edges.
    pub prox_edges: Vec<Vec<f64>>,
    /// Row-major M x H per-cell shifts (accuracy - mean confidence; 0 for
    /// empty cells).
    pub shift: Vec<f64>,
    pub lambda: f64,
}

impl BinMeanShiftModel {
    pub fn m(&self) -> usize {
        self.conf_edges.len() - 1
    }

    pub fn h(&self) -> usize {
        self.shift.len() / self.m()
    }

    /// Cell of a query. Interior edges define right-closed intervals, so
    /// out-of-range queries land in the nearest edge cell.
    pub fn cell(&self, conf: f64, prox: f64) -> (usize, usize) {
        let m = self.m();
        let i = self.conf_edges[1..m].partition_point(|&e| e <= conf);
        let h = self.h();
        let j = self.prox_edges[i][1..h].partition_point(|&e| e <= prox);
        (i, j)
    }
}

/// Fit per-cell shifts over M confidence stripes x H proximity cells,
/// using equal-mass quantile edges on the calibration data.
pub fn fit_bin_mean_shift(
    conf: &[f64],
    prox: &[f64],
    correct: &[bool],
    m: usize,
    h: usize,
    lambda: f64,
) -> Result<BinMeanShiftModel> {
    let n = conf.len();
    if m < 1 || h < 1 {
        return Err(Error::InvalidParameter("bin counts must be >= 1".into()));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda {} outside (0,1]",
            lambda
        )));
    }
    if prox.len() != n || correct.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: prox.len().min(correct.len()),
        });
    }
    if n < m * h {
        return Err(Error::InsufficientSamples {
            context: "bin mean shift".into(),
            needed: m * h,
            got: n,
        });
    }
    let conf_edges = equal_mass_edges(conf, m);
    // Stripe membership by the same interior-edge lookup used at apply
    // time, so fit statistics and application always agree.
    let mut stripes: Vec<Vec<usize>> = vec![Vec::new(); m];
    for i in 0..n {
        let s = conf_edges[1..m].partition_point(|&e| e <= conf[i]);
        stripes[s].push(i);
    }
    let mut prox_edges = Vec::with_capacity(m);
    let mut shift = vec![0.0; m * h];
    for (s, members) in stripes.iter().enumerate() {
        let edges = if members.len() >= h {
            let vals: Vec<f64> = members.iter().map(|&i| prox[i]).collect();
            equal_mass_edges(&vals, h)
        } else {
            // Degenerate stripe (possible only under extreme ties): one
            // catch-all proximity cell.
            vec![0.0; h + 1]
        };
        let mut count = vec![0usize; h];
        let mut conf_sum = vec![0.0; h];
        let mut hits = vec![0usize; h];
        for &i in members {
            let j = edges[1..h].partition_point(|&e| e <= prox[i]);
            count[j] += 1;
            conf_sum[j] += conf[i];
            hits[j] += usize::from(correct[i]);
        }
        for j in 0..h {
            if count[j] > 0 {
                shift[s * h + j] =
                    hits[j] as f64 / count[j] as f64 - conf_sum[j] / count[j] as f64;
            }
        }
        prox_edges.push(edges);
    }
    Ok(BinMeanShiftModel {
        conf_edges,
        prox_edges,
        shift,
        lambda,
    })
}

/// `clamp(conf + lambda * shift(cell), 0, 1)`.
pub fn apply_bin_mean_shift(model: &BinMeanShiftModel, conf: f64, prox: f64) -> f64 {
    let (i, j) = model.cell(conf, prox);
    (conf + model.lambda * model.shift[i * model.h() + j]).clamp(0.0, 1.0)
}

pub fn apply_bin_mean_shift_batch(
    model: &BinMeanShiftModel,
    conf: &[f64],
    prox: &[f64],
) -> Vec<f64> {
    map_batch(conf.len(), |i| apply_bin_mean_shift(model, conf[i], prox[i]))
}
