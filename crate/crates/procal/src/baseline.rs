//! Baseline calibrators: temperature scaling (continuous) and the two
//! binning-style methods, histogram binning and isotonic regression
//! (discrete). Both discrete methods share the piecewise-constant
//! [`MonotoneMap`] representation.

use serde::{Deserialize, Serialize};

use crate::binning::equal_mass_bins;
use crate::dataset::softmax_confidence;
use crate::error::{Error, Result};

pub const TEMP_MIN: f64 = 0.05;
pub const TEMP_MAX: f64 = 20.0;
const LOG_T_TOL: f64 = 1e-4;

/// Temperature scaling: divide logits by `t` before the softmax.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "temperature")]
pub struct TemperatureModel {
    #[serde(rename = "T")]
    pub t: f64,
    /// Set when the fit input was degenerate and `t` fell back to 1.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Histogram,
    Isotonic,
}

/// Piecewise-constant confidence map. `breaks` are strictly ascending;
/// a query equal to a breakpoint falls into the higher interval
/// (right-closed convention), so interval `i` covers
/// `breaks[i-1] <= x < breaks[i]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "monotone")]
pub struct MonotoneMap {
    pub sub: MapKind,
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
}

fn mean_nll(logits: &[f64], num_classes: usize, true_label: &[usize], t: f64) -> f64 {
    let n = true_label.len();
    let mut total = 0.0;
    for i in 0..n {
        let row = &logits[i * num_classes..(i + 1) * num_classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &z in row {
            denom += ((z - max) / t).exp();
        }
        total -= (row[true_label[i]] - max) / t - denom.ln();
    }
    total / n as f64
}

/// Fit `T` by golden-section search on `ln T` over `[ln 0.05, ln 20]`
/// minimizing mean negative log-likelihood at the true labels. Degenerate
/// input (all rows identical, or no spread within any row) returns `T = 1`
/// with the `degenerate` flag set.
pub fn fit_temperature(
    logits: &[f64],
    num_classes: usize,
    true_label: &[usize],
) -> Result<TemperatureModel> {
    let n = true_label.len();
    if n < 10 {
        return Err(Error::InsufficientSamples {
            context: "temperature fit".into(),
            needed: 10,
            got: n,
        });
    }
    if logits.len() != n * num_classes {
        return Err(Error::DimensionMismatch {
            expected: n * num_classes,
            got: logits.len(),
        });
    }
    if let Some(&bad) = true_label.iter().find(|&&l| l >= num_classes) {
        return Err(Error::LabelOutOfRange(format!(
            "true_label {} (C={})",
            bad, num_classes
        )));
    }

    let first = &logits[..num_classes];
    let all_rows_identical = logits.chunks_exact(num_classes).all(|r| r == first);
    let no_row_spread = logits.chunks_exact(num_classes).all(|r| {
        let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi == lo
    });
    if all_rows_identical || no_row_spread {
        log::warn!("temperature fit: degenerate logits, falling back to T=1");
        return Ok(TemperatureModel {
            t: 1.0,
            degenerate: true,
        });
    }

    let f = |u: f64| mean_nll(logits, num_classes, true_label, u.exp());
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = TEMP_MIN.ln();
    let mut b = TEMP_MAX.ln();
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > LOG_T_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    let t = ((a + b) / 2.0).exp();
    // The search is only guaranteed near-optimal for unimodal objectives;
    // never return something worse than the identity temperature.
    let t = if mean_nll(logits, num_classes, true_label, t)
        <= mean_nll(logits, num_classes, true_label, 1.0)
    {
        t
    } else {
        1.0
    };
    Ok(TemperatureModel {
        t,
        degenerate: false,
    })
}

/// Softmax of `logits / T`: returns (argmax, max probability). The argmax is
/// identical to the uncalibrated one since dividing by a positive constant
/// preserves order.
pub fn apply_temperature(model: &TemperatureModel, logits: &[f64]) -> Result<(usize, f64)> {
    let scaled: Vec<f64> = logits.iter().map(|z| z / model.t).collect();
    softmax_confidence(&scaled)
}

/// Histogram binning: `b` equal-mass confidence bins, each mapping to its
/// empirical accuracy.
pub fn fit_histogram_binning(conf: &[f64], correct: &[bool], b: usize) -> Result<MonotoneMap> {
    let n = conf.len();
    if b < 1 {
        return Err(Error::InvalidParameter("bin count must be >= 1".into()));
    }
    if n < b {
        return Err(Error::InsufficientSamples {
            context: "histogram binning".into(),
            needed: b,
            got: n,
        });
    }
    if correct.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: correct.len(),
        });
    }
    let bins = equal_mass_bins(conf, b);
    let mut bin_min = vec![f64::INFINITY; b];
    for i in 0..n {
        bin_min[bins[i]] = bin_min[bins[i]].min(conf[i]);
    }
    // Breakpoints are the lower edges of bins 1..b, deduplicated so they
    // stay strictly ascending under heavy ties.
    let mut breaks: Vec<f64> = Vec::with_capacity(b - 1);
    for &m in &bin_min[1..] {
        if breaks.last().map_or(true, |&last| m > last) {
            breaks.push(m);
        }
    }
    // Re-assign fit samples through the same lookup apply_monotone uses, so
    // fit-set accuracy and applied values agree even when ties straddled a
    // quantile edge.
    let k = breaks.len() + 1;
    let mut count = vec![0usize; k];
    let mut hits = vec![0usize; k];
    for i in 0..n {
        let idx = breaks.partition_point(|&e| e <= conf[i]);
        count[idx] += 1;
        hits[idx] += usize::from(correct[i]);
    }
    let global_acc =
        correct.iter().filter(|&&c| c).count() as f64 / n as f64;
    let values: Vec<f64> = (0..k)
        .map(|i| {
            if count[i] == 0 {
                global_acc
            } else {
                hits[i] as f64 / count[i] as f64
            }
        })
        .collect();
    Ok(MonotoneMap {
        sub: MapKind::Histogram,
        breaks,
        values,
    })
}

/// Isotonic regression by pool-adjacent-violators: the non-decreasing map
/// minimizing squared error against the 0/1 correctness targets. Equal
/// confidences are pre-aggregated into one weighted point, so the solution
/// is a function of confidence and the breakpoints are strictly ascending.
pub fn fit_isotonic(conf: &[f64], correct: &[bool]) -> Result<MonotoneMap> {
    let n = conf.len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            context: "isotonic regression".into(),
            needed: 2,
            got: n,
        });
    }
    if correct.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: correct.len(),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        conf[a]
            .partial_cmp(&conf[b])
            .expect("non-finite confidence")
            .then(a.cmp(&b))
    });
    // (x, target sum, weight) with distinct x.
    let mut points: Vec<(f64, f64, f64)> = Vec::new();
    for &i in &order {
        let y = f64::from(correct[i]);
        match points.last_mut() {
            Some(p) if p.0 == conf[i] => {
                p.1 += y;
                p.2 += 1.0;
            }
            _ => points.push((conf[i], y, 1.0)),
        }
    }
    // Pool stack: (min x, target sum, weight). Merging on >= keeps pool
    // means strictly increasing.
    let mut pools: Vec<(f64, f64, f64)> = Vec::with_capacity(points.len());
    for (x, s, w) in points {
        pools.push((x, s, w));
        while pools.len() >= 2 {
            let last = pools[pools.len() - 1];
            let prev = pools[pools.len() - 2];
            if prev.1 / prev.2 >= last.1 / last.2 {
                pools.pop();
                let top = pools.last_mut().unwrap();
                top.1 += last.1;
                top.2 += last.2;
            } else {
                break;
            }
        }
    }
    let breaks: Vec<f64> = pools[1..].iter().map(|p| p.0).collect();
    let values: Vec<f64> = pools.iter().map(|p| p.1 / p.2).collect();
    Ok(MonotoneMap {
        sub: MapKind::Isotonic,
        breaks,
        values,
    })
}

/// Piecewise-constant lookup; queries below the first breakpoint take the
/// first value, at or above the last take the last.
pub fn apply_monotone(map: &MonotoneMap, conf: f64) -> f64 {
    map.values[map.breaks.partition_point(|&e| e <= conf)]
}
