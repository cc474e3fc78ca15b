//! Proximity-bias detection: quantile proximity groups, confidence-matched
//! pair construction between the extreme groups, the bias index (accuracy
//! drop between matched groups), and a tie-corrected Wilcoxon rank-sum test
//! on the matched correctness indicators.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::binning::equal_mass_bins;
use crate::dataset::PredictionSet;
use crate::error::{Error, Result};

pub const DEFAULT_GROUPS: usize = 5;
pub const DEFAULT_N_DRAW: usize = 10_000;
pub const DEFAULT_MAX_DIFF: f64 = 0.05;

/// Confidence-matched samples from the high/low proximity groups. Indices
/// refer to the input lists passed to [`confidence_match`].
#[derive(Debug, Clone)]
pub struct MatchedGroups {
    pub b_h: Vec<usize>,
    pub b_l: Vec<usize>,
    pub mean_conf_h: f64,
    pub mean_conf_l: f64,
    pub rejected_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasTestResult {
    pub bias_index: f64,
    pub z_statistic: f64,
    pub p_value: f64,
    pub n_matched: usize,
    pub acc_high: f64,
    pub acc_low: f64,
    pub mean_conf_high: f64,
    pub mean_conf_low: f64,
    pub rejected_count: usize,
    pub groups: usize,
    pub n_draw: usize,
    pub max_diff: f64,
    pub seed: u64,
}

/// Equal-mass proximity groups, ascending by proximity; group sizes differ
/// by at most 1, ties keep input order.
pub fn proximity_groups(prox: &[f64], g: usize) -> Result<Vec<usize>> {
    if g < 2 {
        return Err(Error::InvalidParameter("group count must be >= 2".into()));
    }
    if prox.len() < g {
        return Err(Error::InsufficientSamples {
            context: "proximity groups".into(),
            needed: g,
            got: prox.len(),
        });
    }
    Ok(equal_mass_bins(prox, g))
}

/// Nearest-confidence lookup table: (conf, original index) sorted by conf.
struct NearestTable {
    sorted: Vec<(f64, usize)>,
}

impl NearestTable {
    fn new(conf: &[f64]) -> Self {
        let mut sorted: Vec<(f64, usize)> = conf.iter().cloned().zip(0..).collect();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        NearestTable { sorted }
    }

    /// Index of a nearest-confidence entry, chosen uniformly at random
    /// among all equidistant candidates (heavily tied confidences would
    /// otherwise collapse every match onto one target sample).
    fn nearest(&self, c: f64, rng: &mut ChaCha12Rng) -> usize {
        let pos = self.sorted.partition_point(|&(v, _)| v < c);
        let left_v = pos.checked_sub(1).map(|i| self.sorted[i].0);
        let right_v = self.sorted.get(pos).map(|&(v, _)| v);
        let dl = left_v.map(|v| (v - c).abs());
        let dr = right_v.map(|v| (v - c).abs());
        let best = match (dl, dr) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => unreachable!("non-empty table"),
        };
        let run = |v: f64| {
            let start = self.sorted.partition_point(|&(x, _)| x < v);
            let end = self.sorted.partition_point(|&(x, _)| x <= v);
            (start, end)
        };
        let mut ranges: Vec<(usize, usize)> = Vec::new();
        if dl == Some(best) {
            ranges.push(run(left_v.unwrap()));
        }
        if dr == Some(best) && right_v != left_v {
            ranges.push(run(right_v.unwrap()));
        }
        let total: usize = ranges.iter().map(|r| r.1 - r.0).sum();
        let mut pick = rng.gen_range(0..total);
        for (start, end) in ranges {
            if pick < end - start {
                return self.sorted[start + pick].1;
            }
            pick -= end - start;
        }
        unreachable!()
    }
}

/// Bidirectional confidence matching: draw up to `n_draw` samples (without
/// replacement) from each side, pair each with its nearest-confidence
/// counterpart on the other side (with replacement), and drop pairs whose
/// confidences differ by more than `max_diff`.
pub fn confidence_match(
    high: &[(f64, bool)],
    low: &[(f64, bool)],
    n_draw: usize,
    max_diff: f64,
    seed: u64,
) -> Result<MatchedGroups> {
    if high.is_empty() || low.is_empty() {
        return Err(Error::InsufficientSamples {
            context: "confidence matching".into(),
            needed: 1,
            got: 0,
        });
    }
    if !(max_diff > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "max_diff {} must be positive",
            max_diff
        )));
    }
    let table_low = NearestTable::new(&low.iter().map(|p| p.0).collect::<Vec<f64>>());
    let table_high = NearestTable::new(&high.iter().map(|p| p.0).collect::<Vec<f64>>());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut b_h = Vec::new();
    let mut b_l = Vec::new();
    let mut rejected = 0usize;

    let draw = |source: &[(f64, bool)], rng: &mut ChaCha12Rng| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..source.len()).collect();
        idx.shuffle(rng);
        idx.truncate(n_draw.min(source.len()));
        idx
    };

    for i in draw(high, &mut rng) {
        let j = table_low.nearest(high[i].0, &mut rng);
        if (high[i].0 - low[j].0).abs() <= max_diff {
            b_h.push(i);
            b_l.push(j);
        } else {
            rejected += 1;
        }
    }
    for j in draw(low, &mut rng) {
        let i = table_high.nearest(low[j].0, &mut rng);
        if (high[i].0 - low[j].0).abs() <= max_diff {
            b_h.push(i);
            b_l.push(j);
        } else {
            rejected += 1;
        }
    }

    if b_h.is_empty() {
        return Err(Error::NoConfidenceOverlap);
    }
    let mean = |idx: &[usize], src: &[(f64, bool)]| {
        idx.iter().map(|&i| src[i].0).sum::<f64>() / idx.len() as f64
    };
    Ok(MatchedGroups {
        mean_conf_h: mean(&b_h, high),
        mean_conf_l: mean(&b_l, low),
        b_h,
        b_l,
        rejected_count: rejected,
    })
}

/// Two-sided Wilcoxon rank-sum (Mann-Whitney) test on binary samples:
/// midranks for ties, tie-corrected variance, continuity correction, normal
/// approximation. Returns (z, p).
pub fn wilcoxon_rank_sum(a: &[bool], b: &[bool]) -> Result<(f64, f64)> {
    let n1 = a.len();
    let n2 = b.len();
    if n1 < 10 || n2 < 10 {
        return Err(Error::InsufficientSamples {
            context: "rank-sum test".into(),
            needed: 10,
            got: n1.min(n2),
        });
    }
    let n = (n1 + n2) as f64;
    let zeros = (a.iter().chain(b).filter(|&&v| !v).count()) as f64;
    let ones = n - zeros;
    // Binary data has two tie groups; midranks are closed-form.
    let rank_zero = (zeros + 1.0) / 2.0;
    let rank_one = zeros + (ones + 1.0) / 2.0;
    let a_ones = a.iter().filter(|&&v| v).count() as f64;
    let w = a_ones * rank_one + (n1 as f64 - a_ones) * rank_zero;
    let mean = n1 as f64 * (n + 1.0) / 2.0;
    let tie_term = (zeros.powi(3) - zeros + ones.powi(3) - ones) / (n * (n - 1.0));
    let var = n1 as f64 * n2 as f64 / 12.0 * ((n + 1.0) - tie_term);
    if var <= 0.0 {
        // All values identical across both samples.
        return Ok((0.0, 1.0));
    }
    let diff = w - mean;
    let corrected = if diff > 0.0 {
        diff - 0.5
    } else if diff < 0.0 {
        diff + 0.5
    } else {
        0.0
    };
    let z = corrected / var.sqrt();
    let p = libm::erfc(z.abs() / std::f64::consts::SQRT_2);
    Ok((z, p.min(1.0)))
}

/// Full protocol: split into `g` proximity groups, confidence-match the
/// extreme groups, and test whether matched high-proximity samples are more
/// often correct than matched low-proximity ones.
pub fn bias_test(
    preds: &PredictionSet,
    prox: &[f64],
    g: usize,
    n_draw: usize,
    max_diff: f64,
    seed: u64,
) -> Result<BiasTestResult> {
    if prox.len() != preds.len() {
        return Err(Error::DimensionMismatch {
            expected: preds.len(),
            got: prox.len(),
        });
    }
    let groups = proximity_groups(prox, g)?;
    let correct = preds.correct();
    let collect = |target: usize| -> Vec<(f64, bool)> {
        (0..preds.len())
            .filter(|&i| groups[i] == target)
            .map(|i| (preds.confidence[i], correct[i]))
            .collect()
    };
    let high = collect(g - 1);
    let low = collect(0);
    let matched = confidence_match(&high, &low, n_draw, max_diff, seed)?;
    let acc = |idx: &[usize], src: &[(f64, bool)]| {
        idx.iter().filter(|&&i| src[i].1).count() as f64 / idx.len() as f64
    };
    let acc_high = acc(&matched.b_h, &high);
    let acc_low = acc(&matched.b_l, &low);
    let a: Vec<bool> = matched.b_h.iter().map(|&i| high[i].1).collect();
    let b: Vec<bool> = matched.b_l.iter().map(|&i| low[i].1).collect();
    let (z, p) = wilcoxon_rank_sum(&a, &b)?;
    Ok(BiasTestResult {
        bias_index: acc_high - acc_low,
        z_statistic: z,
        p_value: p,
        n_matched: matched.b_h.len(),
        acc_high,
        acc_low,
        mean_conf_high: matched.mean_conf_h,
        mean_conf_low: matched.mean_conf_l,
        rejected_count: matched.rejected_count,
        groups: g,
        n_draw,
        max_diff,
        seed,
    })
}
