//! Density-ratio calibration: model the joint (confidence, proximity)
//! density separately for correct and incorrect predictions, then turn the
//! two into a posterior correctness probability via the class ratio gamma.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::map_batch;
use crate::kde::{kde_eval, kde_fit, Kde2d};

/// Density floor applied to both KDE evaluations before the ratio, so
/// far-tail queries never divide 0 by 0.
pub const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityRatioModel {
    pub kde_pos: Kde2d,
    pub kde_neg: Kde2d,
    /// (#incorrect)/(#correct) on the calibration set.
    pub gamma: f64,
}

/// Fit-time knobs. `max_fit_points` caps the KDE support per partition
/// (uniform subsample, seeded); evaluation cost is linear in the support
/// size, so the cap bounds apply cost on large calibration sets.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DensityRatioOptions {
    pub max_fit_points: Option<usize>,
    pub seed: u64,
}

impl Default for DensityRatioOptions {
    fn default() -> Self {
        DensityRatioOptions {
            max_fit_points: Some(5000),
            seed: 0,
        }
    }
}

fn maybe_subsample(
    points: Vec<(f64, f64)>,
    opts: &DensityRatioOptions,
    salt: u64,
) -> Vec<(f64, f64)> {
    match opts.max_fit_points {
        Some(cap) if points.len() > cap => {
            let mut idx: Vec<usize> = (0..points.len()).collect();
            let mut rng = ChaCha12Rng::seed_from_u64(opts.seed ^ salt);
            idx.shuffle(&mut rng);
            idx.truncate(cap);
            idx.sort_unstable();
            idx.into_iter().map(|i| points[i]).collect()
        }
        _ => points,
    }
}

/// Fit the two KDEs on the correct/incorrect partitions of the calibration
/// set; gamma is the incorrect:correct count ratio.
pub fn fit_density_ratio(
    conf: &[f64],
    prox: &[f64],
    correct: &[bool],
    opts: &DensityRatioOptions,
) -> Result<DensityRatioModel> {
    let n = conf.len();
    if prox.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: prox.len(),
        });
    }
    if correct.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: correct.len(),
        });
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..n {
        if correct[i] {
            pos.push((conf[i], prox[i]));
        } else {
            neg.push((conf[i], prox[i]));
        }
    }
    if pos.len() < 2 {
        return Err(Error::InsufficientPartition {
            context: "density ratio, correct partition".into(),
            got: pos.len(),
        });
    }
    if neg.len() < 2 {
        return Err(Error::InsufficientPartition {
            context: "density ratio, incorrect partition".into(),
            got: neg.len(),
        });
    }
    let gamma = neg.len() as f64 / pos.len() as f64;
    let pos = maybe_subsample(pos, opts, 0x706f73);
    let neg = maybe_subsample(neg, opts, 0x6e6567);
    Ok(DensityRatioModel {
        kde_pos: kde_fit(&pos)?,
        kde_neg: kde_fit(&neg)?,
        gamma,
    })
}

/// Calibrated confidence `p+ / (p+ + gamma * p-)`, densities floored at
/// [`DENSITY_FLOOR`]; always in [0,1].
pub fn apply_density_ratio(model: &DensityRatioModel, conf: f64, prox: f64) -> f64 {
    let p_pos = kde_eval(&model.kde_pos, conf, prox).max(DENSITY_FLOOR);
    let p_neg = kde_eval(&model.kde_neg, conf, prox).max(DENSITY_FLOOR);
    p_pos / (p_pos + model.gamma * p_neg)
}

/// Batch apply across (conf, prox) pairs.
pub fn apply_density_ratio_batch(
    model: &DensityRatioModel,
    conf: &[f64],
    prox: &[f64],
) -> Vec<f64> {
    map_batch(conf.len(), |i| apply_density_ratio(model, conf[i], prox[i]))
}
