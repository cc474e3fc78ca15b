//! 2-D kernel density estimation with a Gaussian product kernel and the
//! normal-reference bandwidth rule, used by density-ratio calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::map_batch;

/// Bandwidth floor: the normal-reference rule returns 0 for zero-variance
/// coordinates.
pub const BANDWIDTH_FLOOR: f64 = 1e-3;

/// Gaussian-product-kernel density estimate over (confidence, proximity)
/// pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Kde2d {
    pub points: Vec<(f64, f64)>,
    /// (bw_conf, bw_prox), both positive.
    pub bw: (f64, f64),
}

fn reference_bandwidth(values: impl Iterator<Item = f64> + Clone, m: usize) -> f64 {
    let mean = values.clone().sum::<f64>() / m as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    let bw = 1.06 * var.sqrt() * (m as f64).powf(-0.2);
    bw.max(BANDWIDTH_FLOOR)
}

/// Fit bandwidths by the normal reference rule, `1.06 * sigma * m^(-1/5)`
/// per coordinate, floored at [`BANDWIDTH_FLOOR`].
pub fn kde_fit(points: &[(f64, f64)]) -> Result<Kde2d> {
    let m = points.len();
    if m < 2 {
        return Err(Error::InsufficientPartition {
            context: "kde fit".into(),
            got: m,
        });
    }
    if let Some(bad) = points
        .iter()
        .position(|(c, p)| !c.is_finite() || !p.is_finite())
    {
        return Err(Error::NonFinite(format!("kde fit point {}", bad)));
    }
    let bw = (
        reference_bandwidth(points.iter().map(|p| p.0), m),
        reference_bandwidth(points.iter().map(|p| p.1), m),
    );
    Ok(Kde2d {
        points: points.to_vec(),
        bw,
    })
}

/// Mixture density at (conf, prox): mean of the product Gaussians centered
/// on the fit points.
pub fn kde_eval(kde: &Kde2d, conf: f64, prox: f64) -> f64 {
    let (bc, bp) = kde.bw;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * bc * bp);
    let sum: f64 = kde
        .points
        .iter()
        .map(|&(c, p)| {
            let dc = (conf - c) / bc;
            let dp = (prox - p) / bp;
            (-0.5 * (dc * dc + dp * dp)).exp()
        })
        .sum();
    norm * sum / kde.points.len() as f64
}

/// Evaluate at many query pairs, fanning out across threads when the
/// `parallel` feature is on.
pub fn kde_eval_batch(kde: &Kde2d, queries: &[(f64, f64)]) -> Vec<f64> {
    map_batch(queries.len(), |i| kde_eval(kde, queries[i].0, queries[i].1))
}
