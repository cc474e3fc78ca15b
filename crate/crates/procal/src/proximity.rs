//! Exact nearest-neighbor search over reference embeddings and the
//! proximity value `exp(-mean distance to the K nearest neighbors)`.
//!
//! The backend is a flat scan: every query compares against every reference
//! row, so results are exact by construction. Distances are accumulated in
//! f64 regardless of the f32 storage precision.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Euclidean,
    /// 1 - cosine similarity.
    CosineDistance,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "cosine" | "cosine-distance" => Ok(Metric::CosineDistance),
            other => Err(Error::InvalidParameter(format!("unknown metric '{}'", other))),
        }
    }
}

/// Read-only exact nearest-neighbor index over reference embeddings.
#[derive(Debug, Clone)]
pub struct ProximityIndex {
    reference: EmbeddingMatrix,
    metric: Metric,
    id_to_row: HashMap<i64, usize>,
    /// Cached squared norms, used by the cosine metric.
    norms: Vec<f64>,
}

impl ProximityIndex {
    pub fn build(reference: EmbeddingMatrix, metric: Metric) -> Result<Self> {
        if reference.len() < 2 {
            return Err(Error::ReferenceTooSmall {
                needed: 2,
                got: reference.len(),
            });
        }
        reference.validate()?;
        let norms = (0..reference.len())
            .map(|i| {
                reference
                    .row(i)
                    .iter()
                    .map(|&v| (v as f64) * (v as f64))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let id_to_row = reference
            .sample_id
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        Ok(ProximityIndex {
            reference,
            metric,
            id_to_row,
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn dim(&self) -> usize {
        self.reference.d
    }

    fn distance(&self, query: &[f64], row: usize) -> f64 {
        let r = self.reference.row(row);
        match self.metric {
            Metric::Euclidean => {
                let mut acc = 0.0;
                for (q, v) in query.iter().zip(r) {
                    let diff = q - *v as f64;
                    acc += diff * diff;
                }
                acc // squared; sqrt taken after selection
            }
            Metric::CosineDistance => {
                let mut dot = 0.0;
                let mut qn = 0.0;
                for (q, v) in query.iter().zip(r) {
                    dot += q * *v as f64;
                    qn += q * q;
                }
                let denom = qn.sqrt() * self.norms[row];
                if denom == 0.0 {
                    1.0
                } else {
                    1.0 - dot / denom
                }
            }
        }
    }

    /// The exact K smallest distances to the query, ascending. A reference
    /// row whose id equals `exclude_id` is never returned.
    pub fn query_knn(&self, query: &[f64], k: usize, exclude_id: Option<i64>) -> Result<Vec<f64>> {
        if query.len() != self.reference.d {
            return Err(Error::DimensionMismatch {
                expected: self.reference.d,
                got: query.len(),
            });
        }
        let excluded_row = exclude_id.and_then(|id| self.id_to_row.get(&id).copied());
        let available = self.len() - usize::from(excluded_row.is_some());
        if k < 1 || k > available {
            return Err(Error::KOutOfRange { k, available });
        }
        // Small sorted buffer of the current best k distances.
        let mut best: Vec<f64> = Vec::with_capacity(k + 1);
        for row in 0..self.len() {
            if Some(row) == excluded_row {
                continue;
            }
            let dist = self.distance(query, row);
            if best.len() < k {
                let pos = best.partition_point(|&d| d <= dist);
                best.insert(pos, dist);
            } else if dist < best[k - 1] {
                let pos = best.partition_point(|&d| d <= dist);
                best.insert(pos, dist);
                best.pop();
            }
        }
        if self.metric == Metric::Euclidean {
            for d in &mut best {
                *d = d.sqrt();
            }
        }
        Ok(best)
    }

    /// Proximity per the exp-of-negative-mean-KNN-distance definition;
    /// always in (0,1], equal to 1 iff all K distances are zero.
    pub fn proximity(&self, query: &[f64], k: usize, exclude_id: Option<i64>) -> Result<f64> {
        let dists = self.query_knn(query, k, exclude_id)?;
        let mean = dists.iter().sum::<f64>() / dists.len() as f64;
        Ok((-mean).exp())
    }

    /// Proximity for every row of `queries`. When `exclude_self` is set,
    /// each query row's own id is excluded from its neighbor set (used when
    /// queries come from the reference set itself). Fans out across threads
    /// under the `parallel` feature.
    pub fn batch_proximity(
        &self,
        queries: &EmbeddingMatrix,
        k: usize,
        exclude_self: bool,
    ) -> Result<Vec<f64>> {
        if queries.d != self.reference.d {
            return Err(Error::DimensionMismatch {
                expected: self.reference.d,
                got: queries.d,
            });
        }
        let results = exec::map_batch(queries.len(), |i| {
            let q: Vec<f64> = queries.row(i).iter().map(|&v| v as f64).collect();
            let exclude = if exclude_self {
                Some(queries.sample_id[i])
            } else {
                None
            };
            self.proximity(&q, k, exclude)
        });
        results.into_iter().collect()
    }

    /// Sequential variant of [`batch_proximity`](Self::batch_proximity),
    /// kept for benchmark comparisons.
    pub fn batch_proximity_seq(
        &self,
        queries: &EmbeddingMatrix,
        k: usize,
        exclude_self: bool,
    ) -> Result<Vec<f64>> {
        if queries.d != self.reference.d {
            return Err(Error::DimensionMismatch {
                expected: self.reference.d,
                got: queries.d,
            });
        }
        let results = exec::map_batch_seq(queries.len(), |i| {
            let q: Vec<f64> = queries.row(i).iter().map(|&v| v as f64).collect();
            let exclude = if exclude_self {
                Some(queries.sample_id[i])
            } else {
                None
            };
            self.proximity(&q, k, exclude)
        });
        results.into_iter().collect()
    }
}
