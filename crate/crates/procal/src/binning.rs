//! Equal-mass (quantile) binning shared by metrics, histogram binning,
//! bin-mean-shift, and proximity grouping.
//!
//! Ties are broken by stable input order, so the assignment is deterministic
//! for any input.

/// Assign each sample to one of `m` equal-mass bins ordered by value.
/// Bin sizes differ by at most 1; ties keep input order.
pub(crate) fn equal_mass_bins(values: &[f64], m: usize) -> Vec<usize> {
    let n = values.len();
    debug_assert!(m >= 1 && n >= m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .expect("non-finite value in binning")
            .then(a.cmp(&b))
    });
    let mut bins = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        bins[i] = rank * m / n;
    }
    bins
}

/// Equal-mass bin edges: `m + 1` ascending values where edge `j` (for
/// `1 <= j < m`) is the smallest value assigned to bin `j`. The outer edges
/// are the data min and max. Interior edges may repeat under heavy ties.
pub(crate) fn equal_mass_edges(values: &[f64], m: usize) -> Vec<f64> {
    let n = values.len();
    let bins = equal_mass_bins(values, m);
    let mut edges = vec![f64::INFINITY; m + 1];
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        let b = bins[i];
        if values[i] < edges[b] {
            edges[b] = values[i];
        }
        if values[i] > max {
            max = values[i];
        }
    }
    // Empty bins cannot occur when n >= m, but keep edges monotone anyway.
    for j in 1..=m {
        if !edges[j].is_finite() {
            edges[j] = edges[j - 1];
        }
    }
    edges[m] = max;
    edges
}
