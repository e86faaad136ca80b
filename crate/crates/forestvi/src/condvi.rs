//! Conditional permutation importance: the column of interest is permuted
//! only within the cells of a grid spanned by covariates correlated with it,
//! which deflates the importance that plain permutation hands to correlated
//! features.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, RngSeed};
use crate::error::{Error, Result};
use crate::forest::{mda_scores, RandomForest, ViMethod, ViReport};

/// Partition of the rows into cells spanned by quantile bins of the
/// conditioning variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningGrid {
    pub target: usize,
    pub z_features: Vec<usize>,
    /// Cell index of every row.
    pub cell_of: Vec<usize>,
    /// Ascending row sets, one per nonempty cell.
    pub cells: Vec<Vec<usize>>,
}

/// Features whose absolute Pearson correlation with feature `j` exceeds
/// `threshold` (strictly). Constant columns correlate with nothing.
pub fn select_conditioning_set(data: &Dataset, j: usize, threshold: f64) -> Result<Vec<usize>> {
    if j >= data.p() {
        return Err(Error::InvalidParameter(format!(
            "feature index {j} out of range"
        )));
    }
    let target = data.column(j);
    let mut z = Vec::new();
    for k in 0..data.p() {
        if k == j {
            continue;
        }
        if pearson(&target, &data.column(k)).abs() > threshold {
            z.push(k);
        }
    }
    Ok(z)
}

/// Sample Pearson correlation; 0 when either column is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Discretize each conditioning variable into `bins_per_var` quantile bins
/// and intersect the bins into cells. Empty `z` yields the single-cell grid.
pub fn build_grid(
    data: &Dataset,
    j: usize,
    z: &[usize],
    bins_per_var: usize,
) -> Result<ConditioningGrid> {
    if bins_per_var == 0 {
        return Err(Error::InvalidParameter("bins_per_var must be positive".into()));
    }
    if z.contains(&j) {
        return Err(Error::InvalidParameter(
            "conditioning set must not contain the target feature".into(),
        ));
    }
    let n = data.n();
    // bin index per row per conditioning variable
    let mut bin_of: Vec<Vec<usize>> = Vec::with_capacity(z.len());
    for &k in z {
        let column = data.column(k);
        let mut sorted = column.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        // interior quantile edges; a value lands in the count of edges below it
        let edges: Vec<f64> = (1..bins_per_var)
            .map(|m| sorted[(n * m / bins_per_var).saturating_sub(1).min(n - 1)])
            .collect();
        bin_of.push(
            column
                .iter()
                .map(|&v| edges.iter().filter(|&&e| v > e).count())
                .collect(),
        );
    }

    // map each distinct bin tuple to a cell, in first-appearance order
    let mut keys: Vec<Vec<usize>> = Vec::new();
    let mut cell_of = vec![0usize; n];
    let mut cells: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let key: Vec<usize> = bin_of.iter().map(|b| b[i]).collect();
        let c = match keys.iter().position(|k| *k == key) {
            Some(c) => c,
            None => {
                keys.push(key);
                cells.push(Vec::new());
                keys.len() - 1
            }
        };
        cell_of[i] = c;
        cells[c].push(i);
    }
    Ok(ConditioningGrid {
        target: j,
        z_features: z.to_vec(),
        cell_of,
        cells,
    })
}

/// How the conditioning set of each feature is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Conditioning {
    /// Correlation threshold on |Pearson|.
    Threshold(f64),
    /// Condition on every other feature (the conservative choice).
    AllOthers,
}

/// Conditional permutation importance. Identical to plain MDA except that
/// each feature's out-of-bag permutation happens independently within the
/// cells of its conditioning grid; with an empty conditioning set the two
/// estimators consume the same stream and agree bit-exactly.
pub fn cf_vi(
    forest: &RandomForest,
    data: &Dataset,
    threshold: f64,
    bins_per_var: usize,
    rng: RngSeed,
) -> Result<ViReport> {
    cf_vi_with(forest, data, Conditioning::Threshold(threshold), bins_per_var, rng)
}

pub fn cf_vi_with(
    forest: &RandomForest,
    data: &Dataset,
    conditioning: Conditioning,
    bins_per_var: usize,
    rng: RngSeed,
) -> Result<ViReport> {
    let mut feature_cells: Vec<Vec<Vec<usize>>> = Vec::with_capacity(data.p());
    for j in 0..data.p() {
        let z = match conditioning {
            Conditioning::Threshold(t) => select_conditioning_set(data, j, t)?,
            Conditioning::AllOthers => (0..data.p()).filter(|&k| k != j).collect(),
        };
        let grid = build_grid(data, j, &z, bins_per_var)?;
        feature_cells.push(grid.cells);
    }
    let scores = mda_scores(forest, data, Some(&feature_cells), rng)?;
    Ok(ViReport::new(ViMethod::Cf, scores, None))
}
