//! Random-forest ensembles over bootstrap samples with out-of-bag
//! bookkeeping, plus the permutation importance (mean decrease accuracy)
//! computed from per-tree out-of-bag errors.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{self, GrowParams, RegressionTree};
use crate::dataset::{Dataset, RngSeed};
use crate::error::{Error, Result};

/// Tag identifying which estimator produced a [`ViReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViMethod {
    #[serde(rename = "CART")]
    Cart,
    #[serde(rename = "RF_MDA")]
    RfMda,
    #[serde(rename = "CF")]
    Cf,
    #[serde(rename = "SOBOL_MDA")]
    SobolMda,
    #[serde(rename = "RF_GS")]
    RfGs,
}

impl std::fmt::Display for ViMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ViMethod::Cart => "CART",
            ViMethod::RfMda => "RF",
            ViMethod::Cf => "CF",
            ViMethod::SobolMda => "S_MDA",
            ViMethod::RfGs => "RF_GS",
        };
        f.write_str(name)
    }
}

/// Per-feature importance scores with the induced ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViReport {
    pub method: ViMethod,
    pub scores: Vec<f64>,
    /// Features ordered by descending score; ties broken by feature index.
    pub ranking: Vec<usize>,
    pub normalized: Option<Vec<f64>>,
}

impl ViReport {
    pub fn new(method: ViMethod, scores: Vec<f64>, normalized: Option<Vec<f64>>) -> Self {
        let mut ranking: Vec<usize> = (0..scores.len()).collect();
        ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        Self {
            method,
            scores,
            ranking,
            normalized,
        }
    }

    /// Rank (0 = most important) of feature `j`.
    pub fn rank_of(&self, j: usize) -> usize {
        self.ranking.iter().position(|&f| f == j).expect("feature in ranking")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// CSV lines `feature,score,rank` (rank 1 = most important).
    pub fn to_csv(&self, feature_names: Option<&[String]>) -> String {
        let mut out = String::from("feature,score,rank\n");
        for (j, &score) in self.scores.iter().enumerate() {
            let name = match feature_names {
                Some(names) => names[j].clone(),
                None => format!("X{}", j + 1),
            };
            out.push_str(&format!("{},{},{}\n", name, fmt_f64(score), self.rank_of(j) + 1));
        }
        out
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    ryu::Buffer::new().format(v).to_string()
}

/// Forest hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    /// Number of trees.
    pub n_trees: usize,
    /// Features sampled per node; defaults to `max(1, p/3)` when unset.
    pub mtry: Option<usize>,
    pub min_node: usize,
    pub max_depth: Option<usize>,
    /// Bootstrap resampling; disabling it makes every tree see the full
    /// sample (used to check that a one-tree forest replicates a plain tree).
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            mtry: None,
            min_node: 5,
            max_depth: None,
            bootstrap: true,
        }
    }
}

/// Regression-convention default for the per-node feature sample.
pub fn default_mtry(p_active: usize) -> usize {
    (p_active / 3).max(1)
}

/// Ensemble of regression trees with per-tree bootstrap/out-of-bag records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<RegressionTree>,
    /// Row multiset each tree was grown on (length n each).
    pub bootstrap_rows: Vec<Vec<usize>>,
    /// Ascending rows absent from each tree's bootstrap sample.
    pub oob_rows: Vec<Vec<usize>>,
    pub mtry: usize,
    pub params: ForestParams,
    pub n_rows: usize,
    pub feature_count: usize,
}

impl RandomForest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Fit a forest on all features.
pub fn fit_forest(data: &Dataset, params: &ForestParams, rng: RngSeed) -> Result<RandomForest> {
    fit_forest_subset(data, params, None, rng)
}

/// Fit a forest whose split search is restricted to `features` (all features
/// when `None`). Tree `h` derives its streams from `rng.derive(h)`, so the
/// result is independent of scheduling.
pub fn fit_forest_subset(
    data: &Dataset,
    params: &ForestParams,
    features: Option<&[usize]>,
    rng: RngSeed,
) -> Result<RandomForest> {
    if params.n_trees == 0 {
        return Err(Error::InvalidParameter("forest needs at least one tree".into()));
    }
    let p_active = features.map_or(data.p(), <[usize]>::len);
    if p_active == 0 {
        return Err(Error::InvalidParameter("empty candidate feature set".into()));
    }
    let mtry = params.mtry.unwrap_or_else(|| default_mtry(p_active));
    if mtry == 0 || mtry > p_active {
        return Err(Error::InvalidParameter(format!(
            "mtry {mtry} out of range [1, {p_active}]"
        )));
    }
    let grow = GrowParams {
        min_node: params.min_node,
        max_depth: params.max_depth,
        candidate_features: features.map(<[usize]>::to_vec),
        max_surrogates: 0, // ensembles never consume surrogates
        mtry: Some(mtry),
    };

    let n = data.n();
    let fitted: Result<Vec<(RegressionTree, Vec<usize>, Vec<usize>)>> = (0..params.n_trees)
        .into_par_iter()
        .map(|h| {
            let tree_seed = rng.derive(h as u64);
            let rows: Vec<usize> = if params.bootstrap {
                let mut boot_rng = tree_seed.derive(0).rng();
                (0..n).map(|_| boot_rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut in_bag = vec![false; n];
            for &i in &rows {
                in_bag[i] = true;
            }
            let oob: Vec<usize> = (0..n).filter(|&i| !in_bag[i]).collect();
            let tree = cart::grow_tree_on_rows(data, &rows, &grow, tree_seed.derive(1))?;
            Ok((tree, rows, oob))
        })
        .collect();

    let mut trees = Vec::with_capacity(params.n_trees);
    let mut bootstrap_rows = Vec::with_capacity(params.n_trees);
    let mut oob_rows = Vec::with_capacity(params.n_trees);
    for (tree, rows, oob) in fitted? {
        trees.push(tree);
        bootstrap_rows.push(rows);
        oob_rows.push(oob);
    }
    Ok(RandomForest {
        trees,
        bootstrap_rows,
        oob_rows,
        mtry,
        params: params.clone(),
        n_rows: n,
        feature_count: data.p(),
    })
}

/// Arithmetic mean of the tree predictions.
pub fn predict_forest(forest: &RandomForest, x: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for tree in &forest.trees {
        sum += cart::predict_tree(tree, x)?;
    }
    Ok(sum / forest.trees.len() as f64)
}

/// Out-of-bag prediction per training row: the mean over trees whose
/// bootstrap sample missed that row. `None` where no tree left the row out.
pub fn oob_predictions(forest: &RandomForest, data: &Dataset) -> Result<Vec<Option<f64>>> {
    check_training_data(forest, data)?;
    let n = data.n();
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0usize; n];
    for (tree, oob) in forest.trees.iter().zip(&forest.oob_rows) {
        for &i in oob {
            sums[i] += cart::predict_node(&tree.root, data.row(i));
            counts[i] += 1;
        }
    }
    Ok((0..n)
        .map(|i| (counts[i] > 0).then(|| sums[i] / counts[i] as f64))
        .collect())
}

/// Out-of-bag mean squared error over rows with a defined prediction.
pub fn oob_mse(forest: &RandomForest, data: &Dataset) -> Result<f64> {
    let preds = oob_predictions(forest, data)?;
    let mut sse = 0.0;
    let mut m = 0usize;
    for (i, pred) in preds.iter().enumerate() {
        if let Some(p) = pred {
            sse += (data.response()[i] - p).powi(2);
            m += 1;
        }
    }
    if m == 0 {
        return Err(Error::NoOutOfBagRows);
    }
    Ok(sse / m as f64)
}

/// Out-of-bag root mean squared error.
pub fn oob_rmse(forest: &RandomForest, data: &Dataset) -> Result<f64> {
    Ok(oob_mse(forest, data)?.sqrt())
}

fn check_training_data(forest: &RandomForest, data: &Dataset) -> Result<()> {
    if data.n() != forest.n_rows || data.p() != forest.feature_count {
        return Err(Error::InvalidParameter(
            "dataset does not match the forest's training data shape".into(),
        ));
    }
    Ok(())
}

/// Permutation importance (mean decrease accuracy): per tree and feature,
/// the out-of-bag error increase after permuting that feature's column among
/// the tree's out-of-bag rows. Larger is more important.
pub fn rf_vi_mda(forest: &RandomForest, data: &Dataset, rng: RngSeed) -> Result<ViReport> {
    let scores = mda_scores(forest, data, None, rng)?;
    Ok(ViReport::new(ViMethod::RfMda, scores, None))
}

/// Shared permutation core. `feature_cells`, when present, gives for each
/// feature the list of grid cells (ascending row sets partitioning all rows);
/// the permutation then runs independently within each cell. `None` is the
/// single-cell case, i.e. plain MDA. Stream use is identical in both paths:
/// cell `c` of feature `j` on tree `h` draws from
/// `rng.derive(j).derive(h).derive(c)`.
pub(crate) fn mda_scores(
    forest: &RandomForest,
    data: &Dataset,
    feature_cells: Option<&[Vec<Vec<usize>>]>,
    rng: RngSeed,
) -> Result<Vec<f64>> {
    check_training_data(forest, data)?;
    let usable: Vec<usize> = (0..forest.trees.len())
        .filter(|&h| !forest.oob_rows[h].is_empty())
        .collect();
    if usable.is_empty() {
        return Err(Error::NoOutOfBagRows);
    }

    let orig_mse: Vec<f64> = usable
        .par_iter()
        .map(|&h| tree_oob_mse(&forest.trees[h], data, &forest.oob_rows[h]))
        .collect();

    let p = data.p();
    let mut scores = Vec::with_capacity(p);
    for j in 0..p {
        let stream_j = rng.derive(j as u64);
        let deltas: Vec<f64> = usable
            .par_iter()
            .zip(orig_mse.par_iter())
            .map(|(&h, &mse0)| {
                let oob = &forest.oob_rows[h];
                let stream = stream_j.derive(h as u64);
                let mut permuted = vec![0.0f64; data.n()];
                match feature_cells {
                    Some(cells) => {
                        for (c, cell) in cells[j].iter().enumerate() {
                            let rows = intersect_sorted(oob, cell);
                            permute_into(data, j, &rows, stream.derive(c as u64), &mut permuted);
                        }
                    }
                    None => {
                        permute_into(data, j, oob, stream.derive(0), &mut permuted);
                    }
                }
                let mut sse = 0.0;
                let mut x = Vec::with_capacity(p);
                for &i in oob {
                    x.clear();
                    x.extend_from_slice(data.row(i));
                    x[j] = permuted[i];
                    let pred = cart::predict_node(&forest.trees[h].root, &x);
                    sse += (data.response()[i] - pred).powi(2);
                }
                sse / oob.len() as f64 - mse0
            })
            .collect();
        scores.push(deltas.iter().sum::<f64>() / usable.len() as f64);
    }
    Ok(scores)
}

fn tree_oob_mse(tree: &RegressionTree, data: &Dataset, oob: &[usize]) -> f64 {
    let sse: f64 = oob
        .iter()
        .map(|&i| (data.response()[i] - cart::predict_node(&tree.root, data.row(i))).powi(2))
        .sum();
    sse / oob.len() as f64
}

/// Shuffle column `j` over `rows` and scatter the result into `out` (indexed
/// by row).
fn permute_into(data: &Dataset, j: usize, rows: &[usize], seed: RngSeed, out: &mut [f64]) {
    let mut values: Vec<f64> = rows.iter().map(|&i| data.feature(i, j)).collect();
    values.shuffle(&mut seed.rng());
    for (&i, v) in rows.iter().zip(values) {
        out[i] = v;
    }
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut i, mut k) = (0, 0);
    while i < a.len() && k < b.len() {
        match a[i].cmp(&b[k]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => k += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                k += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cart::{grow_tree, predict_tree};

    fn toy_data(seed: u64, n: usize, p: usize) -> Dataset {
        let mut rng = RngSeed::new(seed).rng();
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 2.0 * cols[0][i] + 0.1 * rng.gen_range(-1.0..1.0))
            .collect();
        let names = (0..p).map(|j| format!("X{}", j + 1)).collect();
        Dataset::from_columns(cols, y, names, "y").unwrap()
    }

    #[test]
    fn degenerate_forest_replicates_single_tree() {
        let data = toy_data(1, 60, 2);
        let params = ForestParams {
            n_trees: 1,
            mtry: Some(2),
            bootstrap: false,
            ..ForestParams::default()
        };
        let forest = fit_forest(&data, &params, RngSeed::new(5)).unwrap();
        let tree = grow_tree(
            &data,
            &GrowParams {
                max_surrogates: 0,
                ..GrowParams::default()
            },
            RngSeed::new(0),
        )
        .unwrap();
        for i in 0..data.n() {
            let a = predict_forest(&forest, data.row(i)).unwrap();
            let b = predict_tree(&tree, data.row(i)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn forest_prediction_is_mean_of_trees() {
        // constant responses make every tree a single leaf
        let mk = |c: f64| {
            Dataset::from_columns(
                vec![vec![0.0, 1.0]],
                vec![c, c],
                vec!["x".into()],
                "y",
            )
            .unwrap()
        };
        let trees: Vec<RegressionTree> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&c| grow_tree(&mk(c), &GrowParams::default(), RngSeed::new(0)).unwrap())
            .collect();
        let forest = RandomForest {
            trees,
            bootstrap_rows: vec![vec![0, 1]; 3],
            oob_rows: vec![vec![]; 3],
            mtry: 1,
            params: ForestParams::default(),
            n_rows: 2,
            feature_count: 1,
        };
        assert_eq!(predict_forest(&forest, &[0.3]).unwrap(), 2.0);
    }

    #[test]
    fn forest_prediction_bounded_by_tree_predictions() {
        let data = toy_data(3, 80, 3);
        let forest = fit_forest(&data, &ForestParams::default(), RngSeed::new(7)).unwrap();
        for i in (0..data.n()).step_by(7) {
            let x = data.row(i);
            let preds: Vec<f64> = forest
                .trees
                .iter()
                .map(|t| predict_tree(t, x).unwrap())
                .collect();
            let avg = predict_forest(&forest, x).unwrap();
            let lo = preds.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = preds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo <= avg && avg <= hi);
        }
    }

    #[test]
    fn bootstrap_and_oob_are_complementary() {
        let data = toy_data(5, 120, 2);
        let params = ForestParams {
            n_trees: 10,
            ..ForestParams::default()
        };
        let forest = fit_forest(&data, &params, RngSeed::new(11)).unwrap();
        for h in 0..10 {
            assert_eq!(forest.bootstrap_rows[h].len(), 120);
            let mut in_bag = vec![false; 120];
            for &i in &forest.bootstrap_rows[h] {
                in_bag[i] = true;
            }
            for &i in &forest.oob_rows[h] {
                assert!(!in_bag[i]);
            }
            let support = in_bag.iter().filter(|&&b| b).count();
            assert_eq!(support + forest.oob_rows[h].len(), 120);
        }
    }

    #[test]
    fn oob_fraction_matches_occupancy_law() {
        // E[|oob|/n] = (1-1/n)^n with occupancy-problem variance; the window
        // [0.33, 0.41] covers more than 3.5 standard deviations around the
        // mean at n=1000, so a seeded run of 20 trees stays inside it.
        let n = 1000usize;
        let p_out = (1.0 - 1.0 / n as f64).powi(n as i32);
        let p_out2 = (1.0 - 2.0 / n as f64).powi(n as i32);
        let nf = n as f64;
        let var = nf * (nf - 1.0) * p_out2 + nf * p_out - nf * nf * p_out * p_out;
        let sd = var.sqrt();
        assert!(nf * p_out - 3.5 * sd > 0.33 * nf);
        assert!(nf * p_out + 3.5 * sd < 0.41 * nf);

        let data = toy_data(9, n, 2);
        let params = ForestParams {
            n_trees: 20,
            ..ForestParams::default()
        };
        let forest = fit_forest(&data, &params, RngSeed::new(13)).unwrap();
        for oob in &forest.oob_rows {
            let frac = oob.len() as f64 / n as f64;
            assert!((0.33..=0.41).contains(&frac), "oob fraction {frac}");
        }
    }

    #[test]
    fn oob_predictions_all_present_with_many_trees() {
        // P(some row never out-of-bag) <= n * (1 - (1-1/n)^n)^H
        let n = 345usize;
        let h = 500usize;
        let p_oob = (1.0 - 1.0 / n as f64).powi(n as i32);
        let p_never = (1.0 - p_oob).powf(h as f64);
        assert!(n as f64 * p_never < 1e-80);

        let data = toy_data(15, n, 2);
        let params = ForestParams {
            n_trees: h,
            ..ForestParams::default()
        };
        let forest = fit_forest(&data, &params, RngSeed::new(17)).unwrap();
        let preds = oob_predictions(&forest, &data).unwrap();
        assert!(preds.iter().all(Option::is_some));
    }

    #[test]
    fn oob_predictions_constant_response() {
        let data = Dataset::from_columns(
            vec![(0..50).map(|i| i as f64).collect()],
            vec![4.0; 50],
            vec!["x".into()],
            "y",
        )
        .unwrap();
        let params = ForestParams {
            n_trees: 30,
            mtry: Some(1),
            ..ForestParams::default()
        };
        let forest = fit_forest(&data, &params, RngSeed::new(19)).unwrap();
        for pred in oob_predictions(&forest, &data).unwrap().into_iter().flatten() {
            assert_eq!(pred, 4.0);
        }
    }

    #[test]
    fn single_tree_oob_defined_exactly_on_its_oob_rows() {
        let data = toy_data(21, 80, 2);
        let params = ForestParams {
            n_trees: 1,
            ..ForestParams::default()
        };
        let forest = fit_forest(&data, &params, RngSeed::new(23)).unwrap();
        let preds = oob_predictions(&forest, &data).unwrap();
        for i in 0..data.n() {
            assert_eq!(preds[i].is_some(), forest.oob_rows[0].contains(&i));
        }
    }

    #[test]
    fn constant_feature_has_exactly_zero_mda() {
        let mut rng = RngSeed::new(25).rng();
        let n = 100;
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x0.iter().map(|v| 3.0 * v).collect();
        let data = Dataset::from_columns(
            vec![x0, vec![7.5; n]],
            y,
            vec!["x0".into(), "const".into()],
            "y",
        )
        .unwrap();
        let params = ForestParams {
            n_trees: 30,
            mtry: Some(2), // full mtry: the constant column is always inspected, never chosen
            ..ForestParams::default()
        };
        let forest = fit_forest(&data, &params, RngSeed::new(27)).unwrap();
        let report = rf_vi_mda(&forest, &data, RngSeed::new(29)).unwrap();
        assert_eq!(report.scores[1], 0.0);
        assert!(report.scores[0] > 0.0);
    }

    #[test]
    fn identity_permutation_gives_zero_score() {
        // singleton cells force every permutation to be the identity
        let data = toy_data(31, 60, 2);
        let params = ForestParams {
            n_trees: 10,
            ..ForestParams::default()
        };
        let forest = fit_forest(&data, &params, RngSeed::new(33)).unwrap();
        let cells: Vec<Vec<Vec<usize>>> = (0..data.p())
            .map(|_| (0..data.n()).map(|i| vec![i]).collect())
            .collect();
        let scores = mda_scores(&forest, &data, Some(&cells), RngSeed::new(35)).unwrap();
        assert!(scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn seeded_fit_and_mda_are_deterministic() {
        let data = toy_data(37, 90, 3);
        let params = ForestParams {
            n_trees: 12,
            ..ForestParams::default()
        };
        let f1 = fit_forest(&data, &params, RngSeed::new(39)).unwrap();
        let f2 = fit_forest(&data, &params, RngSeed::new(39)).unwrap();
        assert_eq!(f1, f2);
        let r1 = rf_vi_mda(&f1, &data, RngSeed::new(41)).unwrap();
        let r2 = rf_vi_mda(&f2, &data, RngSeed::new(41)).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn invalid_params_rejected() {
        let data = toy_data(43, 30, 2);
        let bad_h = ForestParams {
            n_trees: 0,
            ..ForestParams::default()
        };
        assert!(fit_forest(&data, &bad_h, RngSeed::new(1)).is_err());
        let bad_mtry = ForestParams {
            mtry: Some(3),
            ..ForestParams::default()
        };
        assert!(fit_forest(&data, &bad_mtry, RngSeed::new(1)).is_err());
    }

    #[test]
    fn ranking_is_stable_argsort() {
        let report = ViReport::new(ViMethod::RfMda, vec![1.0, 3.0, 3.0, 0.5], None);
        assert_eq!(report.ranking, vec![1, 2, 0, 3]);
        assert_eq!(report.rank_of(1), 0);
    }

    #[test]
    fn report_json_and_csv() {
        let report = ViReport::new(ViMethod::SobolMda, vec![0.25, 0.5], None);
        let json = report.to_json().unwrap();
        assert!(json.contains("\"SOBOL_MDA\""));
        let csv = report.to_csv(None);
        assert!(csv.contains("X2,0.5,1"));
    }

    #[test]
    fn forest_json_round_trip() {
        let data = toy_data(47, 40, 2);
        let params = ForestParams {
            n_trees: 3,
            ..ForestParams::default()
        };
        let forest = fit_forest(&data, &params, RngSeed::new(49)).unwrap();
        let back = RandomForest::from_json(&forest.to_json().unwrap()).unwrap();
        assert_eq!(forest, back);
    }
}
