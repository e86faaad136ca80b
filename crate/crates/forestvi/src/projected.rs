//! Sobol-MDA: importance of a feature as the out-of-bag accuracy lost when
//! that feature's direction is projected out of every tree partition. The
//! projection is evaluated by descending both children wherever a tree
//! splits on the dropped feature and recombining the reached leaves' training
//! statistics; nothing is permuted and nothing is refitted.

use std::cell::RefCell;
use std::collections::HashMap;

use rayon::prelude::*;

use crate::cart::{self, RegressionTree, TreeNode};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forest::{RandomForest, ViMethod, ViReport};

/// Read-only view of a forest with one feature direction removed.
///
/// Holds a flattened copy of each tree for fast multi-descent routing and a
/// cache of recombined cell means keyed by the reached leaf set. Correctness
/// does not depend on cache hits; two queries reaching the same leaves just
/// reuse the weighted mean.
pub struct ProjectedForestView<'a> {
    forest: &'a RandomForest,
    dropped_feature: usize,
    flat: Vec<FlatTree>,
    cache: RefCell<HashMap<(u32, Vec<u32>), f64>>,
}

struct FlatNode {
    feature: usize,
    threshold: f64,
    left: u32,
    right: u32,
    is_leaf: bool,
    mean: f64,
    count: f64,
}

struct FlatTree {
    nodes: Vec<FlatNode>,
}

impl FlatTree {
    fn build(tree: &RegressionTree) -> Self {
        let mut nodes = Vec::new();
        Self::push(&tree.root, &mut nodes);
        FlatTree { nodes }
    }

    fn push(node: &TreeNode, nodes: &mut Vec<FlatNode>) -> u32 {
        let id = nodes.len() as u32;
        match node {
            TreeNode::Leaf(l) => nodes.push(FlatNode {
                feature: 0,
                threshold: 0.0,
                left: u32::MAX,
                right: u32::MAX,
                is_leaf: true,
                mean: l.mean,
                count: l.count as f64,
            }),
            TreeNode::Internal(n) => {
                nodes.push(FlatNode {
                    feature: n.feature,
                    threshold: n.threshold,
                    left: u32::MAX,
                    right: u32::MAX,
                    is_leaf: false,
                    mean: 0.0,
                    count: n.count as f64,
                });
                let left = Self::push(&n.left, nodes);
                let right = Self::push(&n.right, nodes);
                nodes[id as usize].left = left;
                nodes[id as usize].right = right;
            }
        }
        id
    }
}

impl<'a> ProjectedForestView<'a> {
    pub fn new(forest: &'a RandomForest, dropped_feature: usize) -> Self {
        let flat = forest.trees.iter().map(FlatTree::build).collect();
        Self {
            forest,
            dropped_feature,
            flat,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn dropped_feature(&self) -> usize {
        self.dropped_feature
    }

    pub fn forest(&self) -> &RandomForest {
        self.forest
    }

    /// Projected prediction of tree `tree_index` at `x`: every split on the
    /// dropped feature descends into both children; the reached leaves form
    /// the projected cell and the result is their training-count-weighted
    /// mean response. Surrogates are bypassed — this is projection, not
    /// imputation.
    pub fn project_predict(&self, tree_index: usize, x: &[f64]) -> f64 {
        let tree = &self.flat[tree_index];
        let mut leaves: Vec<u32> = Vec::new();
        collect_leaves(tree, 0, self.dropped_feature, x, &mut leaves);
        debug_assert!(!leaves.is_empty(), "projected cell must contain leaves");
        let key = (tree_index as u32, leaves);
        if let Some(&mean) = self.cache.borrow().get(&key) {
            return mean;
        }
        let (mut wsum, mut w) = (0.0, 0.0);
        for &leaf in &key.1 {
            let node = &tree.nodes[leaf as usize];
            wsum += node.count * node.mean;
            w += node.count;
        }
        let mean = wsum / w;
        self.cache.borrow_mut().insert(key, mean);
        mean
    }
}

fn collect_leaves(tree: &FlatTree, id: u32, dropped: usize, x: &[f64], out: &mut Vec<u32>) {
    let node = &tree.nodes[id as usize];
    if node.is_leaf {
        out.push(id);
        return;
    }
    if node.feature == dropped {
        collect_leaves(tree, node.left, dropped, x, out);
        collect_leaves(tree, node.right, dropped, x, out);
    } else if x[node.feature] <= node.threshold {
        collect_leaves(tree, node.left, dropped, x, out);
    } else {
        collect_leaves(tree, node.right, dropped, x, out);
    }
}

/// Sobol-MDA importance: per feature, the mean over trees of the out-of-bag
/// error increase of the projected tree, normalized by the response variance
/// (denominator n-1). Deterministic given the fitted forest.
pub fn sobol_mda_vi(forest: &RandomForest, data: &Dataset) -> Result<ViReport> {
    if data.n() != forest.n_rows || data.p() != forest.feature_count {
        return Err(Error::InvalidParameter(
            "dataset does not match the forest's training data shape".into(),
        ));
    }
    let n = data.n() as f64;
    let mean_y = data.response().iter().sum::<f64>() / n;
    let var_y = data
        .response()
        .iter()
        .map(|&y| (y - mean_y).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    if var_y == 0.0 {
        return Err(Error::ZeroOutputVariance);
    }

    let usable: Vec<usize> = (0..forest.trees.len())
        .filter(|&h| !forest.oob_rows[h].is_empty())
        .collect();
    if usable.is_empty() {
        return Err(Error::NoOutOfBagRows);
    }

    let orig_mse: Vec<f64> = usable
        .iter()
        .map(|&h| {
            let oob = &forest.oob_rows[h];
            let sse: f64 = oob
                .iter()
                .map(|&i| {
                    (data.response()[i] - cart::predict_node(&forest.trees[h].root, data.row(i)))
                        .powi(2)
                })
                .sum();
            sse / oob.len() as f64
        })
        .collect();

    let scores: Vec<f64> = (0..data.p())
        .into_par_iter()
        .map(|j| {
            let view = ProjectedForestView::new(forest, j);
            let mut acc = 0.0;
            for (pos, &h) in usable.iter().enumerate() {
                let oob = &forest.oob_rows[h];
                let sse: f64 = oob
                    .iter()
                    .map(|&i| (data.response()[i] - view.project_predict(h, data.row(i))).powi(2))
                    .sum();
                acc += sse / oob.len() as f64 - orig_mse[pos];
            }
            acc / usable.len() as f64 / var_y
        })
        .collect();

    Ok(ViReport::new(ViMethod::SobolMda, scores, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cart::{grow_tree, GrowParams};
    use crate::dataset::{standard_normal, RngSeed};
    use crate::forest::{fit_forest, ForestParams};
    use rand::Rng;

    fn single_tree_forest(data: &Dataset, params: GrowParams) -> RandomForest {
        let tree = grow_tree(data, &params, RngSeed::new(0)).unwrap();
        RandomForest {
            trees: vec![tree],
            bootstrap_rows: vec![(0..data.n()).collect()],
            oob_rows: vec![vec![]],
            mtry: data.p(),
            params: ForestParams::default(),
            n_rows: data.n(),
            feature_count: data.p(),
        }
    }

    #[test]
    fn projection_of_unused_direction_is_identity() {
        let data = Dataset::from_columns(
            vec![
                vec![1.0, 2.0, 3.0, 4.0],
                vec![0.5, 0.6, 0.7, 0.8],
            ],
            vec![0.0, 0.0, 10.0, 10.0],
            vec!["a".into(), "b".into()],
            "y",
        )
        .unwrap();
        let forest = single_tree_forest(
            &data,
            GrowParams {
                min_node: 1,
                ..GrowParams::default()
            },
        );
        // the tree splits only on feature 0, so dropping feature 1 changes nothing
        let view = ProjectedForestView::new(&forest, 1);
        for i in 0..data.n() {
            let plain = cart::predict_tree(&forest.trees[0], data.row(i)).unwrap();
            assert_eq!(view.project_predict(0, data.row(i)), plain);
        }
    }

    #[test]
    fn root_split_projection_is_weighted_constant() {
        let data = Dataset::from_columns(
            vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]],
            vec![0.0, 0.0, 0.0, 0.0, 12.0, 12.0],
            vec!["x".into()],
            "y",
        )
        .unwrap();
        let forest = single_tree_forest(
            &data,
            GrowParams {
                min_node: 2,
                max_depth: Some(1),
                ..GrowParams::default()
            },
        );
        // single split on x at 4.5: leaves (mean 0, n=4) and (mean 12, n=2)
        let view = ProjectedForestView::new(&forest, 0);
        let expected = (4.0 * 0.0 + 2.0 * 12.0) / 6.0;
        for x in [-10.0, 2.0, 7.0] {
            assert_eq!(view.project_predict(0, &[x]), expected);
        }
    }

    #[test]
    fn depth_two_projection_matches_hand_enumeration() {
        // tree splits on j (feature 0) at root, then on k (feature 1) in both
        // children; dropping j leaves the two leaves consistent with x_k
        let x0 = vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let x1 = vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0];
        let y = vec![0.0, 0.0, 4.0, 4.0, 10.0, 10.0, 20.0, 20.0];
        let data = Dataset::from_columns(
            vec![x0, x1],
            y,
            vec!["j".into(), "k".into()],
            "y",
        )
        .unwrap();
        let forest = single_tree_forest(
            &data,
            GrowParams {
                min_node: 2,
                ..GrowParams::default()
            },
        );
        let view = ProjectedForestView::new(&forest, 0);
        // x_k small: leaves (mean 0, n=2) and (mean 10, n=2) -> 5
        assert_eq!(view.project_predict(0, &[123.0, 0.0]), 5.0);
        // x_k large: leaves (mean 4, n=2) and (mean 20, n=2) -> 12
        assert_eq!(view.project_predict(0, &[123.0, 1.0]), 12.0);
    }

    fn signal_noise_data(seed: u64, n: usize) -> Dataset {
        let mut rng = RngSeed::new(seed).rng();
        let x0: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let x1: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let y: Vec<f64> = x0
            .iter()
            .map(|&v| 3.0 * v + 0.1 * rng.gen_range(-1.0..1.0))
            .collect();
        Dataset::from_columns(vec![x0, x1], y, vec!["signal".into(), "noise".into()], "y").unwrap()
    }

    #[test]
    fn never_split_feature_scores_exactly_zero() {
        let n = 120;
        let mut rng = RngSeed::new(3).rng();
        let x0: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let y: Vec<f64> = x0.iter().map(|&v| 2.0 * v).collect();
        let data = Dataset::from_columns(
            vec![x0, vec![9.0; n]],
            y,
            vec!["x".into(), "const".into()],
            "y",
        )
        .unwrap();
        let params = ForestParams {
            n_trees: 25,
            mtry: Some(2),
            ..ForestParams::default()
        };
        let forest = fit_forest(&data, &params, RngSeed::new(5)).unwrap();
        let report = sobol_mda_vi(&forest, &data).unwrap();
        assert_eq!(report.scores[1], 0.0);
        assert!(report.scores[0] > 0.0);
    }

    #[test]
    fn deterministic_without_rng() {
        let data = signal_noise_data(7, 150);
        let params = ForestParams {
            n_trees: 20,
            ..ForestParams::default()
        };
        let forest = fit_forest(&data, &params, RngSeed::new(9)).unwrap();
        let a = sobol_mda_vi(&forest, &data).unwrap();
        let b = sobol_mda_vi(&forest, &data).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_response_variance_is_an_error() {
        let data = Dataset::from_columns(
            vec![(0..40).map(|i| i as f64).collect()],
            vec![5.0; 40],
            vec!["x".into()],
            "y",
        )
        .unwrap();
        let params = ForestParams {
            n_trees: 5,
            mtry: Some(1),
            ..ForestParams::default()
        };
        let forest = fit_forest(&data, &params, RngSeed::new(11)).unwrap();
        assert!(matches!(
            sobol_mda_vi(&forest, &data).unwrap_err(),
            Error::ZeroOutputVariance
        ));
    }

    #[test]
    fn informative_feature_dominates() {
        let data = signal_noise_data(13, 300);
        let params = ForestParams {
            n_trees: 40,
            ..ForestParams::default()
        };
        let forest = fit_forest(&data, &params, RngSeed::new(15)).unwrap();
        let report = sobol_mda_vi(&forest, &data).unwrap();
        assert!(report.scores[0] > 0.2, "signal score {}", report.scores[0]);
        assert!(report.scores[0] > 10.0 * report.scores[1].abs());
        assert_eq!(report.ranking[0], 0);
    }
}
