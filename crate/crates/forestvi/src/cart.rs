//! CART regression trees: growth with exhaustive midpoint split search,
//! surrogate splits, cost-complexity pruning against a test sample, and the
//! deviance-based variable importance with surrogate credit.

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, RngSeed};
use crate::error::{Error, Result};
use crate::forest::{ViMethod, ViReport};

/// A primary split rule: rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
}

/// Alternative split that mimics the routing of a node's primary split.
///
/// `flipped` means rows with `x[feature] <= threshold` go to the primary's
/// right side. `dev_reduction` is the deviance decrease this split would
/// achieve at the node on its own; it is the credit used by [`cart_vi`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSplit {
    pub feature: usize,
    pub threshold: f64,
    pub agreement: f64,
    pub flipped: bool,
    pub dev_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InternalNode {
    pub feature: usize,
    pub threshold: f64,
    /// Surrogates ordered by agreement, best first.
    pub surrogates: Vec<SurrogateSplit>,
    /// Node deviance minus the sum of the children's deviances.
    pub dev_reduction: f64,
    pub count: usize,
    pub left: Box<TreeNode>,
    pub right: Box<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafNode {
    pub mean: f64,
    pub count: usize,
    pub deviance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Internal(InternalNode),
    Leaf(LeafNode),
}

impl TreeNode {
    pub fn count(&self) -> usize {
        match self {
            TreeNode::Internal(n) => n.count,
            TreeNode::Leaf(l) => l.count,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf(_))
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Internal(n) => n.left.leaf_count() + n.right.leaf_count(),
            TreeNode::Leaf(_) => 1,
        }
    }

    /// Sum of leaf deviances over the subtree.
    pub fn leaf_deviance(&self) -> f64 {
        match self {
            TreeNode::Internal(n) => n.left.leaf_deviance() + n.right.leaf_deviance(),
            TreeNode::Leaf(l) => l.deviance,
        }
    }

    /// Deviance of the subtree's rows around their common mean, reconstructed
    /// from the additivity identity.
    pub fn node_deviance(&self) -> f64 {
        match self {
            TreeNode::Internal(n) => {
                n.left.node_deviance() + n.right.node_deviance() + n.dev_reduction
            }
            TreeNode::Leaf(l) => l.deviance,
        }
    }

    /// Training mean of the subtree's rows.
    pub fn node_mean(&self) -> f64 {
        match self {
            TreeNode::Internal(n) => {
                let (cl, cr) = (n.left.count() as f64, n.right.count() as f64);
                (cl * n.left.node_mean() + cr * n.right.node_mean()) / (cl + cr)
            }
            TreeNode::Leaf(l) => l.mean,
        }
    }
}

/// Binary regression tree with per-node surrogate lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub root: TreeNode,
    pub min_node: usize,
    pub feature_count: usize,
    pub training_mse: f64,
    /// Set when the training response was constant, which forces a
    /// single-leaf tree.
    pub constant_response: bool,
}

impl RegressionTree {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Growth controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowParams {
    /// Minimum rows per child; a split is legal only if both children reach it.
    pub min_node: usize,
    pub max_depth: Option<usize>,
    /// Restrict the split search to these features (defaults to all).
    pub candidate_features: Option<Vec<usize>>,
    /// Surrogates kept per internal node.
    pub max_surrogates: usize,
    /// When set, each node samples this many candidate features uniformly
    /// at random before the split search (the random-forest `mtry` hook);
    /// growth is fully deterministic when unset.
    pub mtry: Option<usize>,
}

impl Default for GrowParams {
    fn default() -> Self {
        Self {
            min_node: 5,
            max_depth: None,
            candidate_features: None,
            max_surrogates: 5,
            mtry: None,
        }
    }
}

/// Grow a tree on the whole dataset. See [`grow_tree_on_rows`] for the
/// row-subset variant used by bootstrap ensembles.
pub fn grow_tree(data: &Dataset, params: &GrowParams, rng: RngSeed) -> Result<RegressionTree> {
    let rows: Vec<usize> = (0..data.n()).collect();
    grow_tree_on_rows(data, &rows, params, rng)
}

/// Grow a tree on a multiset of row indices (repeats allowed, as in a
/// bootstrap sample).
pub fn grow_tree_on_rows(
    data: &Dataset,
    rows: &[usize],
    params: &GrowParams,
    rng: RngSeed,
) -> Result<RegressionTree> {
    if params.min_node == 0 {
        return Err(Error::InvalidParameter("min_node must be positive".into()));
    }
    if rows.is_empty() {
        return Err(Error::EmptyTable);
    }
    let candidates: Vec<usize> = match &params.candidate_features {
        Some(set) => {
            if set.is_empty() {
                return Err(Error::InvalidParameter("empty candidate feature set".into()));
            }
            let mut set = set.clone();
            set.sort_unstable();
            set.dedup();
            if set.last().copied().unwrap_or(0) >= data.p() {
                return Err(Error::InvalidParameter(
                    "candidate feature index out of range".into(),
                ));
            }
            set
        }
        None => (0..data.p()).collect(),
    };
    if let Some(mtry) = params.mtry {
        if mtry == 0 || mtry > candidates.len() {
            return Err(Error::InvalidParameter(format!(
                "mtry {mtry} out of range for {} candidate features",
                candidates.len()
            )));
        }
    }

    let (mean, deviance, constant) = response_stats(data, rows);
    let mut rng = rng.rng();
    let root = if constant {
        TreeNode::Leaf(LeafNode {
            mean,
            count: rows.len(),
            deviance: 0.0,
        })
    } else {
        grow_node(
            data,
            rows.to_vec(),
            mean,
            deviance,
            0,
            params,
            &candidates,
            &mut rng,
        )
    };
    let training_mse = root.leaf_deviance() / rows.len() as f64;
    Ok(RegressionTree {
        root,
        min_node: params.min_node,
        feature_count: data.p(),
        training_mse,
        constant_response: constant,
    })
}

/// Mean and deviance of the response over `rows`, plus a constancy flag.
fn response_stats(data: &Dataset, rows: &[usize]) -> (f64, f64, bool) {
    let y = data.response();
    let first = y[rows[0]];
    let constant = rows.iter().all(|&i| y[i] == first);
    if constant {
        return (first, 0.0, true);
    }
    let m = rows.len() as f64;
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / m;
    let dev = rows.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>();
    (mean, dev, false)
}

struct BestSplit {
    score: f64, // summed child SSE, lower is better
    feature: usize,
    threshold: f64,
}

#[allow(clippy::too_many_arguments)]
fn grow_node(
    data: &Dataset,
    rows: Vec<usize>,
    mean: f64,
    deviance: f64,
    depth: usize,
    params: &GrowParams,
    candidates: &[usize],
    rng: &mut ChaCha12Rng,
) -> TreeNode {
    let m = rows.len();
    let leaf = |mean: f64, deviance: f64| {
        TreeNode::Leaf(LeafNode {
            mean,
            count: m,
            deviance,
        })
    };
    if m < 2 * params.min_node || deviance == 0.0 {
        return leaf(mean, deviance);
    }
    if let Some(max_depth) = params.max_depth {
        if depth >= max_depth {
            return leaf(mean, deviance);
        }
    }

    // Per-node feature subsampling (ascending order keeps the lowest-index
    // tie-break independent of the draw order).
    let node_candidates: Vec<usize> = match params.mtry {
        Some(mtry) if mtry < candidates.len() => {
            let mut picked: Vec<usize> = rand::seq::index::sample(rng, candidates.len(), mtry)
                .into_iter()
                .map(|i| candidates[i])
                .collect();
            picked.sort_unstable();
            picked
        }
        _ => candidates.to_vec(),
    };

    let mut best: Option<BestSplit> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
    for &j in &node_candidates {
        pairs.clear();
        pairs.extend(rows.iter().map(|&i| (data.feature(i, j), data.response()[i])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let total_y: f64 = pairs.iter().map(|p| p.1).sum();
        let total_y2: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
        let (mut sum_l, mut sum2_l) = (0.0, 0.0);
        for i in 1..m {
            sum_l += pairs[i - 1].1;
            sum2_l += pairs[i - 1].1 * pairs[i - 1].1;
            if pairs[i - 1].0 == pairs[i].0 {
                continue;
            }
            if i < params.min_node || m - i < params.min_node {
                continue;
            }
            let nl = i as f64;
            let nr = (m - i) as f64;
            let sse = (sum2_l - sum_l * sum_l / nl)
                + ((total_y2 - sum2_l) - (total_y - sum_l).powi(2) / nr);
            if best.as_ref().map_or(true, |b| sse < b.score) {
                best = Some(BestSplit {
                    score: sse,
                    feature: j,
                    threshold: 0.5 * (pairs[i - 1].0 + pairs[i].0),
                });
            }
        }
    }

    let Some(best) = best else {
        return leaf(mean, deviance);
    };

    let goes_left: Vec<bool> = rows
        .iter()
        .map(|&i| data.feature(i, best.feature) <= best.threshold)
        .collect();
    let left_rows: Vec<usize> = rows
        .iter()
        .zip(&goes_left)
        .filter(|(_, &l)| l)
        .map(|(&i, _)| i)
        .collect();
    let right_rows: Vec<usize> = rows
        .iter()
        .zip(&goes_left)
        .filter(|(_, &l)| !l)
        .map(|(&i, _)| i)
        .collect();

    let (l_mean, l_dev, _) = response_stats(data, &left_rows);
    let (r_mean, r_dev, _) = response_stats(data, &right_rows);
    if l_dev + r_dev >= deviance {
        // The candidate scan improved only within rounding error.
        return leaf(mean, deviance);
    }

    let surrogates = find_surrogates(
        data,
        &rows,
        &goes_left,
        best.feature,
        deviance,
        params.max_surrogates,
    );

    let dev_reduction = deviance - (l_dev + r_dev);
    let left = grow_node(data, left_rows, l_mean, l_dev, depth + 1, params, candidates, rng);
    let right = grow_node(data, right_rows, r_mean, r_dev, depth + 1, params, candidates, rng);
    TreeNode::Internal(InternalNode {
        feature: best.feature,
        threshold: best.threshold,
        surrogates,
        dev_reduction,
        count: m,
        left: Box::new(left),
        right: Box::new(right),
    })
}

/// For every feature other than the primary, find the split that best mimics
/// the primary routing of the node rows. Splits that do not beat the
/// majority-rule baseline are discarded.
fn find_surrogates(
    data: &Dataset,
    rows: &[usize],
    goes_left: &[bool],
    primary: usize,
    node_dev: f64,
    max_surrogates: usize,
) -> Vec<SurrogateSplit> {
    if max_surrogates == 0 {
        return Vec::new();
    }
    let m = rows.len();
    let n_l = goes_left.iter().filter(|&&l| l).count();
    let majority = n_l.max(m - n_l) as f64 / m as f64;

    let mut found: Vec<SurrogateSplit> = Vec::new();
    let mut triples: Vec<(f64, f64, bool)> = Vec::with_capacity(m);
    for k in 0..data.p() {
        if k == primary {
            continue;
        }
        triples.clear();
        triples.extend(
            rows.iter()
                .zip(goes_left)
                .map(|(&i, &l)| (data.feature(i, k), data.response()[i], l)),
        );
        triples.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let total_y: f64 = triples.iter().map(|t| t.1).sum();
        let total_y2: f64 = triples.iter().map(|t| t.1 * t.1).sum();

        let mut best_for_k: Option<SurrogateSplit> = None;
        let (mut prefl, mut sum_l, mut sum2_l) = (0usize, 0.0f64, 0.0f64);
        for i in 1..m {
            if triples[i - 1].2 {
                prefl += 1;
            }
            sum_l += triples[i - 1].1;
            sum2_l += triples[i - 1].1 * triples[i - 1].1;
            if triples[i - 1].0 == triples[i].0 {
                continue;
            }
            // matches when "x <= s goes left": agreeing rows among the first
            // i plus agreeing rows among the rest.
            let straight = (2 * prefl + m) as i64 - (i + n_l) as i64;
            let flipped = m as i64 - straight;
            let (matches, flip) = if straight >= flipped {
                (straight, false)
            } else {
                (flipped, true)
            };
            let agreement = matches as f64 / m as f64;
            if best_for_k.as_ref().map_or(true, |b| agreement > b.agreement) {
                let nl = i as f64;
                let nr = (m - i) as f64;
                let sse = (sum2_l - sum_l * sum_l / nl)
                    + ((total_y2 - sum2_l) - (total_y - sum_l).powi(2) / nr);
                best_for_k = Some(SurrogateSplit {
                    feature: k,
                    threshold: 0.5 * (triples[i - 1].0 + triples[i].0),
                    agreement,
                    flipped: flip,
                    dev_reduction: (node_dev - sse).max(0.0),
                });
            }
        }
        if let Some(s) = best_for_k {
            if s.agreement > majority {
                found.push(s);
            }
        }
    }
    found.sort_by(|a, b| {
        b.agreement
            .total_cmp(&a.agreement)
            .then(a.feature.cmp(&b.feature))
    });
    found.truncate(max_surrogates);
    found
}

/// Predict the response for one feature vector.
///
/// A `NaN` entry marks a withheld value: routing then falls back to the
/// node's surrogates in agreement order and finally to the majority child.
pub fn predict_tree(tree: &RegressionTree, x: &[f64]) -> Result<f64> {
    if x.len() != tree.feature_count {
        return Err(Error::LengthMismatch {
            got: x.len(),
            expected: tree.feature_count,
        });
    }
    Ok(predict_node(&tree.root, x))
}

pub(crate) fn predict_node(mut node: &TreeNode, x: &[f64]) -> f64 {
    loop {
        match node {
            TreeNode::Leaf(l) => return l.mean,
            TreeNode::Internal(n) => {
                let v = x[n.feature];
                let go_left = if v.is_nan() {
                    surrogate_direction(n, x)
                } else {
                    v <= n.threshold
                };
                node = if go_left { &n.left } else { &n.right };
            }
        }
    }
}

fn surrogate_direction(node: &InternalNode, x: &[f64]) -> bool {
    for s in &node.surrogates {
        let w = x[s.feature];
        if !w.is_nan() {
            return (w <= s.threshold) != s.flipped;
        }
    }
    node.left.count() >= node.right.count()
}

/// Weakest-link pruning: build the nested subtree sequence and return the
/// subtree with the smallest mean squared error on `data_test` (ties go to
/// the smaller subtree).
pub fn prune_cost_complexity(tree: &RegressionTree, data_test: &Dataset) -> Result<RegressionTree> {
    if data_test.n() == 0 {
        return Err(Error::EmptyTestSet);
    }
    if data_test.p() != tree.feature_count {
        return Err(Error::LengthMismatch {
            got: data_test.p(),
            expected: tree.feature_count,
        });
    }
    if tree.root.is_leaf() {
        return Ok(tree.clone());
    }

    let arena = Arena::build(&tree.root);
    let mut collapsed = vec![false; arena.nodes.len()];
    let mut snapshots = vec![collapsed.clone()];
    loop {
        let active = arena.active_internals(&collapsed);
        if active.is_empty() {
            break;
        }
        let mut g_min = f64::INFINITY;
        let mut g_vals = Vec::with_capacity(active.len());
        for &t in &active {
            let (leaf_dev, leaves) = arena.active_leaf_stats(t, &collapsed);
            let g = (arena.nodes[t].node_dev - leaf_dev) / (leaves - 1) as f64;
            g_vals.push(g);
            if g < g_min {
                g_min = g;
            }
        }
        for (&t, &g) in active.iter().zip(&g_vals) {
            if g == g_min {
                collapsed[t] = true;
            }
        }
        snapshots.push(collapsed.clone());
    }

    // Pick the subtree with minimal test MSE, preferring later snapshots
    // (smaller trees) on ties.
    let mut best_idx = 0;
    let mut best_mse = f64::INFINITY;
    for (s, snap) in snapshots.iter().enumerate() {
        let mse = arena.test_mse(snap, data_test);
        if mse <= best_mse {
            best_mse = mse;
            best_idx = s;
        }
    }

    let root = arena.materialize(0, &snapshots[best_idx], &tree.root);
    let n_root = tree.root.count();
    let training_mse = root.leaf_deviance() / n_root as f64;
    Ok(RegressionTree {
        root,
        min_node: tree.min_node,
        feature_count: tree.feature_count,
        training_mse,
        constant_response: tree.constant_response,
    })
}

struct ArenaNode {
    is_leaf: bool,
    feature: usize,
    threshold: f64,
    left: usize,
    right: usize,
    node_dev: f64,
    node_mean: f64,
}

struct Arena {
    nodes: Vec<ArenaNode>,
}

impl Arena {
    fn build(root: &TreeNode) -> Self {
        let mut nodes = Vec::new();
        Self::push(root, &mut nodes);
        Arena { nodes }
    }

    fn push(node: &TreeNode, nodes: &mut Vec<ArenaNode>) -> usize {
        let id = nodes.len();
        match node {
            TreeNode::Leaf(l) => {
                nodes.push(ArenaNode {
                    is_leaf: true,
                    feature: 0,
                    threshold: 0.0,
                    left: usize::MAX,
                    right: usize::MAX,
                    node_dev: l.deviance,
                    node_mean: l.mean,
                });
            }
            TreeNode::Internal(n) => {
                nodes.push(ArenaNode {
                    is_leaf: false,
                    feature: n.feature,
                    threshold: n.threshold,
                    left: usize::MAX,
                    right: usize::MAX,
                    node_dev: node.node_deviance(),
                    node_mean: node.node_mean(),
                });
                let left = Self::push(&n.left, nodes);
                let right = Self::push(&n.right, nodes);
                nodes[id].left = left;
                nodes[id].right = right;
            }
        }
        id
    }

    /// Internal nodes still acting as internals in the collapsed view.
    fn active_internals(&self, collapsed: &[bool]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(t) = stack.pop() {
            let node = &self.nodes[t];
            if node.is_leaf || collapsed[t] {
                continue;
            }
            out.push(t);
            stack.push(node.left);
            stack.push(node.right);
        }
        out
    }

    /// Sum of active-leaf deviances and active-leaf count under `t`.
    fn active_leaf_stats(&self, t: usize, collapsed: &[bool]) -> (f64, usize) {
        let node = &self.nodes[t];
        if node.is_leaf || collapsed[t] {
            return (node.node_dev, 1);
        }
        let (dl, nl) = self.active_leaf_stats(node.left, collapsed);
        let (dr, nr) = self.active_leaf_stats(node.right, collapsed);
        (dl + dr, nl + nr)
    }

    fn test_mse(&self, collapsed: &[bool], test: &Dataset) -> f64 {
        let mut sse = 0.0;
        for i in 0..test.n() {
            let x = test.row(i);
            let mut t = 0usize;
            loop {
                let node = &self.nodes[t];
                if node.is_leaf || collapsed[t] {
                    let d = test.response()[i] - node.node_mean;
                    sse += d * d;
                    break;
                }
                t = if x[node.feature] <= node.threshold {
                    node.left
                } else {
                    node.right
                };
            }
        }
        sse / test.n() as f64
    }

    /// Rebuild the collapsed view as an owned tree, mirroring `original`.
    fn materialize(&self, id: usize, collapsed: &[bool], original: &TreeNode) -> TreeNode {
        match original {
            TreeNode::Leaf(_) => original.clone(),
            TreeNode::Internal(n) => {
                if collapsed[id] {
                    return TreeNode::Leaf(LeafNode {
                        mean: self.nodes[id].node_mean,
                        count: n.count,
                        deviance: self.nodes[id].node_dev,
                    });
                }
                let left = self.materialize(self.nodes[id].left, collapsed, &n.left);
                let right = self.materialize(self.nodes[id].right, collapsed, &n.right);
                TreeNode::Internal(InternalNode {
                    feature: n.feature,
                    threshold: n.threshold,
                    surrogates: n.surrogates.clone(),
                    dev_reduction: n.dev_reduction,
                    count: n.count,
                    left: Box::new(left),
                    right: Box::new(right),
                })
            }
        }
    }
}

/// Deviance-based variable importance: each internal node credits its full
/// deviance reduction to the primary splitter and each surrogate's own
/// deviance reduction to the surrogate feature (taking the larger reduction
/// if a feature appears more than once among a node's surrogates).
pub fn cart_vi(tree: &RegressionTree) -> ViReport {
    let mut raw = vec![0.0; tree.feature_count];
    accumulate_vi(&tree.root, &mut raw);
    let max = raw.iter().cloned().fold(0.0f64, f64::max);
    let normalized = if max > 0.0 {
        raw.iter().map(|&v| 100.0 * v / max).collect()
    } else {
        vec![0.0; raw.len()]
    };
    ViReport::new(ViMethod::Cart, raw, Some(normalized))
}

fn accumulate_vi(node: &TreeNode, raw: &mut [f64]) {
    if let TreeNode::Internal(n) = node {
        raw[n.feature] += n.dev_reduction;
        let mut credited: Vec<(usize, f64)> = Vec::with_capacity(n.surrogates.len());
        for s in &n.surrogates {
            match credited.iter_mut().find(|(f, _)| *f == s.feature) {
                Some((_, d)) => *d = d.max(s.dev_reduction),
                None => credited.push((s.feature, s.dev_reduction)),
            }
        }
        for (f, d) in credited {
            raw[f] += d;
        }
        accumulate_vi(&n.left, raw);
        accumulate_vi(&n.right, raw);
    }
}
