//! Random forest over binary features: bootstrap-sampled CART trees with
//! Gini splits and majority-vote prediction.
//!
//! Split scores are compared with exact integer arithmetic (u128 cross
//! multiplication), so candidate ordering and ties are reproducible across
//! platforms. A binary feature is never re-split on the same path.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::ForestError;
use crate::mix_seed;
use crate::store::CategoryLabel;
use crate::windows::FeatureVector;

/// Row-major bit-packed binary feature matrix.
#[derive(Debug, Clone)]
pub struct BitMatrix {
    n_rows: usize,
    n_cols: usize,
    words_per_row: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn new(n_cols: usize) -> BitMatrix {
        BitMatrix {
            n_rows: 0,
            n_cols,
            words_per_row: n_cols.div_ceil(64),
            data: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: &FeatureVector) {
        assert_eq!(row.len, self.n_cols, "row width mismatch");
        self.data.extend_from_slice(&row.words);
        self.n_rows += 1;
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        let word = self.data[row * self.words_per_row + col / 64];
        word >> (col % 64) & 1 == 1
    }

    /// Copy the given rows into a new matrix.
    pub fn select(&self, rows: &[u32]) -> BitMatrix {
        let mut out = BitMatrix::new(self.n_cols);
        out.data.reserve(rows.len() * self.words_per_row);
        for &r in rows {
            let start = r as usize * self.words_per_row;
            out.data
                .extend_from_slice(&self.data[start..start + self.words_per_row]);
        }
        out.n_rows = rows.len();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until purity or feature exhaustion.
    pub max_depth: Option<u32>,
    pub features_per_split: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    /// Test hook; production forests always bootstrap.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 75,
            tree: TreeParams {
                max_depth: None,
                features_per_split: 0,
            },
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        /// Class counts of the node's training subset.
        counts: Vec<u32>,
    },
    Split {
        feature: u32,
        zero: Box<TreeNode>,
        one: Box<TreeNode>,
    },
}

impl TreeNode {
    fn leaf_for(&self, row: &FeatureVector) -> &[u32] {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { counts } => return counts,
                TreeNode::Split { feature, zero, one } => {
                    node = if row.get(*feature as usize) {
                        one
                    } else {
                        zero
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> u32 {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { zero, one, .. } => 1 + zero.depth().max(one.depth()),
        }
    }
}

/// Fit one CART tree on all rows of `x`. Deterministic given the rng state.
pub fn fit_tree(
    x: &BitMatrix,
    y: &[u32],
    n_labels: usize,
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> Result<TreeNode, ForestError> {
    if x.n_rows() != y.len() || y.is_empty() {
        return Err(ForestError::ShapeMismatch {
            rows: x.n_rows(),
            labels: y.len(),
        });
    }
    let rows: Vec<u32> = (0..x.n_rows() as u32).collect();
    let mut used = vec![false; x.n_cols()];
    Ok(grow(x, y, n_labels, rows, &mut used, 0, params, rng))
}

#[allow(clippy::too_many_arguments)]
fn grow(
    x: &BitMatrix,
    y: &[u32],
    n_labels: usize,
    rows: Vec<u32>,
    used: &mut [bool],
    depth: u32,
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let mut counts = vec![0u32; n_labels];
    for &r in &rows {
        counts[y[r as usize] as usize] += 1;
    }
    let n = rows.len() as u64;
    let s_node: u64 = counts.iter().map(|&c| c as u64 * c as u64).sum();
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    let depth_capped = params.max_depth.is_some_and(|d| depth >= d);
    let unused: Vec<u32> = (0..x.n_cols() as u32)
        .filter(|&f| !used[f as usize])
        .collect();
    if pure || depth_capped || unused.is_empty() {
        return TreeNode::Leaf { counts };
    }

    let k = params.features_per_split.clamp(1, unused.len());
    let mut candidates: Vec<u32> = if k == unused.len() {
        unused
    } else {
        sample(rng, unused.len(), k)
            .into_iter()
            .map(|i| unused[i])
            .collect()
    };
    // Ascending scan with strictly-greater updates keeps the smallest
    // feature index on score ties.
    candidates.sort_unstable();

    let mut best: Option<(u32, SplitScore)> = None;
    let mut c1 = vec![0u32; n_labels];
    for &f in &candidates {
        c1.iter_mut().for_each(|c| *c = 0);
        let mut n1 = 0u64;
        for &r in &rows {
            if x.get(r as usize, f as usize) {
                c1[y[r as usize] as usize] += 1;
                n1 += 1;
            }
        }
        let n0 = n - n1;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s1: u64 = c1.iter().map(|&c| c as u64 * c as u64).sum();
        let s0: u64 = counts
            .iter()
            .zip(&c1)
            .map(|(&c, &c1)| {
                let c0 = (c - c1) as u64;
                c0 * c0
            })
            .sum();
        let score = SplitScore {
            numer: s0 * n1 + s1 * n0,
            denom: n0 * n1,
        };
        // Must strictly reduce impurity: s0/n0 + s1/n1 > s_node/n.
        if (score.numer as u128) * (n as u128) <= (s_node as u128) * (score.denom as u128) {
            continue;
        }
        if best.as_ref().is_none_or(|(_, b)| score.beats(b)) {
            best = Some((f, score));
        }
    }

    let Some((feature, _)) = best else {
        return TreeNode::Leaf { counts };
    };

    let (one_rows, zero_rows): (Vec<u32>, Vec<u32>) = rows
        .into_iter()
        .partition(|&r| x.get(r as usize, feature as usize));
    used[feature as usize] = true;
    let zero = grow(x, y, n_labels, zero_rows, used, depth + 1, params, rng);
    let one = grow(x, y, n_labels, one_rows, used, depth + 1, params, rng);
    used[feature as usize] = false;
    TreeNode::Split {
        feature,
        zero: Box::new(zero),
        one: Box::new(one),
    }
}

/// Split quality `s0/n0 + s1/n1` as an exact fraction; larger means lower
/// weighted Gini impurity.
struct SplitScore {
    numer: u64,
    denom: u64,
}

impl SplitScore {
    fn beats(&self, other: &SplitScore) -> bool {
        (self.numer as u128) * (other.denom as u128) > (other.numer as u128) * (self.denom as u128)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub params: ForestParams,
    /// Sorted label set; tree leaf counts index into it.
    pub labels: Vec<CategoryLabel>,
    pub n_features: usize,
    pub seed: u64,
    /// Layout hash of the feature dictionary the model was fitted against.
    pub dict_hash: u64,
}

/// Fit `n_trees` trees, each on a bootstrap sample drawn from a per-tree
/// rng derived from `seed` and the tree index.
pub fn fit_forest(
    x: &BitMatrix,
    y: &[u32],
    labels: &[CategoryLabel],
    params: &ForestParams,
    seed: u64,
    dict_hash: u64,
) -> Result<ForestModel, ForestError> {
    if x.n_rows() != y.len() || y.is_empty() {
        return Err(ForestError::ShapeMismatch {
            rows: x.n_rows(),
            labels: y.len(),
        });
    }
    debug_assert!(
        labels.windows(2).all(|w| w[0] < w[1]),
        "labels must be sorted"
    );
    let distinct = {
        let mut seen = vec![false; labels.len()];
        y.iter().for_each(|&l| seen[l as usize] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(ForestError::SingleClass);
    }

    let n = x.n_rows();
    let trees: Result<Vec<TreeNode>, ForestError> = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            if params.bootstrap {
                let rows: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n as u32)).collect();
                let mut used = vec![false; x.n_cols()];
                Ok(grow(
                    x,
                    y,
                    labels.len(),
                    rows,
                    &mut used,
                    0,
                    &params.tree,
                    &mut rng,
                ))
            } else {
                fit_tree(x, y, labels.len(), &params.tree, &mut rng)
            }
        })
        .collect();
    Ok(ForestModel {
        trees: trees?,
        params: *params,
        labels: labels.to_vec(),
        n_features: x.n_cols(),
        seed,
        dict_hash,
    })
}

impl ForestModel {
    /// Majority vote over trees; leaf and vote ties break to the
    /// lexicographically smallest label.
    pub fn predict(&self, row: &FeatureVector) -> Result<&CategoryLabel, ForestError> {
        Ok(&self.labels[self.predict_id(row)? as usize])
    }

    pub fn predict_id(&self, row: &FeatureVector) -> Result<u32, ForestError> {
        if row.len != self.n_features {
            return Err(ForestError::VectorLength {
                expected: self.n_features,
                got: row.len,
            });
        }
        let mut votes = vec![0u32; self.labels.len()];
        for tree in &self.trees {
            votes[argmax_first(tree.leaf_for(row))] += 1;
        }
        debug_assert_eq!(votes.iter().sum::<u32>() as usize, self.trees.len());
        Ok(argmax_first(&votes) as u32)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest model json")
    }

    /// Load a model, validating it against the dictionary layout hash it
    /// will be used with.
    pub fn from_json(text: &str, expected_dict_hash: u64) -> Result<ForestModel, ForestError> {
        let model: ForestModel =
            serde_json::from_str(text).map_err(|e| ForestError::BadDocument(e.to_string()))?;
        if model.dict_hash != expected_dict_hash {
            return Err(ForestError::DictionaryMismatch);
        }
        Ok(model)
    }
}

/// Index of the maximum, first (= lexicographically smallest label) on ties.
fn argmax_first(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub max_depths: Vec<Option<u32>>,
    pub features_per_split: Vec<usize>,
    pub folds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvRow {
    pub max_depth: Option<u32>,
    pub features_per_split: usize,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

/// Stratified k-fold grid search. Returns the winning point (ties broken
/// by smaller depth, then fewer features per split) and the full CV table.
pub fn grid_search_cv(
    x: &BitMatrix,
    y: &[u32],
    labels: &[CategoryLabel],
    n_trees: usize,
    grid: &HyperGrid,
    seed: u64,
) -> Result<(TreeParams, Vec<CvRow>), ForestError> {
    if grid.max_depths.is_empty() || grid.features_per_split.is_empty() || grid.folds < 2 {
        return Err(ForestError::EmptyGrid);
    }
    if x.n_rows() < grid.folds {
        return Err(ForestError::TooFewRows {
            rows: x.n_rows(),
            folds: grid.folds,
        });
    }

    // Round-robin fold assignment within each label keeps folds stratified
    // and deterministic; staggered starts keep small labels spread out.
    let mut fold_of = vec![0usize; y.len()];
    let mut next_fold: Vec<usize> = (0..labels.len()).map(|l| l % grid.folds).collect();
    for (row, &label) in y.iter().enumerate() {
        fold_of[row] = next_fold[label as usize];
        next_fold[label as usize] = (next_fold[label as usize] + 1) % grid.folds;
    }
    let mut fold_rows: Vec<Vec<u32>> = vec![Vec::new(); grid.folds];
    for (row, &fold) in fold_of.iter().enumerate() {
        fold_rows[fold].push(row as u32);
    }

    let mut table = Vec::new();
    let mut best: Option<(TreeParams, f64)> = None;
    for (di, &max_depth) in grid.max_depths.iter().enumerate() {
        for (mi, &features_per_split) in grid.features_per_split.iter().enumerate() {
            let mut fold_accuracy = Vec::with_capacity(grid.folds);
            for (k, test_rows) in fold_rows.iter().enumerate() {
                let train_rows: Vec<u32> = (0..y.len() as u32)
                    .filter(|&r| fold_of[r as usize] != k)
                    .collect();
                let x_train = x.select(&train_rows);
                let y_train: Vec<u32> = train_rows.iter().map(|&r| y[r as usize]).collect();
                let params = ForestParams {
                    n_trees,
                    tree: TreeParams {
                        max_depth,
                        features_per_split,
                    },
                    bootstrap: true,
                };
                let model = fit_forest(
                    &x_train,
                    &y_train,
                    labels,
                    &params,
                    mix_seed(&[seed, di as u64, mi as u64, k as u64]),
                    0,
                )?;
                let mut correct = 0usize;
                for &r in test_rows {
                    let row = row_vector(x, r as usize);
                    if model.predict_id(&row)? == y[r as usize] {
                        correct += 1;
                    }
                }
                fold_accuracy.push(correct as f64 / test_rows.len().max(1) as f64);
            }
            let mean_accuracy = fold_accuracy.iter().sum::<f64>() / grid.folds as f64;
            let params = TreeParams {
                max_depth,
                features_per_split,
            };
            let better = match &best {
                None => true,
                Some((b, acc)) => {
                    mean_accuracy > *acc
                        || (mean_accuracy == *acc && {
                            let key = |p: &TreeParams| {
                                (
                                    p.max_depth.map_or(u64::MAX, |d| d as u64),
                                    p.features_per_split,
                                )
                            };
                            key(&params) < key(b)
                        })
                }
            };
            if better {
                best = Some((params, mean_accuracy));
            }
            table.push(CvRow {
                max_depth,
                features_per_split,
                fold_accuracy,
                mean_accuracy,
            });
        }
    }
    Ok((best.expect("non-empty grid").0, table))
}

pub fn row_vector(x: &BitMatrix, row: usize) -> FeatureVector {
    let start = row * x.words_per_row;
    FeatureVector {
        len: x.n_cols,
        words: x.data[start..start + x.words_per_row].to_vec(),
    }
}
