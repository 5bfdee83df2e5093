//! Decision-tree primitives shared by the forest and boosting learners.
//!
//! Plain arena trees over dense feature rows. The forest builder grows
//! weighted-Gini classification trees on bootstrap samples with a random
//! feature subset per split; the boosting builder grows Newton-step
//! regression trees on gradient/hessian pairs with an L2-regularized
//! gain. Everything is deterministic for a fixed seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Every split must reference a feature below `n_features`.
    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

pub struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Number of candidate features per split; `n_features` disables
    /// feature subsampling.
    pub mtry: usize,
}

/// Candidate features for one split, sorted for deterministic iteration.
fn sample_features(n_features: usize, mtry: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if mtry >= n_features {
        return (0..n_features).collect();
    }
    let mut picked: Vec<usize> = (0..n_features).collect();
    for i in 0..mtry {
        let j = rng.gen_range(i..n_features);
        picked.swap(i, j);
    }
    picked.truncate(mtry);
    picked.sort_unstable();
    picked
}

/// Grow a classification tree on weighted binary labels. Leaves carry
/// the weighted positive fraction.
pub fn grow_classification_tree(
    rows: &[Vec<f64>],
    labels: &[u8],
    weights: &[f64],
    indices: &[usize],
    params: &GrowParams,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut tree = Tree { nodes: Vec::new() };
    grow_gini(rows, labels, weights, indices, params, rng, 0, &mut tree);
    tree
}

fn leaf_fraction(labels: &[u8], weights: &[f64], indices: &[usize]) -> f64 {
    let mut pos = 0.0;
    let mut total = 0.0;
    for &i in indices {
        total += weights[i];
        if labels[i] == 1 {
            pos += weights[i];
        }
    }
    if total > 0.0 {
        pos / total
    } else {
        0.0
    }
}

#[allow(clippy::too_many_arguments)]
fn grow_gini(
    rows: &[Vec<f64>],
    labels: &[u8],
    weights: &[f64],
    indices: &[usize],
    params: &GrowParams,
    rng: &mut ChaCha8Rng,
    depth: usize,
    tree: &mut Tree,
) -> usize {
    let make_leaf = |tree: &mut Tree| {
        let id = tree.nodes.len();
        tree.nodes.push(Node::Leaf {
            value: leaf_fraction(labels, weights, indices),
        });
        id
    };

    if depth >= params.max_depth || indices.len() < 2 * params.min_leaf {
        return make_leaf(tree);
    }
    let first = labels[indices[0]];
    if indices.iter().all(|&i| labels[i] == first) {
        return make_leaf(tree);
    }

    let n_features = rows[indices[0]].len();
    let candidates = sample_features(n_features, params.mtry, rng);

    let mut best: Option<(f64, usize, f64)> = None; // (impurity, feature, threshold)
    let mut column: Vec<(f64, u8, f64)> = Vec::with_capacity(indices.len());
    for &feature in &candidates {
        column.clear();
        column.extend(
            indices
                .iter()
                .map(|&i| (rows[i][feature], labels[i], weights[i])),
        );
        column.sort_by(|a, b| a.0.total_cmp(&b.0));

        let total_w: f64 = column.iter().map(|c| c.2).sum();
        let total_pos: f64 = column.iter().filter(|c| c.1 == 1).map(|c| c.2).sum();
        let mut left_w = 0.0;
        let mut left_pos = 0.0;
        for k in 0..column.len() - 1 {
            left_w += column[k].2;
            if column[k].1 == 1 {
                left_pos += column[k].2;
            }
            if column[k].0 == column[k + 1].0 {
                continue;
            }
            let left_n = k + 1;
            if left_n < params.min_leaf || column.len() - left_n < params.min_leaf {
                continue;
            }
            let right_w = total_w - left_w;
            let right_pos = total_pos - left_pos;
            let gini = |w: f64, pos: f64| {
                if w <= 0.0 {
                    0.0
                } else {
                    let p = pos / w;
                    w * 2.0 * p * (1.0 - p)
                }
            };
            let impurity = gini(left_w, left_pos) + gini(right_w, right_pos);
            if best.is_none_or(|(b, _, _)| impurity < b) {
                let threshold = (column[k].0 + column[k + 1].0) / 2.0;
                best = Some((impurity, feature, threshold));
            }
        }
    }

    let Some((_, feature, threshold)) = best else {
        return make_leaf(tree);
    };

    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| rows[i][feature] <= threshold);

    let id = tree.nodes.len();
    tree.nodes.push(Node::Leaf { value: 0.0 }); // placeholder
    let left = grow_gini(
        rows,
        labels,
        weights,
        &left_idx,
        params,
        rng,
        depth + 1,
        tree,
    );
    let right = grow_gini(
        rows,
        labels,
        weights,
        &right_idx,
        params,
        rng,
        depth + 1,
        tree,
    );
    tree.nodes[id] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    id
}

/// Grow a Newton-step regression tree on gradients/hessians with L2
/// regularization `lambda`. Leaves carry `-G / (H + lambda)`.
pub fn grow_regression_tree(
    rows: &[Vec<f64>],
    gradients: &[f64],
    hessians: &[f64],
    indices: &[usize],
    params: &GrowParams,
    lambda: f64,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut tree = Tree { nodes: Vec::new() };
    grow_newton(
        rows, gradients, hessians, indices, params, lambda, rng, 0, &mut tree,
    );
    tree
}

#[allow(clippy::too_many_arguments)]
fn grow_newton(
    rows: &[Vec<f64>],
    gradients: &[f64],
    hessians: &[f64],
    indices: &[usize],
    params: &GrowParams,
    lambda: f64,
    rng: &mut ChaCha8Rng,
    depth: usize,
    tree: &mut Tree,
) -> usize {
    let sum = |idx: &[usize]| -> (f64, f64) {
        idx.iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + gradients[i], h + hessians[i]))
    };
    let make_leaf = |tree: &mut Tree, g: f64, h: f64| {
        let id = tree.nodes.len();
        tree.nodes.push(Node::Leaf {
            value: -g / (h + lambda),
        });
        id
    };

    let (total_g, total_h) = sum(indices);
    if depth >= params.max_depth || indices.len() < 2 * params.min_leaf {
        return make_leaf(tree, total_g, total_h);
    }

    let n_features = rows[indices[0]].len();
    let candidates = sample_features(n_features, params.mtry, rng);
    let parent_score = total_g * total_g / (total_h + lambda);

    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    let mut column: Vec<(f64, f64, f64)> = Vec::with_capacity(indices.len());
    for &feature in &candidates {
        column.clear();
        column.extend(
            indices
                .iter()
                .map(|&i| (rows[i][feature], gradients[i], hessians[i])),
        );
        column.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut left_g = 0.0;
        let mut left_h = 0.0;
        for k in 0..column.len() - 1 {
            left_g += column[k].1;
            left_h += column[k].2;
            if column[k].0 == column[k + 1].0 {
                continue;
            }
            let left_n = k + 1;
            if left_n < params.min_leaf || column.len() - left_n < params.min_leaf {
                continue;
            }
            let right_g = total_g - left_g;
            let right_h = total_h - left_h;
            let gain = left_g * left_g / (left_h + lambda) + right_g * right_g / (right_h + lambda)
                - parent_score;
            if gain > 1e-12 && best.is_none_or(|(b, _, _)| gain > b) {
                let threshold = (column[k].0 + column[k + 1].0) / 2.0;
                best = Some((gain, feature, threshold));
            }
        }
    }

    let Some((_, feature, threshold)) = best else {
        return make_leaf(tree, total_g, total_h);
    };

    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .iter()
        .partition(|&&i| rows[i][feature] <= threshold);

    let id = tree.nodes.len();
    tree.nodes.push(Node::Leaf { value: 0.0 });
    let left = grow_newton(
        rows,
        gradients,
        hessians,
        &left_idx,
        params,
        lambda,
        rng,
        depth + 1,
        tree,
    );
    let right = grow_newton(
        rows,
        gradients,
        hessians,
        &right_idx,
        params,
        lambda,
        rng,
        depth + 1,
        tree,
    );
    tree.nodes[id] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    id
}
