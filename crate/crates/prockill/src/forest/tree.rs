//! Single CART decision tree with Gini-impurity splits.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::telemetry::feature;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: u8,
    },
}

/// Binary classification tree over the 26-feature schema. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn predict(&self, features: &[f64]) -> u8 {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { class } => return *class,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if features[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Gini impurity of a two-class count pair.
pub fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p0 = counts[0] as f64 / n;
    let p1 = counts[1] as f64 / n;
    1.0 - p0 * p0 - p1 * p1
}

#[derive(Debug, Clone, Copy)]
pub(super) struct GrowConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features considered per split; the full set when >= feature::COUNT.
    pub feature_subsample: usize,
}

/// Majority class with ties resolved to benign (0).
fn majority(counts: [usize; 2]) -> u8 {
    if counts[1] > counts[0] {
        1
    } else {
        0
    }
}

/// Greedy top-down growth over the sample indices.
pub(super) fn grow_tree(
    xs: &[crate::telemetry::FeatureVector],
    ys: &[u8],
    indices: &mut [usize],
    config: &GrowConfig,
    rng: &mut ChaCha8Rng,
) -> DecisionTree {
    let mut nodes = Vec::new();
    let mut all_features: Vec<usize> = (0..feature::COUNT).collect();
    grow_node(xs, ys, indices, 0, config, rng, &mut nodes, &mut all_features);
    DecisionTree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn grow_node(
    xs: &[crate::telemetry::FeatureVector],
    ys: &[u8],
    indices: &mut [usize],
    depth: usize,
    config: &GrowConfig,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<TreeNode>,
    feature_pool: &mut Vec<usize>,
) -> usize {
    let mut counts = [0usize; 2];
    for &i in indices.iter() {
        counts[ys[i] as usize] += 1;
    }

    let pure = counts[0] == 0 || counts[1] == 0;
    if pure || depth >= config.max_depth || indices.len() < 2 * config.min_samples_leaf {
        let id = nodes.len();
        nodes.push(TreeNode::Leaf {
            class: majority(counts),
        });
        return id;
    }

    // candidate features: a random subset, or every feature when the
    // subsample covers the schema
    let k = config.feature_subsample.min(feature::COUNT);
    let candidates: Vec<usize> = if k >= feature::COUNT {
        feature_pool.clone()
    } else {
        feature_pool.shuffle(rng);
        let mut chosen = feature_pool[..k].to_vec();
        chosen.sort_unstable();
        chosen
    };

    let mut best: Option<(f64, usize, f64)> = None; // (weighted gini, feature, threshold)
    let n = indices.len() as f64;
    let mut order: Vec<usize> = Vec::with_capacity(indices.len());
    for &f in &candidates {
        order.clear();
        order.extend_from_slice(indices);
        order.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]));

        let mut left = [0usize; 2];
        let mut right = counts;
        for split_at in 1..order.len() {
            let moved = order[split_at - 1];
            left[ys[moved] as usize] += 1;
            right[ys[moved] as usize] -= 1;

            let prev = xs[order[split_at - 1]][f];
            let next = xs[order[split_at]][f];
            if prev == next {
                continue;
            }
            if split_at < config.min_samples_leaf
                || order.len() - split_at < config.min_samples_leaf
            {
                continue;
            }
            let weighted = (split_at as f64 * gini(left)
                + (order.len() - split_at) as f64 * gini(right))
                / n;
            let threshold = prev + (next - prev) / 2.0;
            let better = match best {
                None => true,
                Some((score, _, _)) => weighted < score,
            };
            if better {
                best = Some((weighted, f, threshold));
            }
        }
    }

    let Some((_, f, threshold)) = best else {
        let id = nodes.len();
        nodes.push(TreeNode::Leaf {
            class: majority(counts),
        });
        return id;
    };

    let mid = partition(xs, indices, f, threshold);
    let id = nodes.len();
    nodes.push(TreeNode::Leaf { class: 0 }); // placeholder until children exist
    let (left_slice, right_slice) = indices.split_at_mut(mid);
    let left = grow_node(xs, ys, left_slice, depth + 1, config, rng, nodes, feature_pool);
    let right = grow_node(xs, ys, right_slice, depth + 1, config, rng, nodes, feature_pool);
    nodes[id] = TreeNode::Split {
        feature: f,
        threshold,
        left,
        right,
    };
    id
}

/// Stable partition of indices by the split predicate; returns the size of
/// the left side.
fn partition(
    xs: &[crate::telemetry::FeatureVector],
    indices: &mut [usize],
    f: usize,
    threshold: f64,
) -> usize {
    let mut reordered: Vec<usize> = Vec::with_capacity(indices.len());
    reordered.extend(indices.iter().copied().filter(|&i| xs[i][f] <= threshold));
    let mid = reordered.len();
    reordered.extend(indices.iter().copied().filter(|&i| xs[i][f] > threshold));
    indices.copy_from_slice(&reordered);
    mid
}
