//! Random forest of Gini-split binary decision trees.
//!
//! Determinism is part of the contract: per-tree RNG streams are derived
//! from the master seed and the tree index, candidate features are tried in
//! ascending order, split scores are compared with strict `<`, and votes
//! break ties toward the lowest class id. Training the same data with the
//! same seed reproduces every prediction bit-for-bit, regardless of the
//! thread count.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

use super::LabeledPixels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        /// Values `<= threshold` descend left. Thresholds are midpoints
        /// between consecutive distinct feature values, kept in f64 so they
        /// always fall strictly between the two f32 neighbours.
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        /// Training-sample count per class reaching this leaf.
        counts: Vec<u32>,
    },
}

/// One trained decision tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    /// Class vote for one sample: argmax of the reached leaf distribution,
    /// ties resolved toward the lowest class id.
    pub fn predict(&self, sample: &[f32]) -> u32 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if (sample[*feature] as f64) <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { counts } => {
                    let mut best = 0;
                    for (c, &n) in counts.iter().enumerate() {
                        if n > counts[best] {
                            best = c;
                        }
                    }
                    return best as u32;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    #[cfg(test)]
    fn leaf_count_totals(&self) -> Vec<u64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { counts } => Some(counts.iter().map(|&c| c as u64).sum::<u64>()),
                _ => None,
            })
            .collect()
    }
}

/// Training options beyond the reference protocol's tree count and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestOptions {
    /// Features tried per node; defaults to ⌊√d⌋ (min 1).
    pub mtry: Option<usize>,
    /// Bootstrap resampling of the training set per tree. Disabling it is a
    /// diagnostic mode in which a forest must reach training accuracy 1 on
    /// data it can shatter.
    pub bootstrap: bool,
}

impl Default for ForestOptions {
    fn default() -> Self {
        Self {
            mtry: None,
            bootstrap: true,
        }
    }
}

/// Trained random forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<DecisionTree>,
    n_classes: usize,
    n_features: usize,
    mtry: usize,
    master_seed: u64,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn mtry(&self) -> usize {
        self.mtry
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    /// Majority vote over trees; ties break toward the lowest class id.
    pub fn predict_one(&self, sample: &[f32]) -> u32 {
        let mut votes = vec![0u32; self.n_classes];
        for tree in &self.trees {
            votes[tree.predict(sample) as usize] += 1;
        }
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        best as u32
    }

    /// Predict a row-major feature matrix (n × d).
    pub fn predict(&self, features: &[f32], dim: usize) -> Result<Vec<u32>> {
        if dim != self.n_features || !features.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!(
                "feature rows of width {dim} for a model trained on {} features",
                self.n_features
            )));
        }
        Ok(features
            .par_chunks(dim)
            .map(|row| self.predict_one(row))
            .collect())
    }
}

struct TreeBuilder<'a> {
    data: &'a LabeledPixels,
    mtry: usize,
    rng: ChaCha12Rng,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn class_counts(&self, indices: &[u32]) -> Vec<u32> {
        let mut counts = vec![0u32; self.data.n_classes()];
        for &i in indices {
            counts[self.data.labels()[i as usize] as usize] += 1;
        }
        counts
    }

    fn gini(counts: &[u32], total: f64) -> f64 {
        let mut g = 1.0;
        for &c in counts {
            let p = c as f64 / total;
            g -= p * p;
        }
        g
    }

    /// Candidate features for one node: mtry distinct indices, ascending.
    fn sample_features(&mut self) -> Vec<usize> {
        let d = self.data.dim();
        if self.mtry >= d {
            return (0..d).collect();
        }
        // partial Fisher-Yates on an index pool
        let mut pool: Vec<usize> = (0..d).collect();
        for i in 0..self.mtry {
            let j = self.rng.random_range(i..d);
            pool.swap(i, j);
        }
        let mut picked = pool[..self.mtry].to_vec();
        picked.sort_unstable();
        picked
    }

    fn build_node(&mut self, indices: Vec<u32>) -> u32 {
        let counts = self.class_counts(&indices);
        let total = indices.len() as f64;
        let n_present = counts.iter().filter(|&&c| c > 0).count();
        if n_present <= 1 || indices.len() < 2 {
            self.nodes.push(Node::Leaf { counts });
            return (self.nodes.len() - 1) as u32;
        }

        let candidates = self.sample_features();
        let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)
        let mut sorted: Vec<(f32, u32)> = Vec::with_capacity(indices.len());
        for &f in &candidates {
            sorted.clear();
            sorted.extend(indices.iter().map(|&i| {
                (
                    self.data.feature(i as usize, f),
                    self.data.labels()[i as usize],
                )
            }));
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));

            let mut left = vec![0u32; self.data.n_classes()];
            let mut right = counts.clone();
            for w in 0..sorted.len() - 1 {
                let (value, label) = sorted[w];
                left[label as usize] += 1;
                right[label as usize] -= 1;
                let next = sorted[w + 1].0;
                if next <= value {
                    continue; // not a boundary between distinct values
                }
                let nl = (w + 1) as f64;
                let nr = total - nl;
                let score = (nl * Self::gini(&left, nl) + nr * Self::gini(&right, nr)) / total;
                let threshold = (value as f64 + next as f64) / 2.0;
                // strict < keeps the lowest feature index, then the lowest
                // threshold, on ties
                if best.is_none_or(|(s, _, _)| score < s) {
                    best = Some((score, f, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            // candidates were constant over this node
            self.nodes.push(Node::Leaf { counts });
            return (self.nodes.len() - 1) as u32;
        };

        let (left_idx, right_idx): (Vec<u32>, Vec<u32>) = indices
            .into_iter()
            .partition(|&i| (self.data.feature(i as usize, feature) as f64) <= threshold);
        debug_assert!(!left_idx.is_empty() && !right_idx.is_empty());

        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { counts: Vec::new() }); // placeholder
        let left = self.build_node(left_idx);
        let right = self.build_node(right_idx);
        self.nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot as u32
    }
}

fn train_tree(data: &LabeledPixels, mtry: usize, tree_seed: u64, bootstrap: bool) -> DecisionTree {
    let mut rng = ChaCha12Rng::seed_from_u64(tree_seed);
    let n = data.len();
    let indices: Vec<u32> = if bootstrap {
        (0..n).map(|_| rng.random_range(0..n) as u32).collect()
    } else {
        (0..n as u32).collect()
    };
    let mut builder = TreeBuilder {
        data,
        mtry,
        rng,
        nodes: Vec::new(),
    };
    let root = builder.build_node(indices);
    debug_assert_eq!(root, 0);
    DecisionTree {
        nodes: builder.nodes,
    }
}

/// Train a forest with default options (bootstrap on, mtry = ⌊√d⌋).
pub fn train_forest(data: &LabeledPixels, n_trees: usize, master_seed: u64) -> Result<ForestModel> {
    train_forest_with(data, n_trees, master_seed, ForestOptions::default())
}

/// Train a forest; trees are grown in parallel on derived seeds.
pub fn train_forest_with(
    data: &LabeledPixels,
    n_trees: usize,
    master_seed: u64,
    options: ForestOptions,
) -> Result<ForestModel> {
    if n_trees == 0 {
        return Err(Error::InvalidInput("forest needs at least one tree".into()));
    }
    if data.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "training needs at least 2 samples, got {}",
            data.len()
        )));
    }
    let present = {
        let mut seen = vec![false; data.n_classes()];
        for &l in data.labels() {
            seen[l as usize] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if present < 2 {
        return Err(Error::Degenerate(
            "training data holds a single class".into(),
        ));
    }
    let d = data.dim();
    let mtry = options
        .mtry
        .unwrap_or_else(|| (d as f64).sqrt().floor() as usize)
        .clamp(1, d);

    let trees: Vec<DecisionTree> = (0..n_trees)
        .into_par_iter()
        .map(|t| {
            train_tree(
                data,
                mtry,
                seed::derive(master_seed, t as u64),
                options.bootstrap,
            )
        })
        .collect();

    Ok(ForestModel {
        trees,
        n_classes: data.n_classes(),
        n_features: d,
        mtry,
        master_seed,
    })
}
