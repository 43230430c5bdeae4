//! Random-forest probability classifier over feature vectors.
//!
//! Trees split on `x[feature] <= threshold` (left) with thresholds at
//! midpoints between consecutive distinct values, chosen to minimize the
//! weighted Gini impurity of the children. Leaves keep raw class counts and
//! [`Forest::predict_proba`] averages the per-tree leaf proportions.

mod codec;
mod train;

use serde::{Deserialize, Serialize};

use crate::features::{FeatureMatrix, FeatureVector};

pub use codec::{ModelFileError, FORMAT_VERSION, MAGIC};
pub use train::{fit, train, FitOutput};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ForestError {
    #[error("Gini impurity of an empty node is undefined")]
    EmptyNode,
    #[error("feature vector has dimension {got}, forest expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training set needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("training set needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("{labels} labels for {samples} samples")]
    LabelCountMismatch { labels: usize, samples: usize },
    #[error("training features contain non-finite values")]
    NonFinite,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
}

/// `1 - sum((c_i / n)^2)` over the class counts of a node.
pub fn gini(class_counts: &[u32]) -> Result<f64, ForestError> {
    let n: u64 = class_counts.iter().map(|&c| c as u64).sum();
    if n == 0 {
        return Err(ForestError::EmptyNode);
    }
    let n = n as f64;
    Ok(1.0 - class_counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_trees: usize,
    /// `None` grows until purity or `min_leaf_samples`.
    pub max_depth: Option<usize>,
    pub min_leaf_samples: usize,
    /// `None` means `floor(sqrt(dim))`, at least 1.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_trees: 100,
            max_depth: None,
            min_leaf_samples: 1,
            features_per_split: None,
            bootstrap: true,
        }
    }
}

impl Hyperparams {
    pub fn features_per_split_for(&self, dim: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (dim as f64).sqrt().floor() as usize)
            .clamp(1, dim.max(1))
    }

    fn check(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidHyperparams("n_trees must be at least 1".into()));
        }
        if self.min_leaf_samples == 0 {
            return Err(ForestError::InvalidHyperparams("min_leaf_samples must be at least 1".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(ForestError::InvalidHyperparams("features_per_split must be at least 1".into()));
        }
        Ok(())
    }
}

/// A tree node in a flat, preorder arena. Children always follow their
/// parent.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        counts: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Validates the arena: children point forward and in range, every leaf
    /// has `n_classes` counts with a positive total, features are below `dim`.
    pub fn from_nodes(nodes: Vec<Node>, dim: usize, n_classes: usize) -> Result<Self, ForestError> {
        check_arena(&nodes, dim, n_classes)?;
        Ok(Tree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left as usize).max(go(nodes, *right as usize)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn leaf_counts(&self, x: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    fn add_proportions(&self, x: &[f64], acc: &mut [f64]) {
        let counts = self.leaf_counts(x);
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        for (a, &c) in acc.iter_mut().zip(counts) {
            *a += c as f64 / total as f64;
        }
    }
}

fn check_arena(nodes: &[Node], dim: usize, n_classes: usize) -> Result<(), ForestError> {
    if nodes.is_empty() {
        return Err(ForestError::InvalidTree("no nodes".into()));
    }
    let mut parents = vec![0u32; nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        match node {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if *feature as usize >= dim {
                    return Err(ForestError::InvalidTree(format!("feature {feature} >= dim {dim}")));
                }
                if !threshold.is_finite() {
                    return Err(ForestError::InvalidTree("non-finite threshold".into()));
                }
                for &c in [left, right] {
                    let c = c as usize;
                    if c <= i || c >= nodes.len() {
                        return Err(ForestError::InvalidTree(format!("node {i} has child {c}")));
                    }
                    parents[c] += 1;
                }
            }
            Node::Leaf { counts } => {
                if counts.len() != n_classes {
                    return Err(ForestError::InvalidTree(format!(
                        "leaf has {} counts for {n_classes} classes",
                        counts.len()
                    )));
                }
                if counts.iter().all(|&c| c == 0) {
                    return Err(ForestError::InvalidTree("empty leaf".into()));
                }
            }
        }
    }
    if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
        return Err(ForestError::InvalidTree("nodes do not form a single tree".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    dim: usize,
    classes: Vec<String>,
    hyperparams: Hyperparams,
    train_seed: u64,
}

impl Forest {
    pub fn new(
        trees: Vec<Tree>,
        dim: usize,
        classes: Vec<String>,
        hyperparams: Hyperparams,
        train_seed: u64,
    ) -> Result<Self, ForestError> {
        if trees.is_empty() {
            return Err(ForestError::InvalidTree("forest needs at least one tree".into()));
        }
        if classes.len() < 2 {
            return Err(ForestError::TooFewClasses(classes.len()));
        }
        if dim == 0 {
            return Err(ForestError::InvalidTree("dimension must be positive".into()));
        }
        for tree in &trees {
            check_arena(&tree.nodes, dim, classes.len())?;
        }
        Ok(Forest {
            trees,
            dim,
            classes,
            hyperparams,
            train_seed,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyperparams
    }

    pub fn train_seed(&self) -> u64 {
        self.train_seed
    }

    /// Mean of the per-tree leaf class proportions.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>, ForestError> {
        if x.len() != self.dim {
            return Err(ForestError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut acc = vec![0.0; self.classes.len()];
        for tree in &self.trees {
            tree.add_proportions(x, &mut acc);
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|p| *p /= n);
        Ok(acc)
    }

    pub fn predict_vector(&self, v: &FeatureVector) -> Result<Vec<f64>, ForestError> {
        self.predict_proba(v.values())
    }

    /// Index of the most probable class; ties go to the lower index.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize, ForestError> {
        Ok(argmax(&self.predict_proba(x)?))
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Labeled feature columns for training.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    features: FeatureMatrix,
    labels: Vec<usize>,
    classes: Vec<String>,
    manifest: Vec<String>,
}

impl TrainingSet {
    /// Classes are the sorted distinct labels; `manifest` holds a provenance
    /// string per sample (may be empty).
    pub fn new<S: AsRef<str>>(
        features: FeatureMatrix,
        labels: &[S],
        manifest: Vec<String>,
    ) -> Result<Self, ForestError> {
        let n = features.n_samples();
        if labels.len() != n {
            return Err(ForestError::LabelCountMismatch {
                labels: labels.len(),
                samples: n,
            });
        }
        if n < 2 {
            return Err(ForestError::TooFewSamples(n));
        }
        if !features.is_finite() {
            return Err(ForestError::NonFinite);
        }
        let mut classes: Vec<String> = labels.iter().map(|l| l.as_ref().to_owned()).collect();
        classes.sort();
        classes.dedup();
        if classes.len() < 2 {
            return Err(ForestError::TooFewClasses(classes.len()));
        }
        let labels = labels
            .iter()
            .map(|l| classes.binary_search_by(|c| c.as_str().cmp(l.as_ref())).unwrap())
            .collect();
        Ok(TrainingSet {
            features,
            labels,
            classes,
            manifest,
        })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn manifest(&self) -> &[String] {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    fn leaf(counts: &[u32]) -> Tree {
        Tree::from_nodes(vec![Node::Leaf { counts: counts.to_vec() }], 1, counts.len()).unwrap()
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[5, 0]).unwrap(), 0.0);
        assert_eq!(gini(&[1, 1]).unwrap(), 0.5);
        // 1 - (4 + 1 + 1) / 16
        assert!((gini(&[2, 1, 1]).unwrap() - 0.625).abs() < 1e-15);
        assert_eq!(gini(&[0, 0]), Err(ForestError::EmptyNode));
        assert_eq!(gini(&[]), Err(ForestError::EmptyNode));
    }

    #[test]
    fn single_tree_proportions() {
        let f = Forest::new(vec![leaf(&[3, 1])], 1, classes(), Hyperparams::default(), 0).unwrap();
        assert_eq!(f.predict_proba(&[0.0]).unwrap(), [0.75, 0.25]);
    }

    #[test]
    fn three_hand_built_trees_average() {
        // leaves [1,0], [1,1], [0,1] -> (1.0 + 0.5 + 0.0) / 3 = 0.5
        let trees = vec![leaf(&[1, 0]), leaf(&[1, 1]), leaf(&[0, 1])];
        let f = Forest::new(trees, 1, classes(), Hyperparams::default(), 0).unwrap();
        assert_eq!(f.predict_proba(&[0.3]).unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn split_routes_left_on_equal() {
        let t = Tree::from_nodes(
            vec![
                Node::Split {
                    feature: 1,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { counts: vec![2, 0] },
                Node::Leaf { counts: vec![0, 2] },
            ],
            2,
            2,
        )
        .unwrap();
        assert_eq!(t.leaf_counts(&[9.0, 0.5]), [2, 0]);
        assert_eq!(t.leaf_counts(&[9.0, 0.51]), [0, 2]);
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn dimension_mismatch() {
        let f = Forest::new(vec![leaf(&[1, 1])], 1, classes(), Hyperparams::default(), 0).unwrap();
        assert_eq!(
            f.predict_proba(&[1.0, 2.0]),
            Err(ForestError::DimensionMismatch { expected: 1, got: 2 })
        );
    }

    #[test]
    fn malformed_trees_rejected() {
        let bad_child = vec![
            Node::Split {
                feature: 0,
                threshold: 0.0,
                left: 0,
                right: 1,
            },
            Node::Leaf { counts: vec![1, 0] },
        ];
        assert!(Tree::from_nodes(bad_child, 1, 2).is_err());
        let bad_feature = vec![
            Node::Split {
                feature: 3,
                threshold: 0.0,
                left: 1,
                right: 2,
            },
            Node::Leaf { counts: vec![1, 0] },
            Node::Leaf { counts: vec![1, 0] },
        ];
        assert!(Tree::from_nodes(bad_feature, 2, 2).is_err());
        assert!(Tree::from_nodes(vec![Node::Leaf { counts: vec![0, 0] }], 1, 2).is_err());
        let shared = vec![
            Node::Split {
                feature: 0,
                threshold: 0.0,
                left: 1,
                right: 1,
            },
            Node::Leaf { counts: vec![1, 0] },
        ];
        assert!(Tree::from_nodes(shared, 1, 2).is_err());
    }

    #[test]
    fn training_set_invariants() {
        let m = FeatureMatrix::from_columns(1, &[vec![0.0], vec![1.0]]);
        assert_eq!(
            TrainingSet::new(m.clone(), &["x", "x"], vec![]).unwrap_err(),
            ForestError::TooFewClasses(1)
        );
        assert_eq!(
            TrainingSet::new(m.clone(), &["x"], vec![]).unwrap_err(),
            ForestError::LabelCountMismatch { labels: 1, samples: 2 }
        );
        let nan = FeatureMatrix::from_columns(1, &[vec![f64::NAN], vec![1.0]]);
        assert_eq!(TrainingSet::new(nan, &["x", "y"], vec![]).unwrap_err(), ForestError::NonFinite);
        let ts = TrainingSet::new(m, &["weapon", "other"], vec![]).unwrap();
        assert_eq!(ts.classes(), ["other", "weapon"]);
        assert_eq!(ts.labels(), [1, 0]);
    }
}
