use std::cmp::Ordering;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{argmax, Forest, ForestError, Hyperparams, Node, Tree, TrainingSet};

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub forest: Forest,
    /// Accuracy of each sample predicted by the trees that did not see it.
    /// `None` without bootstrap or when no sample was ever left out.
    pub oob_accuracy: Option<f64>,
}

/// Trains a forest; identical inputs and seed give an identical forest.
pub fn train(data: &TrainingSet, hyperparams: &Hyperparams, seed: u64) -> Result<Forest, ForestError> {
    fit(data, hyperparams, seed).map(|o| o.forest)
}

/// [`train`] plus the out-of-bag accuracy estimate.
///
/// Tree `i` draws all of its randomness from a ChaCha stream keyed by
/// `(seed, i)`, so trees can be grown in parallel without changing the
/// result.
pub fn fit(data: &TrainingSet, hyperparams: &Hyperparams, seed: u64) -> Result<FitOutput, ForestError> {
    hyperparams.check()?;
    let n = data.len();
    let n_classes = data.classes().len();

    let grown: Vec<(Tree, Vec<bool>)> = (0..hyperparams.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let sample: Vec<usize> = if hyperparams.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut in_bag = vec![false; n];
            for &i in &sample {
                in_bag[i] = true;
            }
            let tree = TreeBuilder::new(data, hyperparams, rng).build(sample);
            (tree, in_bag)
        })
        .collect();

    let oob_accuracy = if hyperparams.bootstrap {
        let mut votes = vec![vec![0.0; n_classes]; n];
        let mut seen = vec![false; n];
        for (tree, in_bag) in &grown {
            for i in (0..n).filter(|&i| !in_bag[i]) {
                tree.add_proportions(&data.features().column(i), &mut votes[i]);
                seen[i] = true;
            }
        }
        let scored: Vec<usize> = (0..n).filter(|&i| seen[i]).collect();
        (!scored.is_empty()).then(|| {
            let correct = scored
                .iter()
                .filter(|&&i| argmax(&votes[i]) == data.labels()[i])
                .count();
            correct as f64 / scored.len() as f64
        })
    } else {
        None
    };

    let forest = Forest::new(
        grown.into_iter().map(|(t, _)| t).collect(),
        data.features().dim(),
        data.classes().to_vec(),
        hyperparams.clone(),
        seed,
    )?;
    Ok(FitOutput { forest, oob_accuracy })
}

/// A candidate split scored by `sum_L c^2 / n_L + sum_R c^2 / n_R`, which
/// grows as the weighted child Gini impurity shrinks. Kept as an exact
/// fraction so equal impurities compare equal.
#[derive(Clone, Copy)]
struct SplitScore {
    num: u128,
    den: u128,
}

impl SplitScore {
    fn new(sq_left: u64, n_left: u64, sq_right: u64, n_right: u64) -> Self {
        SplitScore {
            num: sq_left as u128 * n_right as u128 + sq_right as u128 * n_left as u128,
            den: n_left as u128 * n_right as u128,
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

struct Best {
    score: SplitScore,
    feature: usize,
    threshold: f64,
}

struct TreeBuilder<'a> {
    data: &'a TrainingSet,
    hp: &'a Hyperparams,
    rng: ChaCha8Rng,
    n_classes: usize,
    per_split: usize,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn new(data: &'a TrainingSet, hp: &'a Hyperparams, rng: ChaCha8Rng) -> Self {
        TreeBuilder {
            data,
            hp,
            rng,
            n_classes: data.classes().len(),
            per_split: hp.features_per_split_for(data.features().dim()),
            nodes: Vec::new(),
        }
    }

    fn build(mut self, mut sample: Vec<usize>) -> Tree {
        self.grow(&mut sample, 0);
        Tree { nodes: self.nodes }
    }

    fn counts(&self, sample: &[usize]) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_classes];
        for &i in sample {
            counts[self.data.labels()[i]] += 1;
        }
        counts
    }

    fn grow(&mut self, sample: &mut [usize], depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let counts = self.counts(sample);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let too_deep = self.hp.max_depth.is_some_and(|d| depth >= d);
        let too_small = sample.len() < 2 * self.hp.min_leaf_samples;
        if pure || too_deep || too_small {
            self.nodes.push(Node::Leaf { counts });
            return id;
        }
        let Some(best) = self.best_split(sample) else {
            self.nodes.push(Node::Leaf { counts });
            return id;
        };

        let row = self.data.features().row(best.feature);
        let mut left_len = 0;
        for k in 0..sample.len() {
            if row[sample[k]] <= best.threshold {
                sample.swap(k, left_len);
                left_len += 1;
            }
        }
        self.nodes.push(Node::Split {
            feature: best.feature as u32,
            threshold: best.threshold,
            left: 0,
            right: 0,
        });
        let (l, r) = sample.split_at_mut(left_len);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        if let Node::Split {
            left: lslot,
            right: rslot,
            ..
        } = &mut self.nodes[id as usize]
        {
            *lslot = left;
            *rslot = right;
        }
        id
    }

    /// Best (feature, threshold) over a random feature subset. Ties go to the
    /// lower feature index, then the lower threshold.
    fn best_split(&mut self, sample: &[usize]) -> Option<Best> {
        let dim = self.data.features().dim();
        let mut features = index::sample(&mut self.rng, dim, self.per_split).into_vec();
        features.sort_unstable();

        let min_leaf = self.hp.min_leaf_samples;
        let labels = self.data.labels();
        let total = self.counts(sample);
        let n = sample.len();
        let mut best: Option<Best> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);

        for f in features {
            let row = self.data.features().row(f);
            pairs.clear();
            pairs.extend(sample.iter().map(|&i| (row[i], labels[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

            let mut left = vec![0u64; self.n_classes];
            let mut right: Vec<u64> = total.iter().map(|&c| c as u64).collect();
            let mut sq_left = 0u64;
            let mut sq_right: u64 = right.iter().map(|c| c * c).sum();
            for k in 0..n - 1 {
                let c = pairs[k].1;
                sq_left += 2 * left[c] + 1;
                left[c] += 1;
                sq_right -= 2 * right[c] - 1;
                right[c] -= 1;

                let (a, b) = (pairs[k].0, pairs[k + 1].0);
                let n_left = k + 1;
                if a >= b || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let score = SplitScore::new(sq_left, n_left as u64, sq_right, (n - n_left) as u64);
                if best.as_ref().is_none_or(|bst| score.cmp(&bst.score) == Ordering::Greater) {
                    best = Some(Best {
                        score,
                        feature: f,
                        threshold: midpoint(a, b),
                    });
                }
            }
        }
        best
    }
}

/// A threshold `t` with `a <= t < b`.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let mid = a / 2.0 + b / 2.0;
    if mid >= a && mid < b {
        mid
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMatrix;

    fn set(points: &[(Vec<f64>, &str)]) -> TrainingSet {
        let cols: Vec<Vec<f64>> = points.iter().map(|p| p.0.clone()).collect();
        let labels: Vec<&str> = points.iter().map(|p| p.1).collect();
        TrainingSet::new(FeatureMatrix::from_columns(cols[0].len(), &cols), &labels, vec![]).unwrap()
    }

    #[test]
    fn midpoint_stays_between() {
        assert_eq!(midpoint(0.0, 1.0), 0.5);
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(m >= a && m < b);
    }

    #[test]
    fn separable_1d_is_one_split() {
        let mut pts = Vec::new();
        for _ in 0..10 {
            pts.push((vec![0.0], "a"));
            pts.push((vec![1.0], "b"));
        }
        let data = set(&pts);
        let out = fit(&data, &Hyperparams::default(), 3).unwrap();
        for tree in out.forest.trees() {
            match tree.nodes() {
                [Node::Split { threshold, .. }, Node::Leaf { .. }, Node::Leaf { .. }] => {
                    assert!(*threshold > 0.0 && *threshold < 1.0)
                }
                // a bootstrap may draw only one class
                [Node::Leaf { .. }] => {}
                other => panic!("unexpected tree {other:?}"),
            }
        }
        let correct = (0..data.len())
            .filter(|&i| out.forest.predict_class(&data.features().column(i)).unwrap() == data.labels()[i])
            .count();
        assert_eq!(correct, data.len());
        assert_eq!(out.oob_accuracy, Some(1.0));
    }

    #[test]
    fn constant_features_give_single_leaves() {
        let data = set(&[(vec![1.0, 2.0], "a"), (vec![1.0, 2.0], "b"), (vec![1.0, 2.0], "b")]);
        let f = train(&data, &Hyperparams::default(), 0).unwrap();
        assert!(f.trees().iter().all(|t| t.nodes().len() == 1));
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<(Vec<f64>, &str)> = (0..60)
            .map(|i| {
                let label = if i % 2 == 0 { "a" } else { "b" };
                (vec![rng.gen(), rng.gen(), rng.gen::<f64>() + (i % 2) as f64], label)
            })
            .collect();
        let data = set(&pts);
        let hp = Hyperparams {
            n_trees: 20,
            ..Default::default()
        };
        assert_eq!(train(&data, &hp, 9).unwrap(), train(&data, &hp, 9).unwrap());
        assert_ne!(train(&data, &hp, 9).unwrap(), train(&data, &hp, 10).unwrap());
    }

    #[test]
    fn depth_and_leaf_size_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<(Vec<f64>, &str)> = (0..80)
            .map(|_| {
                let v: f64 = rng.gen();
                (vec![v], if rng.gen_bool(0.5) { "a" } else { "b" })
            })
            .collect();
        let data = set(&pts);
        let hp = Hyperparams {
            n_trees: 5,
            max_depth: Some(3),
            min_leaf_samples: 4,
            ..Default::default()
        };
        let f = train(&data, &hp, 0).unwrap();
        for t in f.trees() {
            assert!(t.depth() <= 3);
            for node in t.nodes() {
                if let Node::Leaf { counts } = node {
                    assert!(counts.iter().sum::<u32>() >= 4);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_hyperparams() {
        let data = set(&[(vec![0.0], "a"), (vec![1.0], "b")]);
        let hp = Hyperparams {
            n_trees: 0,
            ..Default::default()
        };
        assert!(matches!(train(&data, &hp, 0), Err(ForestError::InvalidHyperparams(_))));
    }
}
