//! CART trees with Gini impurity and the bagged forest built from them.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ForestParams, MaxFeatures};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        class: u8,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub max_features: MaxFeatures,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
}

impl From<&ForestParams> for TreeParams {
    fn from(p: &ForestParams) -> Self {
        Self {
            max_features: p.max_features,
            max_depth: p.max_depth,
            min_samples_leaf: p.min_samples_leaf,
        }
    }
}

/// Binary decision tree; samples go left when `x[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, Default)]
struct Counts([usize; 2]);

impl Counts {
    fn of(y: &[u8], idx: &[usize]) -> Self {
        let mut c = Counts::default();
        for &i in idx {
            c.0[y[i] as usize] += 1;
        }
        c
    }

    fn total(self) -> usize {
        self.0[0] + self.0[1]
    }

    /// Gini impurity times the sample count.
    fn weighted_gini(self) -> f64 {
        let n = self.total() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let (a, b) = (self.0[0] as f64, self.0[1] as f64);
        n - (a * a + b * b) / n
    }

    /// Majority class, ties to 0.
    fn majority(self) -> u8 {
        u8::from(self.0[1] > self.0[0])
    }
}

struct Best {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl DecisionTree {
    /// Fits on the rows listed in `samples` (repeats allowed, as in a bootstrap draw).
    pub fn fit(
        x: ArrayView2<f64>,
        y: &[u8],
        samples: Vec<usize>,
        params: &TreeParams,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut tree = DecisionTree { nodes: Vec::new() };
        let k = params.max_features.resolve(x.ncols());
        tree.grow(x, y, samples, 0, params, k, rng);
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn grow(
        &mut self,
        x: ArrayView2<f64>,
        y: &[u8],
        mut samples: Vec<usize>,
        depth: usize,
        params: &TreeParams,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let id = self.nodes.len();
        let counts = Counts::of(y, &samples);
        self.nodes.push(Node::Leaf {
            class: counts.majority(),
        });
        let pure = counts.0[0] == 0 || counts.0[1] == 0;
        let too_small = samples.len() < 2 * params.min_samples_leaf.max(1);
        let too_deep = params.max_depth.is_some_and(|d| depth >= d);
        if pure || too_small || too_deep {
            return id;
        }
        let Some(best) = best_split(
            x,
            y,
            &mut samples,
            counts,
            params.min_samples_leaf.max(1),
            k,
            rng,
        ) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = samples
            .into_iter()
            .partition(|&i| x[[i, best.feature]] <= best.threshold);
        let l = self.grow(x, y, left, depth + 1, params, k, rng);
        let r = self.grow(x, y, right, depth + 1, params, k, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        id
    }

    pub fn predict_row(&self, row: ArrayView1<f64>) -> u8 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { class } => return class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<u8> {
        x.rows().into_iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
}

/// Visits features in random order until `k` non-constant ones have been
/// scored, keeping the lowest weighted Gini split.
fn best_split(
    x: ArrayView2<f64>,
    y: &[u8],
    samples: &mut [usize],
    parent: Counts,
    min_leaf: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Best> {
    let mut features: Vec<usize> = (0..x.ncols()).collect();
    features.shuffle(rng);
    let n = samples.len();
    let mut best: Option<Best> = None;
    let mut scored = 0;
    for f in features {
        if scored >= k {
            break;
        }
        samples.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]).then(a.cmp(&b)));
        let first = x[[samples[0], f]];
        let last = x[[samples[n - 1], f]];
        if first == last {
            continue;
        }
        scored += 1;
        let mut left = Counts::default();
        for pos in 0..n - 1 {
            left.0[y[samples[pos]] as usize] += 1;
            let here = x[[samples[pos], f]];
            let next = x[[samples[pos + 1], f]];
            let n_left = pos + 1;
            if here == next || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let right = Counts([parent.0[0] - left.0[0], parent.0[1] - left.0[1]]);
            let score = left.weighted_gini() + right.weighted_gini();
            if best.as_ref().is_none_or(|b| score < b.score) {
                let mut threshold = here + (next - here) / 2.0;
                if threshold >= next {
                    threshold = here;
                }
                best = Some(Best {
                    feature: f,
                    threshold,
                    score,
                });
            }
        }
    }
    best
}

/// Trees are built in parallel; tree `t` uses seed `seed + t`.
pub(crate) fn train_forest(
    x: ArrayView2<f64>,
    y: &[u8],
    params: &ForestParams,
    seed: u64,
) -> Vec<DecisionTree> {
    let tree_params = TreeParams::from(params);
    let n = x.nrows();
    (0..params.trees.max(1))
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            let samples = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            DecisionTree::fit(x, y, samples, &tree_params, &mut rng)
        })
        .collect()
}
