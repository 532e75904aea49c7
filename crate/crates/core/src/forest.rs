//! Random-forest classifier: bootstrap aggregation of unpruned Gini trees
//! with `mtry` random features per node.
//!
//! Defaults follow the classic `randomForest` package: `floor(sqrt(p))`
//! features per split, terminal node size 1, bootstrap of size `n` with
//! replacement. Split search compares weighted Gini scores exactly in
//! integer arithmetic, so ties are resolved by the documented rule
//! (lowest feature index, then lowest threshold) and never by rounding.

use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::num::{mix_seed, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("degenerate training set: only one class present")]
    DegenerateTrainingSet,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("insufficient trees: no row is out-of-bag")]
    InsufficientTrees,
    #[error("model text line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` means `floor(sqrt(p))`.
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            mtry: None,
            min_node_size: 1,
            bootstrap: true,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn resolved_mtry(&self, dimension: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| ((dimension as f64).sqrt().floor() as usize).max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node<T> {
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree<T> {
    nodes: Vec<Node<T>>,
}

fn argmax_first(counts: &[u32]) -> usize {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

impl<T: Real> DecisionTree<T> {
    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    /// Class counts of the leaf reached by `x` (`x[f] <= threshold` goes left).
    pub fn leaf_counts(&self, x: &[T]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { counts } => return counts,
            }
        }
    }

    /// Majority class of the reached leaf; ties go to the lowest class index.
    pub fn predict(&self, x: &[T]) -> usize {
        argmax_first(self.leaf_counts(x))
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Chosen split of a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split<T> {
    pub feature: usize,
    pub threshold: T,
    pub left_count: usize,
    pub right_count: usize,
}

/// `Σ_k c_k²`.
fn sum_sq(counts: &[u64]) -> u128 {
    counts.iter().map(|&c| (c as u128) * (c as u128)).sum()
}

/// Score of a split is `SL/nL + SR/nR` (larger is purer), kept as an exact
/// fraction `(SL·nR + SR·nL) / (nL·nR)`.
#[derive(Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn gt(self, other: Score) -> bool {
        self.num * other.den > other.num * self.den
    }
}

fn midpoint<T: Real>(a: T, b: T) -> T {
    let two = T::lit(2.0);
    let m = a / two + b / two;
    if m >= a && m < b {
        m
    } else {
        a
    }
}

/// Best Gini split of `samples` (indices into `x`, repeats allowed) over the
/// given features. Candidate thresholds are midpoints between consecutive
/// distinct values; only splits that strictly lower the weighted Gini
/// impurity and leave at least `min_node_size` samples per side qualify.
pub fn best_split<T: Real, X: AsRef<[T]>>(
    x: &[X],
    y: &[usize],
    n_classes: usize,
    samples: &[usize],
    features: &[usize],
    min_node_size: usize,
) -> Option<Split<T>> {
    let n = samples.len();
    if n < 2 {
        return None;
    }
    let mut parent = vec![0u64; n_classes];
    for &i in samples {
        parent[y[i]] += 1;
    }
    let parent_score = Score {
        num: sum_sq(&parent),
        den: n as u128,
    };
    let min_side = min_node_size.max(1);

    let mut sorted_features = features.to_vec();
    sorted_features.sort_unstable();
    sorted_features.dedup();

    let mut best: Option<(Score, Split<T>)> = None;
    let mut pairs: Vec<(T, usize)> = Vec::with_capacity(n);
    let mut left = vec![0u64; n_classes];
    for &f in &sorted_features {
        pairs.clear();
        pairs.extend(samples.iter().map(|&i| (x[i].as_ref()[f], y[i])));
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        left.iter_mut().for_each(|c| *c = 0);
        for j in 0..n - 1 {
            left[pairs[j].1] += 1;
            if pairs[j].0 == pairs[j + 1].0 {
                continue;
            }
            let (nl, nr) = (j + 1, n - j - 1);
            if nl < min_side || nr < min_side {
                continue;
            }
            let right: Vec<u64> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
            let (sl, sr) = (sum_sq(&left), sum_sq(&right));
            let score = Score {
                num: sl * nr as u128 + sr * nl as u128,
                den: (nl * nr) as u128,
            };
            if !score.gt(parent_score) {
                continue;
            }
            if best.map_or(true, |(b, _)| score.gt(b)) {
                best = Some((
                    score,
                    Split {
                        feature: f,
                        threshold: midpoint(pairs[j].0, pairs[j + 1].0),
                        left_count: nl,
                        right_count: nr,
                    },
                ));
            }
        }
    }
    best.map(|(_, s)| s)
}

fn grow_tree<T: Real, X: AsRef<[T]>>(
    x: &[X],
    y: &[usize],
    n_classes: usize,
    dimension: usize,
    mtry: usize,
    min_node_size: usize,
    samples: Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> DecisionTree<T> {
    let mut nodes: Vec<Node<T>> = Vec::new();
    // (node slot, samples)
    let mut stack = vec![(0usize, samples)];
    nodes.push(Node::Leaf { counts: Vec::new() });
    while let Some((slot, samples)) = stack.pop() {
        let mut counts = vec![0u32; n_classes];
        for &i in &samples {
            counts[y[i]] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || samples.len() < 2 {
            nodes[slot] = Node::Leaf { counts };
            continue;
        }
        let features = sample_indices(rng, dimension, mtry).into_vec();
        let Some(split) = best_split(x, y, n_classes, &samples, &features, min_node_size) else {
            nodes[slot] = Node::Leaf { counts };
            continue;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&i| x[i].as_ref()[split.feature] <= split.threshold);
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(Node::Leaf { counts: Vec::new() });
        nodes.push(Node::Leaf { counts: Vec::new() });
        nodes[slot] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: li,
            right: ri,
        };
        // right first so the left subtree is expanded first
        stack.push((ri, r));
        stack.push((li, l));
    }
    DecisionTree { nodes }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestModel<T> {
    trees: Vec<DecisionTree<T>>,
    /// Per tree, whether each training row was drawn into its bootstrap.
    in_bag: Vec<Vec<bool>>,
    n_classes: usize,
    dimension: usize,
    config: TrainConfig,
}

fn check_training_set<T, X: AsRef<[T]>>(x: &[X], y: &[usize], n_classes: usize) -> Result<usize, ForestError> {
    if x.is_empty() {
        return Err(ForestError::EmptyTrainingSet);
    }
    if x.len() != y.len() {
        return Err(ForestError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let dimension = x[0].as_ref().len();
    if dimension == 0 {
        return Err(ForestError::InvalidConfig("zero-dimensional features".into()));
    }
    for row in x {
        if row.as_ref().len() != dimension {
            return Err(ForestError::DimensionMismatch {
                expected: dimension,
                found: row.as_ref().len(),
            });
        }
    }
    if let Some(&label) = y.iter().find(|&&l| l >= n_classes) {
        return Err(ForestError::LabelOutOfRange { label, n_classes });
    }
    if y.iter().all(|&l| l == y[0]) {
        return Err(ForestError::DegenerateTrainingSet);
    }
    Ok(dimension)
}

/// Trains the forest; trees are grown in parallel from per-tree seeds, so
/// the result does not depend on the thread count.
pub fn train_forest<T: Real, X: AsRef<[T]> + Sync>(
    x: &[X],
    y: &[usize],
    n_classes: usize,
    cfg: &TrainConfig,
) -> Result<RandomForestModel<T>, ForestError> {
    let dimension = check_training_set(x, y, n_classes)?;
    if cfg.n_trees == 0 {
        return Err(ForestError::InvalidConfig("n_trees must be at least 1".into()));
    }
    let mtry = cfg.resolved_mtry(dimension);
    if mtry == 0 || mtry > dimension {
        return Err(ForestError::InvalidConfig(format!(
            "mtry {mtry} outside 1..={dimension}"
        )));
    }
    if cfg.min_node_size == 0 {
        return Err(ForestError::InvalidConfig("min_node_size must be at least 1".into()));
    }
    let n = x.len();
    let grown: Vec<(DecisionTree<T>, Vec<bool>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, t as u64));
            let mut in_bag = vec![false; n];
            let samples: Vec<usize> = if cfg.bootstrap {
                (0..n)
                    .map(|_| {
                        let i = rng.gen_range(0..n);
                        in_bag[i] = true;
                        i
                    })
                    .collect()
            } else {
                in_bag.iter_mut().for_each(|b| *b = true);
                (0..n).collect()
            };
            let tree = grow_tree(x, y, n_classes, dimension, mtry, cfg.min_node_size, samples, &mut rng);
            (tree, in_bag)
        })
        .collect();
    let (trees, in_bag) = grown.into_iter().unzip();
    Ok(RandomForestModel {
        trees,
        in_bag,
        n_classes,
        dimension,
        config: TrainConfig {
            mtry: Some(mtry),
            ..*cfg
        },
    })
}

/// Out-of-bag estimate: error rate and number of rows that had at least one
/// out-of-bag tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OobEstimate {
    pub error: f64,
    pub evaluated: usize,
}

impl<T: Real> RandomForestModel<T> {
    pub fn trees(&self) -> &[DecisionTree<T>] {
        &self.trees
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn check(&self, x: &[T]) -> Result<(), ForestError> {
        if x.len() != self.dimension {
            return Err(ForestError::DimensionMismatch {
                expected: self.dimension,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Number of trees voting for each class.
    pub fn votes(&self, x: &[T]) -> Result<Vec<u32>, ForestError> {
        self.check(x)?;
        let mut votes = vec![0u32; self.n_classes];
        for tree in &self.trees {
            votes[tree.predict(x)] += 1;
        }
        Ok(votes)
    }

    /// Majority vote; ties go to the lowest class index.
    pub fn predict_class(&self, x: &[T]) -> Result<usize, ForestError> {
        Ok(argmax_first(&self.votes(x)?))
    }

    /// Fraction of trees voting for each class.
    pub fn predict_proba(&self, x: &[T]) -> Result<Vec<T>, ForestError> {
        let n = T::from_usize_lossy(self.trees.len());
        Ok(self
            .votes(x)?
            .into_iter()
            .map(|v| T::from_u32(v).unwrap() / n)
            .collect())
    }

    /// Out-of-bag error over the training rows the model was fit on.
    pub fn oob_error<X: AsRef<[T]>>(&self, x: &[X], y: &[usize]) -> Result<OobEstimate, ForestError> {
        let n = self.in_bag.first().map_or(0, |b| b.len());
        if x.len() != n || y.len() != n {
            return Err(ForestError::DimensionMismatch {
                expected: n,
                found: x.len(),
            });
        }
        let (mut wrong, mut evaluated) = (0usize, 0usize);
        for (i, (row, &label)) in x.iter().zip(y).enumerate() {
            let row = row.as_ref();
            self.check(row)?;
            let mut votes = vec![0u32; self.n_classes];
            let mut any = false;
            for (tree, bag) in self.trees.iter().zip(&self.in_bag) {
                if !bag[i] {
                    votes[tree.predict(row)] += 1;
                    any = true;
                }
            }
            if any {
                evaluated += 1;
                if argmax_first(&votes) != label {
                    wrong += 1;
                }
            }
        }
        if evaluated == 0 {
            return Err(ForestError::InsufficientTrees);
        }
        Ok(OobEstimate {
            error: wrong as f64 / evaluated as f64,
            evaluated,
        })
    }

    /// Versioned plain-text serialization; thresholds are written in their
    /// shortest round-trip decimal form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        writeln!(s, "mitoclass-forest 1").unwrap();
        writeln!(s, "classes {}", self.n_classes).unwrap();
        writeln!(s, "dimension {}", self.dimension).unwrap();
        writeln!(s, "rows {}", self.in_bag.first().map_or(0, |b| b.len())).unwrap();
        writeln!(
            s,
            "config n_trees={} mtry={} min_node_size={} bootstrap={} seed={}",
            c.n_trees,
            c.resolved_mtry(self.dimension),
            c.min_node_size,
            c.bootstrap,
            c.seed
        )
        .unwrap();
        for (t, (tree, bag)) in self.trees.iter().zip(&self.in_bag).enumerate() {
            writeln!(s, "tree {t} {}", tree.nodes.len()).unwrap();
            let bits: String = bag.iter().map(|&b| if b { '1' } else { '0' }).collect();
            writeln!(s, "bag {bits}").unwrap();
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => writeln!(s, "S {feature} {:?} {left} {right}", threshold.as_f64()).unwrap(),
                    Node::Leaf { counts } => {
                        let cs: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
                        writeln!(s, "L {}", cs.join(" ")).unwrap()
                    }
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ForestError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| ForestError::Parse {
                line: 0,
                reason: format!("unexpected end of input, expected {what}"),
            })
        };
        let err = |line: usize, reason: &str| ForestError::Parse {
            line,
            reason: reason.to_string(),
        };
        let num = |line: usize, s: Option<&str>| -> Result<usize, ForestError> {
            s.and_then(|v| v.parse().ok()).ok_or_else(|| err(line, "expected integer"))
        };
        let (l, magic) = next("header")?;
        if magic.trim() != "mitoclass-forest 1" {
            return Err(err(l, "unsupported format version"));
        }
        let mut field = |name: &str| -> Result<(usize, usize), ForestError> {
            let (l, s) = next(name)?;
            let mut it = s.split_whitespace();
            if it.next() != Some(name) {
                return Err(err(l, &format!("expected '{name}'")));
            }
            Ok((l, num(l, it.next())?))
        };
        let (_, n_classes) = field("classes")?;
        let (_, dimension) = field("dimension")?;
        let (_, rows) = field("rows")?;
        let (l, cfg_line) = next("config")?;
        let mut config = TrainConfig::default();
        for kv in cfg_line.split_whitespace().skip(1) {
            let (k, v) = kv.split_once('=').ok_or_else(|| err(l, "bad config entry"))?;
            let bad = || err(l, "bad config value");
            match k {
                "n_trees" => config.n_trees = v.parse().map_err(|_| bad())?,
                "mtry" => config.mtry = Some(v.parse().map_err(|_| bad())?),
                "min_node_size" => config.min_node_size = v.parse().map_err(|_| bad())?,
                "bootstrap" => config.bootstrap = v.parse().map_err(|_| bad())?,
                "seed" => config.seed = v.parse().map_err(|_| bad())?,
                _ => return Err(err(l, "unknown config key")),
            }
        }
        let mut trees = Vec::with_capacity(config.n_trees);
        let mut in_bag = Vec::with_capacity(config.n_trees);
        for _ in 0..config.n_trees {
            let (l, head) = next("tree")?;
            let mut it = head.split_whitespace();
            if it.next() != Some("tree") {
                return Err(err(l, "expected 'tree'"));
            }
            let _index = num(l, it.next())?;
            let n_nodes = num(l, it.next())?;
            let (l, bag) = next("bag")?;
            let bits = bag.strip_prefix("bag ").ok_or_else(|| err(l, "expected 'bag'"))?;
            if bits.len() != rows {
                return Err(err(l, "bag length differs from row count"));
            }
            in_bag.push(bits.chars().map(|c| c == '1').collect());
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let (l, s) = next("node")?;
                let mut it = s.split_whitespace();
                match it.next() {
                    Some("S") => {
                        let feature = num(l, it.next())?;
                        let threshold: f64 = it
                            .next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| err(l, "bad threshold"))?;
                        let left = num(l, it.next())?;
                        let right = num(l, it.next())?;
                        if feature >= dimension || left >= n_nodes || right >= n_nodes {
                            return Err(err(l, "split refers outside the tree"));
                        }
                        nodes.push(Node::Split {
                            feature,
                            threshold: T::from_f64(threshold).ok_or_else(|| err(l, "bad threshold"))?,
                            left,
                            right,
                        });
                    }
                    Some("L") => {
                        let counts = it
                            .map(|c| c.parse::<u32>().map_err(|_| err(l, "bad leaf count")))
                            .collect::<Result<Vec<_>, _>>()?;
                        if counts.len() != n_classes {
                            return Err(err(l, "leaf class count mismatch"));
                        }
                        nodes.push(Node::Leaf { counts });
                    }
                    _ => return Err(err(l, "expected node")),
                }
            }
            trees.push(DecisionTree { nodes });
        }
        Ok(Self {
            trees,
            in_bag,
            n_classes,
            dimension,
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use rand_distr::{Distribution, Normal};

    fn clouds(n: usize, d: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            x.push((0..d).map(|_| z.sample(&mut rng) + if c == 1 { sep } else { 0.0 }).collect());
            y.push(c);
        }
        (x, y)
    }

    /// Exhaustive search with exact rational Gini impurities.
    fn oracle_split(x: &[Vec<f64>], y: &[usize], samples: &[usize], features: &[usize]) -> Option<(usize, f64)> {
        let gini_weighted = |part: &[usize]| -> Ratio<i64> {
            let n = part.len() as i64;
            if n == 0 {
                return Ratio::from_integer(0);
            }
            let mut c = [0i64; 3];
            for &i in part {
                c[y[i]] += 1;
            }
            let sq: i64 = c.iter().map(|v| v * v).sum();
            // n * (1 - Σ p²)
            Ratio::new(n * n - sq, n)
        };
        let parent = gini_weighted(samples);
        let mut best: Option<(Ratio<i64>, usize, f64)> = None;
        let mut fs = features.to_vec();
        fs.sort_unstable();
        for &f in &fs {
            let mut vals: Vec<f64> = samples.iter().map(|&i| x[i][f]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&i| x[i][f] <= t);
                let imp = gini_weighted(&l) + gini_weighted(&r);
                if imp >= parent {
                    continue;
                }
                if best.as_ref().map_or(true, |(b, _, _)| imp < *b) {
                    best = Some((imp, f, t));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    #[test]
    fn split_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..2000 {
            let n = rng.gen_range(2..=12);
            let d = rng.gen_range(1..=3);
            // small integer grid to provoke ties
            let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(0..4) as f64).collect()).collect();
            let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let samples: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let features: Vec<usize> = (0..d).collect();
            let got = best_split(&x, &y, 3, &samples, &features, 1).map(|s| (s.feature, s.threshold));
            assert_eq!(got, oracle_split(&x, &y, &samples, &features), "case {case}: {x:?} {y:?} {samples:?}");
        }
    }

    #[test]
    fn separable_clouds_have_zero_oob_error() {
        let (x, y) = clouds(200, 5, 4.0, 3);
        let m = train_forest(&x, &y, 2, &TrainConfig::default()).unwrap();
        let oob = m.oob_error(&x, &y).unwrap();
        assert!(oob.error <= 0.02, "oob {}", oob.error);
        assert_eq!(m.trees().len(), 50);
    }

    #[test]
    fn same_seed_same_model() {
        let (x, y) = clouds(60, 4, 1.0, 9);
        let cfg = TrainConfig { n_trees: 10, ..Default::default() };
        let a: RandomForestModel<f64> = train_forest(&x, &y, 2, &cfg).unwrap();
        let b: RandomForestModel<f64> = train_forest(&x, &y, 2, &cfg).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let c: RandomForestModel<f64> = train_forest(&x, &y, 2, &TrainConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.to_text(), c.to_text());
    }

    #[test]
    fn single_tree_memorizes_without_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
        let y: Vec<usize> = (0..40).map(|_| rng.gen_range(0..3)).collect();
        let cfg = TrainConfig {
            n_trees: 1,
            mtry: Some(3),
            bootstrap: false,
            ..Default::default()
        };
        let m = train_forest(&x, &y, 3, &cfg).unwrap();
        for (row, &label) in x.iter().zip(&y) {
            assert_eq!(m.predict_class(row).unwrap(), label);
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert_eq!(
            train_forest::<f64, _>(&x, &[1, 1], 3, &TrainConfig::default()).unwrap_err(),
            ForestError::DegenerateTrainingSet
        );
        assert!(matches!(
            train_forest::<f64, _>(&x, &[0, 5], 3, &TrainConfig::default()),
            Err(ForestError::LabelOutOfRange { .. })
        ));
        assert!(matches!(
            train_forest::<f64, _>(&x, &[0, 1], 3, &TrainConfig { mtry: Some(2), ..Default::default() }),
            Err(ForestError::InvalidConfig(_))
        ));
    }

    fn leaf(counts: [u32; 3]) -> DecisionTree<f64> {
        DecisionTree {
            nodes: vec![Node::Leaf { counts: counts.to_vec() }],
        }
    }

    fn fixed_model(trees: Vec<DecisionTree<f64>>) -> RandomForestModel<f64> {
        let n = trees.len();
        RandomForestModel {
            in_bag: vec![vec![true]; n],
            trees,
            n_classes: 3,
            dimension: 1,
            config: TrainConfig { n_trees: n, ..Default::default() },
        }
    }

    #[test]
    fn vote_ties_follow_class_order() {
        let m = fixed_model(vec![leaf([1, 0, 0]), leaf([0, 1, 0])]);
        assert_eq!(m.predict_class(&[0.0]).unwrap(), 0);
        let m = fixed_model(vec![leaf([0, 0, 3]), leaf([0, 2, 0])]);
        assert_eq!(m.predict_class(&[0.0]).unwrap(), 1);
        assert!(matches!(m.predict_class(&[0.0, 1.0]), Err(ForestError::DimensionMismatch { .. })));
    }

    #[test]
    fn vote_fractions() {
        let mut trees = vec![leaf([1, 0, 0]); 30];
        trees.extend(vec![leaf([0, 1, 0]); 15]);
        trees.extend(vec![leaf([0, 0, 1]); 5]);
        let m = fixed_model(trees);
        assert_eq!(m.votes(&[0.0]).unwrap(), vec![30, 15, 5]);
        let p = m.predict_proba(&[0.0]).unwrap();
        assert_eq!(p, vec![0.6, 0.3, 0.1]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let unanimous = fixed_model(vec![leaf([0, 4, 0]); 7]);
        assert_eq!(unanimous.predict_proba(&[0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn adding_a_unanimous_tree_keeps_its_class() {
        let (x, y) = clouds(80, 3, 0.7, 21);
        let mut m: RandomForestModel<f64> =
            train_forest(&x, &y, 2, &TrainConfig { n_trees: 9, ..Default::default() }).unwrap();
        for row in &x {
            let c = m.predict_class(row).unwrap();
            let mut counts = vec![0u32; 2];
            counts[c] = 1;
            m.trees.push(DecisionTree { nodes: vec![Node::Leaf { counts }] });
            m.in_bag.push(vec![true; x.len()]);
            assert_eq!(m.predict_class(row).unwrap(), c);
        }
    }

    #[test]
    fn shuffled_labels_oob_near_two_thirds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<Vec<f64>> = (0..600).map(|_| (0..4).map(|_| rng.gen::<f64>()).collect()).collect();
        let y: Vec<usize> = (0..600).map(|_| rng.gen_range(0..3)).collect();
        let m: RandomForestModel<f64> = train_forest(&x, &y, 3, &TrainConfig::default()).unwrap();
        let oob = m.oob_error(&x, &y).unwrap();
        assert!((oob.error - 2.0 / 3.0).abs() <= 0.10, "oob {}", oob.error);
    }

    #[test]
    fn one_tree_oob_fraction() {
        let (x, y) = clouds(500, 2, 3.0, 5);
        let m: RandomForestModel<f64> =
            train_forest(&x, &y, 2, &TrainConfig { n_trees: 1, ..Default::default() }).unwrap();
        let oob = m.oob_error(&x, &y).unwrap();
        let expected = (1.0 - 1.0 / 500.0f64).powi(500);
        assert!((oob.evaluated as f64 / 500.0 - expected).abs() <= 0.10);
        let no_bag = train_forest::<f64, _>(&x, &y, 2, &TrainConfig { n_trees: 3, bootstrap: false, ..Default::default() }).unwrap();
        assert_eq!(no_bag.oob_error(&x, &y).unwrap_err(), ForestError::InsufficientTrees);
    }

    #[test]
    fn text_round_trip() {
        let (x, y) = clouds(50, 3, 1.5, 2);
        let m: RandomForestModel<f64> =
            train_forest(&x, &y, 2, &TrainConfig { n_trees: 5, ..Default::default() }).unwrap();
        let back = RandomForestModel::<f64>::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert!(RandomForestModel::<f64>::from_text("mitoclass-forest 2\n").is_err());
    }

    #[test]
    fn single_precision_training() {
        let (x, y) = clouds(100, 3, 4.0, 12);
        let x32: Vec<Vec<f32>> = x.iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
        let m: RandomForestModel<f32> = train_forest(&x32, &y, 2, &TrainConfig { n_trees: 10, ..Default::default() }).unwrap();
        let acc = x32.iter().zip(&y).filter(|(r, &l)| m.predict_class(r).unwrap() == l).count();
        assert!(acc >= 98);
    }
}
