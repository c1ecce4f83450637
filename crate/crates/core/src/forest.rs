//! Random-forest classification with Gini-impurity trees.
//!
//! Each tree is grown on a bootstrap sample drawn with a ChaCha8 stream
//! seeded by `seed ^ tree_index`, so trees can be trained in any order (or
//! in parallel) and still reproduce the sequential forest exactly.
//!
//! # Model file
//!
//! Plain text, one record per line, fields separated by single spaces:
//!
//! ```text
//! ctxmine-forest 1
//! n_trees <T> p <P> classes <c1> <c2> ...
//! tree <t> nodes <M> oob <K> <row> <row> ...      (K rows follow)
//! split <feature> <threshold>                      (M node lines, preorder)
//! leaf <count_c1> <count_c2> ...
//! ```
//!
//! Thresholds use Rust's shortest round-trip float formatting, so
//! write → read → write is byte-identical.

use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

const MAGIC: &str = "ctxmine-forest 1";
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ForestError {
    #[error("training matrix is empty")]
    Empty,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid forest config: {0}")]
    Config(String),
    #[error("label {0} is not one of the model classes")]
    UnknownLabel(u32),
    #[error("model file line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until purity or `min_leaf`.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Candidate features per split; `None` means ⌈√p⌉.
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: None, min_leaf: 1, mtry: None, seed: 0 }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize).max(1)
    }

    fn validate(&self, p: usize) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::Config("n_trees must be at least 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(ForestError::Config("min_leaf must be at least 1".into()));
        }
        if self.max_depth == Some(0) {
            return Err(ForestError::Config("max_depth must be at least 1".into()));
        }
        let mtry = self.resolved_mtry(p);
        if mtry > p || self.mtry == Some(0) {
            return Err(ForestError::Config(format!("mtry {mtry} must be in 1..={p}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left. The left child is the
    /// next node in preorder.
    Split { feature: usize, threshold: f64, right: usize },
    /// Class counts of the training (bootstrap) rows reaching the leaf.
    Leaf { counts: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    /// Preorder; the root is node 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Class counts of the leaf that `row` falls into.
    pub fn leaf_counts(&self, row: &[f64]) -> &[u64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, right } => {
                    i = if row[*feature] <= *threshold { i + 1 } else { *right };
                }
                Node::Leaf { counts } => return counts,
            }
        }
    }

    /// Index (into the class list) of the leaf majority, ties to the
    /// smaller index.
    pub fn vote(&self, row: &[f64]) -> usize {
        argmax_first(self.leaf_counts(row))
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> (usize, usize) {
            // returns (depth below i, index after subtree)
            match &nodes[i] {
                Node::Leaf { .. } => (0, i + 1),
                Node::Split { right, .. } => {
                    let (dl, _) = walk(nodes, i + 1);
                    let (dr, end) = walk(nodes, *right);
                    (1 + dl.max(dr), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }
}

fn argmax_first(counts: &[u64]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    /// Ascending class labels.
    pub classes: Vec<u32>,
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Out-of-bag rows of each tree, ascending.
    pub oob_indices: Vec<Vec<usize>>,
}

/// Bootstrap sample (with replacement) used for tree `tree_index`.
pub fn bootstrap_indices(seed: u64, tree_index: usize, n: usize) -> Vec<usize> {
    let mut rng = tree_rng(seed, tree_index);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

fn tree_rng(seed: u64, tree_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ tree_index as u64)
}

/// Trains a forest. Classes are the distinct labels of `y`, ascending.
pub fn train_forest(x: &Matrix, y: &[u32], cfg: &ForestConfig) -> Result<ForestModel, ForestError> {
    let (n, p) = (x.nrows(), x.ncols());
    if n == 0 || p == 0 {
        return Err(ForestError::Empty);
    }
    if y.len() != n {
        return Err(ForestError::Dimension(format!("X has {n} rows, y has {}", y.len())));
    }
    if !x.is_finite() {
        return Err(ForestError::Dimension("X contains non-finite values".into()));
    }
    cfg.validate(p)?;
    let mut classes = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let class_idx: Vec<usize> = y.iter().map(|l| classes.binary_search(l).expect("label from y")).collect();

    let grown: Vec<(Tree, Vec<usize>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(cfg.seed, t);
            let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut in_bag = vec![false; n];
            for &i in &sample {
                in_bag[i] = true;
            }
            let oob = (0..n).filter(|&i| !in_bag[i]).collect();
            (grow_tree_indexed(x, &class_idx, classes.len(), &sample, cfg, &mut rng), oob)
        })
        .collect();
    let (trees, oob_indices) = grown.into_iter().unzip();
    Ok(ForestModel { classes, n_features: p, trees, oob_indices })
}

/// Grows one tree on `sample` (row indices, repeats allowed), drawing
/// candidate features from `rng`. `classes` must be ascending and contain
/// every label of `y`.
pub fn grow_tree<R: Rng>(
    x: &Matrix,
    y: &[u32],
    classes: &[u32],
    sample: &[usize],
    cfg: &ForestConfig,
    rng: &mut R,
) -> Result<Tree, ForestError> {
    cfg.validate(x.ncols())?;
    let class_idx = y
        .iter()
        .map(|l| classes.binary_search(l).map_err(|_| ForestError::UnknownLabel(*l)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(grow_tree_indexed(x, &class_idx, classes.len(), sample, cfg, rng))
}

struct Task {
    rows: Vec<usize>,
    depth: usize,
    /// Split node whose right-child pointer must be patched.
    right_of: Option<usize>,
}

fn grow_tree_indexed<R: Rng>(
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    sample: &[usize],
    cfg: &ForestConfig,
    rng: &mut R,
) -> Tree {
    let p = x.ncols();
    let mtry = cfg.resolved_mtry(p);
    let mut nodes: Vec<Node> = Vec::new();
    let mut stack = vec![Task { rows: sample.to_vec(), depth: 0, right_of: None }];
    while let Some(task) = stack.pop() {
        let here = nodes.len();
        if let Some(parent) = task.right_of {
            if let Node::Split { right, .. } = &mut nodes[parent] {
                *right = here;
            }
        }
        let mut counts = vec![0u64; n_classes];
        for &i in &task.rows {
            counts[y[i]] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let too_small = task.rows.len() < 2 * cfg.min_leaf;
        let too_deep = cfg.max_depth.is_some_and(|d| task.depth >= d);
        let split = if pure || too_small || too_deep {
            None
        } else {
            let features = sample_indices(rng, p, mtry);
            best_split(x, y, &task.rows, &counts, features.iter(), cfg.min_leaf)
        };
        match split {
            None => nodes.push(Node::Leaf { counts }),
            Some((feature, threshold)) => {
                nodes.push(Node::Split { feature, threshold, right: usize::MAX });
                let (left, right): (Vec<usize>, Vec<usize>) =
                    task.rows.iter().partition(|&&i| x.get(i, feature) <= threshold);
                stack.push(Task { rows: right, depth: task.depth + 1, right_of: Some(here) });
                stack.push(Task { rows: left, depth: task.depth + 1, right_of: None });
            }
        }
    }
    Tree { nodes }
}

fn sum_sq(counts: &[u64]) -> u64 {
    counts.iter().map(|c| c * c).sum()
}

/// Gini impurity decrease of splitting `parent` into `left` and the rest,
/// weighted by node size: `G(parent) − n_l/n·G(left) − n_r/n·G(right)`.
pub fn gini_gain(parent: &[u64], left: &[u64]) -> f64 {
    let n: u64 = parent.iter().sum();
    let right: Vec<u64> = parent.iter().zip(left).map(|(p, l)| p - l).collect();
    let (nl, nr): (u64, u64) = (left.iter().sum(), right.iter().sum());
    if nl == 0 || nr == 0 {
        return 0.0;
    }
    let (n, nl, nr) = (n as f64, nl as f64, nr as f64);
    (sum_sq(left) as f64 / nl + sum_sq(&right) as f64 / nr - sum_sq(parent) as f64 / n) / n
}

pub fn gini(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    1.0 - sum_sq(counts) as f64 / (n * n) as f64
}

fn best_split(
    x: &Matrix,
    y: &[usize],
    rows: &[usize],
    parent: &[u64],
    features: impl Iterator<Item = usize>,
    min_leaf: usize,
) -> Option<(usize, f64)> {
    let m = rows.len();
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(m);
    for f in features {
        order.clear();
        order.extend(rows.iter().map(|&i| (x.get(i, f), y[i])));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut left = vec![0u64; parent.len()];
        for k in 0..m - 1 {
            left[order[k].1] += 1;
            let (a, b) = (order[k].0, order[k + 1].0);
            if a == b {
                continue;
            }
            let n_left = k + 1;
            if n_left < min_leaf || m - n_left < min_leaf {
                continue;
            }
            let gain = gini_gain(parent, &left);
            if gain > MIN_GAIN && best.is_none_or(|(g, _, _)| gain > g) {
                let mut threshold = a + (b - a) / 2.0;
                if threshold >= b {
                    threshold = a;
                }
                best = Some((gain, f, threshold));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

impl ForestModel {
    /// Majority vote over trees, ties to the smaller class label.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<u32>, ForestError> {
        if x.ncols() != self.n_features {
            return Err(ForestError::Dimension(format!(
                "model has {} features, input has {}",
                self.n_features,
                x.ncols()
            )));
        }
        Ok(x
            .rows()
            .map(|row| {
                let mut votes = vec![0u64; self.classes.len()];
                for tree in &self.trees {
                    votes[tree.vote(row)] += 1;
                }
                self.classes[argmax_first(&votes)]
            })
            .collect())
    }

    /// Number of splits on each feature across the forest.
    pub fn split_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_features];
        for node in self.trees.iter().flat_map(|t| &t.nodes) {
            if let Node::Split { feature, .. } = node {
                counts[*feature] += 1;
            }
        }
        counts
    }

    /// Serializes to the model file format described in the module docs.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        let classes: Vec<String> = self.classes.iter().map(u32::to_string).collect();
        let _ = writeln!(out, "n_trees {} p {} classes {}", self.trees.len(), self.n_features, classes.join(" "));
        for (t, (tree, oob)) in self.trees.iter().zip(&self.oob_indices).enumerate() {
            let _ = write!(out, "tree {t} nodes {} oob {}", tree.nodes.len(), oob.len());
            for r in oob {
                let _ = write!(out, " {r}");
            }
            out.push('\n');
            for node in &tree.nodes {
                match node {
                    Node::Split { feature, threshold, .. } => {
                        let _ = writeln!(out, "split {feature} {threshold}");
                    }
                    Node::Leaf { counts } => {
                        out.push_str("leaf");
                        for c in counts {
                            let _ = write!(out, " {c}");
                        }
                        out.push('\n');
                    }
                }
            }
        }
        out
    }

    /// Parses the model file format.
    pub fn from_text(text: &str) -> Result<ForestModel, ForestError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let err = |line: usize, reason: &str| ForestError::Parse { line, reason: reason.to_string() };
        let mut next = |what: &str| lines.next().ok_or_else(|| err(0, &format!("unexpected end of file, expected {what}")));

        let (ln, magic) = next("header")?;
        if magic != MAGIC {
            return Err(err(ln, "not a forest model file"));
        }
        let (ln, header) = next("shape line")?;
        let f: Vec<&str> = header.split(' ').collect();
        if f.len() < 6 || f[0] != "n_trees" || f[2] != "p" || f[4] != "classes" {
            return Err(err(ln, "malformed shape line"));
        }
        let n_trees: usize = parse_field(f[1], ln)?;
        let n_features: usize = parse_field(f[3], ln)?;
        let classes = f[5..].iter().map(|s| parse_field::<u32>(s, ln)).collect::<Result<Vec<_>, _>>()?;

        let mut trees = Vec::with_capacity(n_trees);
        let mut oob_indices = Vec::with_capacity(n_trees);
        for t in 0..n_trees {
            let (ln, line) = next("tree line")?;
            let f: Vec<&str> = line.split(' ').collect();
            if f.len() < 6 || f[0] != "tree" || f[2] != "nodes" || f[4] != "oob" || parse_field::<usize>(f[1], ln)? != t {
                return Err(err(ln, "malformed tree line"));
            }
            let n_nodes: usize = parse_field(f[3], ln)?;
            let n_oob: usize = parse_field(f[5], ln)?;
            if f.len() != 6 + n_oob {
                return Err(err(ln, "oob count does not match listed rows"));
            }
            oob_indices.push(f[6..].iter().map(|s| parse_field(s, ln)).collect::<Result<Vec<usize>, _>>()?);

            let mut raw = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let (ln, line) = next("node line")?;
                let f: Vec<&str> = line.split(' ').collect();
                match f[0] {
                    "split" if f.len() == 3 => {
                        let feature: usize = parse_field(f[1], ln)?;
                        if feature >= n_features {
                            return Err(err(ln, "split feature out of range"));
                        }
                        raw.push((ln, Node::Split { feature, threshold: parse_field(f[2], ln)?, right: usize::MAX }));
                    }
                    "leaf" if f.len() == 1 + classes.len() => {
                        let counts = f[1..].iter().map(|s| parse_field(s, ln)).collect::<Result<Vec<u64>, _>>()?;
                        raw.push((ln, Node::Leaf { counts }));
                    }
                    _ => return Err(err(ln, "malformed node line")),
                }
            }
            let mut nodes: Vec<Node> = raw.iter().map(|(_, n)| n.clone()).collect();
            let end = link_preorder(&mut nodes, 0).ok_or_else(|| err(raw.last().map_or(ln, |r| r.0), "truncated tree"))?;
            if end != nodes.len() {
                return Err(err(raw[end].0, "extra nodes after a complete tree"));
            }
            trees.push(Tree { nodes });
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "trailing content"));
        }
        Ok(ForestModel { classes, n_features, trees, oob_indices })
    }
}

/// Fills in right-child pointers of a preorder node list; returns the
/// index just past the subtree rooted at `i`.
fn link_preorder(nodes: &mut [Node], i: usize) -> Option<usize> {
    match nodes.get(i)? {
        Node::Leaf { .. } => Some(i + 1),
        Node::Split { .. } => {
            let right_start = link_preorder(nodes, i + 1)?;
            if let Node::Split { right, .. } = &mut nodes[i] {
                *right = right_start;
            }
            link_preorder(nodes, right_start)
        }
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, ForestError> {
    s.parse().map_err(|_| ForestError::Parse { line, reason: format!("cannot parse `{s}`") })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor_data(n: usize, seed: u64) -> (Matrix, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = rng.gen_range(-1.0..1.0);
            let b: f64 = rng.gen_range(-1.0..1.0);
            rows.push([a, b]);
            y.push(if (a > 0.0) ^ (b > 0.0) { 1 } else { 2 });
        }
        (Matrix::from_rows(&rows), y)
    }

    fn leaf(counts: &[u64]) -> Node {
        Node::Leaf { counts: counts.to_vec() }
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[5, 5]), 0.5);
        assert_eq!(gini(&[4, 0]), 0.0);
        // perfect split of a 50/50 node removes all impurity
        assert!((gini_gain(&[5, 5], &[5, 0]) - 0.5).abs() < 1e-15);
        assert_eq!(gini_gain(&[5, 5], &[0, 0]), 0.0);
    }

    #[test]
    fn single_class_predicts_constant() {
        let (x, _) = xor_data(50, 1);
        let y = vec![3; 50];
        let model = train_forest(&x, &y, &ForestConfig { n_trees: 5, ..Default::default() }).unwrap();
        assert_eq!(model.classes, vec![3]);
        assert!(model.predict(&x).unwrap().iter().all(|&c| c == 3));
    }

    #[test]
    fn tie_vote_goes_to_smaller_class() {
        let model = ForestModel {
            classes: vec![1, 2, 3, 4],
            n_features: 1,
            trees: vec![Tree { nodes: vec![leaf(&[3, 0, 0, 1])] }, Tree { nodes: vec![leaf(&[0, 0, 0, 2])] }],
            oob_indices: vec![vec![], vec![]],
        };
        assert_eq!(model.predict(&Matrix::column_vector(&[0.0])).unwrap(), vec![1]);
        // leaf majority ties also go to the smaller class
        let one = Tree { nodes: vec![leaf(&[0, 2, 2, 0])] };
        assert_eq!(one.vote(&[0.0]), 1);
    }

    #[test]
    fn single_tree_prediction_is_leaf_majority() {
        let tree = Tree {
            nodes: vec![Node::Split { feature: 0, threshold: 0.5, right: 2 }, leaf(&[1, 4]), leaf(&[3, 0])],
        };
        let model = ForestModel { classes: vec![1, 4], n_features: 1, trees: vec![tree], oob_indices: vec![vec![]] };
        assert_eq!(model.predict(&Matrix::column_vector(&[0.2, 0.9])).unwrap(), vec![4, 1]);
    }

    #[test]
    fn config_errors() {
        let (x, y) = xor_data(10, 2);
        let bad = |cfg: ForestConfig| train_forest(&x, &y, &cfg).unwrap_err();
        assert!(matches!(bad(ForestConfig { n_trees: 0, ..Default::default() }), ForestError::Config(_)));
        assert!(matches!(bad(ForestConfig { mtry: Some(3), ..Default::default() }), ForestError::Config(_)));
        assert!(matches!(bad(ForestConfig { min_leaf: 0, ..Default::default() }), ForestError::Config(_)));
        assert_eq!(train_forest(&Matrix::zeros(0, 2), &[], &ForestConfig::default()), Err(ForestError::Empty));
        let model = train_forest(&x, &y, &ForestConfig { n_trees: 2, ..Default::default() }).unwrap();
        assert!(matches!(model.predict(&Matrix::zeros(1, 3)), Err(ForestError::Dimension(_))));
    }

    #[test]
    fn max_depth_and_min_leaf_respected() {
        let (x, y) = xor_data(200, 3);
        let cfg = ForestConfig { n_trees: 4, max_depth: Some(2), ..Default::default() };
        let model = train_forest(&x, &y, &cfg).unwrap();
        assert!(model.trees.iter().all(|t| t.depth() <= 2));
        let cfg = ForestConfig { n_trees: 4, min_leaf: 10, ..Default::default() };
        let model = train_forest(&x, &y, &cfg).unwrap();
        for node in model.trees.iter().flat_map(|t| &t.nodes) {
            if let Node::Leaf { counts } = node {
                assert!(counts.iter().sum::<u64>() >= 10);
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let (x, y) = xor_data(120, 4);
        let model = train_forest(&x, &y, &ForestConfig { n_trees: 3, seed: 8, ..Default::default() }).unwrap();
        let text = model.to_text();
        let back = ForestModel::from_text(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn parse_rejects_damage() {
        let (x, y) = xor_data(60, 5);
        let text = train_forest(&x, &y, &ForestConfig { n_trees: 1, ..Default::default() }).unwrap().to_text();
        assert!(ForestModel::from_text("nope\n").is_err());
        let truncated: String = text.lines().take(text.lines().count() - 1).map(|l| format!("{l}\n")).collect();
        assert!(ForestModel::from_text(&truncated).is_err());
        assert!(ForestModel::from_text(&format!("{text}leaf 1 1\n")).is_err());
    }
}
