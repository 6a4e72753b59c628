use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Class labels are small integers; callers map their label types onto them.
pub type ClassId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GBTConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub l2_lambda: f64,
    pub min_samples_leaf: usize,
    /// Kept for config completeness; training is fully deterministic.
    pub seed: u64,
}

impl Default for GBTConfig {
    fn default() -> Self {
        GBTConfig {
            rounds: 100,
            max_depth: 4,
            shrinkage: 0.1,
            l2_lambda: 1.0,
            min_samples_leaf: 2,
            seed: 0,
        }
    }
}

impl GBTConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.rounds == 0 {
            problems.push("rounds must be at least 1".to_string());
        }
        if self.max_depth == 0 {
            problems.push("max_depth must be at least 1".to_string());
        }
        if !(self.shrinkage.is_finite() && self.shrinkage > 0.0) {
            problems.push(format!("shrinkage {} must be positive", self.shrinkage));
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            problems.push(format!("l2_lambda {} must be non-negative", self.l2_lambda));
        }
        if self.min_samples_leaf == 0 {
            problems.push("min_samples_leaf must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] < threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f32,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

/// Regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f32]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(w) => return w,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[feature] < threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GBTModel {
    /// Sorted class labels; score column `k` belongs to `classes[k]`.
    pub classes: Vec<ClassId>,
    pub width: usize,
    pub base_score: f64,
    pub shrinkage: f64,
    /// `trees[round][class]`.
    pub trees: Vec<Vec<Tree>>,
}

impl GBTModel {
    /// A model with no rounds: uniform probabilities.
    pub fn untrained(classes: Vec<ClassId>, width: usize) -> Self {
        GBTModel {
            classes,
            width,
            base_score: 0.0,
            shrinkage: 1.0,
            trees: Vec::new(),
        }
    }

    fn scores(&self, row: &[f32]) -> Vec<f64> {
        let mut s = vec![self.base_score; self.classes.len()];
        for round in &self.trees {
            for (k, tree) in round.iter().enumerate() {
                s[k] += self.shrinkage * tree.predict(row);
            }
        }
        s
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

fn check_matrix(x: &Tensor, what: &str) -> Result<(usize, usize)> {
    if x.rank() != 2 {
        return Err(Error::contract(format!(
            "{what}: expected a matrix, got shape {:?}",
            x.shape()
        )));
    }
    Ok((x.shape()[0], x.shape()[1]))
}

/// Relative margin a gain must exceed the incumbent by. Candidate splits that
/// induce the same partition have mathematically equal gains whose computed
/// values differ only by summation order; treating them as ties keeps the
/// lowest-feature rule (and results) independent of sample order.
const GAIN_TIE_TOLERANCE: f64 = 1e-9;

struct SplitSearch<'a> {
    x: &'a [f32],
    width: usize,
    /// Row indices sorted by value, per feature.
    sorted: &'a [Vec<u32>],
    grad: &'a [f64],
    hess: &'a [f64],
    lambda: f64,
    min_leaf: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f32,
    gain: f64,
}

/// Threshold strictly between two distinct adjacent values.
fn midpoint(a: f32, b: f32) -> f32 {
    let m = a + (b - a) / 2.0;
    if m > a {
        m
    } else {
        b
    }
}

impl SplitSearch<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.lambda)
    }

    /// Exact greedy search; ties keep the lowest feature, then the lowest
    /// threshold.
    fn best(&self, member: &[bool], count: usize) -> Option<BestSplit> {
        if count < 2 * self.min_leaf {
            return None;
        }
        let (mut g_all, mut h_all) = (0.0, 0.0);
        for (i, &m) in member.iter().enumerate() {
            if m {
                g_all += self.grad[i];
                h_all += self.hess[i];
            }
        }
        let parent = self.score(g_all, h_all);
        let mut best: Option<BestSplit> = None;
        for f in 0..self.width {
            let (mut gl, mut hl) = (0.0, 0.0);
            let mut left = 0usize;
            let mut prev: Option<f32> = None;
            for &r in &self.sorted[f] {
                let r = r as usize;
                if !member[r] {
                    continue;
                }
                let v = self.x[r * self.width + f];
                if let Some(p) = prev {
                    if p < v && left >= self.min_leaf && count - left >= self.min_leaf {
                        let gain = 0.5
                            * (self.score(gl, hl) + self.score(g_all - gl, h_all - hl) - parent);
                        if gain > best.as_ref().map_or(0.0, |b| b.gain) * (1.0 + GAIN_TIE_TOLERANCE)
                        {
                            best = Some(BestSplit {
                                feature: f,
                                threshold: midpoint(p, v),
                                gain,
                            });
                        }
                    }
                }
                gl += self.grad[r];
                hl += self.hess[r];
                left += 1;
                prev = Some(v);
            }
        }
        best
    }

    fn leaf(&self, member: &[bool]) -> f64 {
        let (mut g, mut h) = (0.0, 0.0);
        for (i, &m) in member.iter().enumerate() {
            if m {
                g += self.grad[i];
                h += self.hess[i];
            }
        }
        if h + self.lambda > 0.0 {
            -g / (h + self.lambda)
        } else {
            0.0
        }
    }

    fn grow(&self, max_depth: usize) -> Tree {
        let n = self.grad.len();
        let mut tree = Tree { nodes: Vec::new() };
        self.grow_node(&mut tree, vec![true; n], n, max_depth);
        tree
    }

    fn grow_node(
        &self,
        tree: &mut Tree,
        member: Vec<bool>,
        count: usize,
        depth_left: usize,
    ) -> usize {
        let id = tree.nodes.len();
        tree.nodes.push(Node::Leaf(0.0));
        let split = if depth_left > 0 {
            self.best(&member, count)
        } else {
            None
        };
        match split {
            None => tree.nodes[id] = Node::Leaf(self.leaf(&member)),
            Some(s) => {
                let mut left = vec![false; member.len()];
                let mut right = vec![false; member.len()];
                let mut n_left = 0;
                for (i, &m) in member.iter().enumerate() {
                    if m {
                        if self.x[i * self.width + s.feature] < s.threshold {
                            left[i] = true;
                            n_left += 1;
                        } else {
                            right[i] = true;
                        }
                    }
                }
                let l = self.grow_node(tree, left, n_left, depth_left - 1);
                let r = self.grow_node(tree, right, count - n_left, depth_left - 1);
                tree.nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left: l,
                    right: r,
                };
            }
        }
        id
    }
}

/// Multiclass softmax boosting with exact greedy regression trees.
pub fn gbt_train(x: &Tensor, y: &[ClassId], cfg: &GBTConfig) -> Result<GBTModel> {
    cfg.validate()?;
    let (n, width) = check_matrix(x, "gbt_train")?;
    if y.len() != n {
        return Err(Error::contract(format!(
            "gbt_train: {n} rows but {} labels",
            y.len()
        )));
    }
    if !x.all_finite() {
        return Err(Error::contract("gbt_train: non-finite feature value"));
    }
    let mut classes: Vec<ClassId> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Config(format!(
            "gbt_train needs at least 2 classes, got {}",
            classes.len()
        )));
    }
    let target: Vec<usize> = y
        .iter()
        .map(|c| {
            classes
                .binary_search(c)
                .expect("class list built from labels")
        })
        .collect();
    let data = x.data();
    let sorted: Vec<Vec<u32>> = (0..width)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                data[a as usize * width + f]
                    .total_cmp(&data[b as usize * width + f])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();

    let k = classes.len();
    let mut model = GBTModel {
        classes,
        width,
        base_score: 0.0,
        shrinkage: cfg.shrinkage,
        trees: Vec::with_capacity(cfg.rounds),
    };
    let mut scores = vec![0.0f64; n * k];
    for _ in 0..cfg.rounds {
        let probs: Vec<Vec<f64>> = scores.chunks_exact(k).map(softmax).collect();
        let round: Vec<Tree> = (0..k)
            .into_par_iter()
            .map(|c| {
                let grad: Vec<f64> = (0..n)
                    .map(|i| probs[i][c] - if target[i] == c { 1.0 } else { 0.0 })
                    .collect();
                let hess: Vec<f64> = (0..n).map(|i| probs[i][c] * (1.0 - probs[i][c])).collect();
                SplitSearch {
                    x: data,
                    width,
                    sorted: &sorted,
                    grad: &grad,
                    hess: &hess,
                    lambda: cfg.l2_lambda,
                    min_leaf: cfg.min_samples_leaf,
                }
                .grow(cfg.max_depth)
            })
            .collect();
        for (i, row) in data.chunks_exact(width).enumerate() {
            for (c, tree) in round.iter().enumerate() {
                scores[i * k + c] += cfg.shrinkage * tree.predict(row);
            }
        }
        model.trees.push(round);
    }
    Ok(model)
}

/// Predicted labels and class-probability rows (columns follow
/// `model.classes`). Ties go to the lowest class index.
pub fn gbt_predict(model: &GBTModel, x: &Tensor) -> Result<(Vec<ClassId>, Vec<Vec<f64>>)> {
    let (_, width) = check_matrix(x, "gbt_predict")?;
    if width != model.width {
        return Err(Error::contract(format!(
            "gbt_predict: model trained on {} features, got {width}",
            model.width
        )));
    }
    let probs: Vec<Vec<f64>> = x
        .data()
        .chunks_exact(width.max(1))
        .map(|row| softmax(&model.scores(row)))
        .collect();
    let labels = probs
        .iter()
        .map(|p| {
            let mut best = 0;
            for (k, &v) in p.iter().enumerate() {
                if v > p[best] {
                    best = k;
                }
            }
            model.classes[best]
        })
        .collect();
    Ok((labels, probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn matrix(rows: &[Vec<f32>]) -> Tensor {
        let w = rows[0].len();
        Tensor::from_vec(&[rows.len(), w], rows.concat()).unwrap()
    }

    fn accuracy(model: &GBTModel, x: &Tensor, y: &[ClassId]) -> f64 {
        let (pred, _) = gbt_predict(model, x).unwrap();
        pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    #[test]
    fn separable_threshold_is_learned() {
        let xs: Vec<Vec<f32>> = (-5..5).map(|i| vec![i as f32 + 0.5]).collect();
        let y: Vec<ClassId> = (-5..5).map(|i| (i >= 0) as ClassId).collect();
        let x = matrix(&xs);
        let cfg = GBTConfig {
            rounds: 10,
            max_depth: 1,
            ..GBTConfig::default()
        };
        let model = gbt_train(&x, &y, &cfg).unwrap();
        assert_eq!(accuracy(&model, &x, &y), 1.0);
        match model.trees[0][0].nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, 0.0),
            ref other => panic!("{other:?}"),
        }
    }

    /// XOR layout with unequal cluster sizes so the greedy root split has
    /// positive gain.
    fn xor() -> (Tensor, Vec<ClassId>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for ((cx, cy), size) in [
            ((0.0, 0.0), 6),
            ((1.0, 1.0), 4),
            ((0.0, 1.0), 4),
            ((1.0, 0.0), 6),
        ] {
            for _ in 0..size {
                rows.push(vec![cx, cy]);
                y.push(((cx > 0.5) != (cy > 0.5)) as ClassId);
            }
        }
        (matrix(&rows), y)
    }

    #[test]
    fn xor_needs_depth_two() {
        let (x, y) = xor();
        let deep = GBTConfig {
            max_depth: 2,
            ..GBTConfig::default()
        };
        assert_eq!(accuracy(&gbt_train(&x, &y, &deep).unwrap(), &x, &y), 1.0);

        // No single axis-aligned stump classifies more than 3/4 of XOR.
        let data = x.data();
        let mut best = 0.0f64;
        for f in 0..2 {
            let mut values: Vec<f32> = data.iter().skip(f).step_by(2).cloned().collect();
            values.sort_by(f32::total_cmp);
            for t in values.windows(2).map(|w| midpoint(w[0], w[1])) {
                for left_class in 0..2 {
                    let correct = (0..y.len())
                        .filter(|&i| {
                            let pred = if data[2 * i + f] < t {
                                left_class
                            } else {
                                1 - left_class
                            };
                            pred == y[i]
                        })
                        .count();
                    best = best.max(correct as f64 / y.len() as f64);
                }
            }
        }
        assert!(best <= 0.75, "{best}");
    }

    #[test]
    fn zero_round_model_is_uniform() {
        let model = GBTModel::untrained(vec![2, 5, 9], 3);
        let (labels, probs) = gbt_predict(&model, &Tensor::zeros(&[4, 3])).unwrap();
        assert!(labels.iter().all(|&l| l == 2));
        for p in probs {
            assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[60, 4], |_| rng.random_range(-1.0..1.0));
        let y: Vec<ClassId> = (0..60).map(|i| (i % 3) as ClassId).collect();
        let model = gbt_train(
            &x,
            &y,
            &GBTConfig {
                rounds: 5,
                ..GBTConfig::default()
            },
        )
        .unwrap();
        let (_, probs) = gbt_predict(&model, &x).unwrap();
        for p in probs {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for round in &model.trees {
            for tree in round {
                assert!(tree.depth() <= 4);
                for node in &tree.nodes {
                    match *node {
                        Node::Split { feature, .. } => assert!(feature < 4),
                        Node::Leaf(w) => assert!(w.is_finite()),
                    }
                }
            }
        }
    }

    #[test]
    fn errors() {
        let x = Tensor::zeros(&[4, 2]);
        assert!(matches!(
            gbt_train(&x, &[1, 1, 1, 1], &GBTConfig::default()),
            Err(Error::Config(_))
        ));
        let model = gbt_train(
            &Tensor::from_fn(&[4, 2], |i| i as f32),
            &[0, 0, 1, 1],
            &GBTConfig::default(),
        )
        .unwrap();
        assert!(matches!(
            gbt_predict(&model, &Tensor::zeros(&[2, 3])),
            Err(Error::Contract(_))
        ));
        let bad = GBTConfig {
            rounds: 0,
            max_depth: 0,
            ..GBTConfig::default()
        };
        assert!(
            matches!(gbt_train(&x, &[0, 1, 0, 1], &bad), Err(Error::Validation(p)) if p.len() == 2)
        );
    }
}
