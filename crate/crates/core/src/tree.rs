//! Weighted CART base learners grown best-first to a fixed leaf budget.
//!
//! Regression trees minimize weighted squared error and predict the weighted
//! mean response of a leaf; classification trees minimize weighted Gini
//! impurity and predict the weighted majority class. Both criteria reduce to
//! maximizing `score(left) + score(right) - score(parent)` where the score of
//! a node is `S²/W` (regression) or `Σ_c W_c²/W` (classification).
//!
//! Split candidates are midpoints between consecutive distinct values of a
//! feature, and samples go left iff `x[feature] <= threshold`. Among equal
//! gains the lowest feature index wins, then the lowest threshold.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Accepted splits must improve the criterion by more than this fraction of
/// the total sample weight.
pub const MIN_RELATIVE_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub min_weight_leaf: f64,
}

impl FitConfig {
    pub fn with_max_leaves(max_leaves: usize) -> Self {
        Self {
            max_leaves,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_leaves == 0 {
            return Err(Error::Config("max_leaves must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        if self.min_weight_leaf.is_nan() || self.min_weight_leaf < 0.0 {
            return Err(Error::Config("min_weight_leaf must be nonnegative".into()));
        }
        Ok(())
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_leaves: 8,
            min_samples_leaf: 1,
            min_weight_leaf: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode<L> {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode<L>>,
        right: Box<TreeNode<L>>,
    },
    Leaf(L),
}

pub type RegressionTree = TreeNode<f64>;
pub type ClassificationTree = TreeNode<usize>;

impl<L: Copy> TreeNode<L> {
    pub fn predict(&self, x: &[f64]) -> Result<L> {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf(value) => return Ok(*value),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let v = *x.get(*feature).ok_or(Error::Dimension {
                        expected: feature + 1,
                        found: x.len(),
                    })?;
                    if v.is_nan() {
                        return Err(Error::Domain(format!(
                            "missing value for feature {feature}"
                        )));
                    }
                    node = if v <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    /// Largest feature index referenced by any split.
    pub fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf(_) => None,
            TreeNode::Split {
                feature,
                left,
                right,
                ..
            } => [Some(*feature), left.max_feature(), right.max_feature()]
                .into_iter()
                .flatten()
                .max(),
        }
    }
}

/// Row orderings for every feature, computed once per feature matrix and
/// shared by every tree fitted on it.
pub struct FeatureIndex<'a> {
    x: ArrayView2<'a, f64>,
    sorted: Vec<Vec<u32>>,
}

impl<'a> FeatureIndex<'a> {
    pub fn new(x: ArrayView2<'a, f64>) -> Result<Self> {
        let (n, d) = x.dim();
        if n == 0 {
            return Err(Error::Empty("tree fit on zero samples"));
        }
        if d == 0 {
            return Err(Error::Empty("tree fit on zero features"));
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite feature value {bad}")));
        }
        let n_rows = u32::try_from(n).map_err(|_| Error::Config("too many rows".into()))?;
        let sorted = (0..d)
            .map(|j| {
                let col = x.column(j);
                let mut order: Vec<u32> = (0..n_rows).collect();
                order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                order
            })
            .collect();
        Ok(Self { x, sorted })
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }
}

/// Sufficient statistics of one impurity criterion.
trait Criterion {
    type Stats: Clone;
    type Leaf: Copy;

    fn empty(&self) -> Self::Stats;
    fn add(&self, stats: &mut Self::Stats, row: usize);
    fn remove(&self, stats: &mut Self::Stats, row: usize);
    fn weight(stats: &Self::Stats) -> f64;
    /// Node score; the impurity is `const - score`.
    fn score(stats: &Self::Stats) -> f64;
    fn leaf(stats: &Self::Stats) -> Self::Leaf;
}

struct SquaredError<'a> {
    y: &'a [f64],
    w: &'a [f64],
}

#[derive(Clone)]
struct MomentStats {
    weight: f64,
    weighted_sum: f64,
}

impl Criterion for SquaredError<'_> {
    type Stats = MomentStats;
    type Leaf = f64;

    fn empty(&self) -> MomentStats {
        MomentStats {
            weight: 0.0,
            weighted_sum: 0.0,
        }
    }

    fn add(&self, s: &mut MomentStats, row: usize) {
        s.weight += self.w[row];
        s.weighted_sum += self.w[row] * self.y[row];
    }

    fn remove(&self, s: &mut MomentStats, row: usize) {
        s.weight -= self.w[row];
        s.weighted_sum -= self.w[row] * self.y[row];
    }

    fn weight(s: &MomentStats) -> f64 {
        s.weight
    }

    fn score(s: &MomentStats) -> f64 {
        if s.weight > 0.0 {
            s.weighted_sum * s.weighted_sum / s.weight
        } else {
            0.0
        }
    }

    fn leaf(s: &MomentStats) -> f64 {
        if s.weight > 0.0 {
            s.weighted_sum / s.weight
        } else {
            0.0
        }
    }
}

struct Gini<'a> {
    labels: &'a [usize],
    w: &'a [f64],
    n_classes: usize,
}

#[derive(Clone)]
struct ClassStats {
    weight: f64,
    per_class: Vec<f64>,
    sum_sq: f64,
}

impl Criterion for Gini<'_> {
    type Stats = ClassStats;
    type Leaf = usize;

    fn empty(&self) -> ClassStats {
        ClassStats {
            weight: 0.0,
            per_class: vec![0.0; self.n_classes],
            sum_sq: 0.0,
        }
    }

    fn add(&self, s: &mut ClassStats, row: usize) {
        let (c, w) = (self.labels[row], self.w[row]);
        s.sum_sq += w * (2.0 * s.per_class[c] + w);
        s.per_class[c] += w;
        s.weight += w;
    }

    fn remove(&self, s: &mut ClassStats, row: usize) {
        let (c, w) = (self.labels[row], self.w[row]);
        s.sum_sq -= w * (2.0 * s.per_class[c] - w);
        s.per_class[c] -= w;
        s.weight -= w;
    }

    fn weight(s: &ClassStats) -> f64 {
        s.weight
    }

    fn score(s: &ClassStats) -> f64 {
        if s.weight > 0.0 {
            s.sum_sq / s.weight
        } else {
            0.0
        }
    }

    fn leaf(s: &ClassStats) -> usize {
        crate::margin::argmax(&s.per_class)
    }
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Leaf<S> {
    /// Rows of the leaf, sorted per feature.
    columns: Vec<Vec<u32>>,
    stats: S,
    best: Option<Candidate>,
}

enum Grown<L> {
    Leaf(L),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

struct Grower<'i, 'a, C: Criterion> {
    index: &'i FeatureIndex<'a>,
    criterion: C,
    cfg: &'i FitConfig,
    min_gain: f64,
}

impl<C: Criterion> Grower<'_, '_, C> {
    fn best_split(&self, columns: &[Vec<u32>], parent: &C::Stats) -> Option<Candidate> {
        let n = columns[0].len();
        if n < 2 * self.cfg.min_samples_leaf {
            return None;
        }
        let parent_score = C::score(parent);
        let mut best: Option<Candidate> = None;
        for (feature, rows) in columns.iter().enumerate() {
            let col = self.index.x.column(feature);
            let mut left = self.criterion.empty();
            let mut right = parent.clone();
            for k in 0..n - 1 {
                let row = rows[k] as usize;
                self.criterion.add(&mut left, row);
                self.criterion.remove(&mut right, row);
                let here = col[row];
                let next = col[rows[k + 1] as usize];
                if here == next {
                    continue;
                }
                let n_left = k + 1;
                if n_left < self.cfg.min_samples_leaf || n - n_left < self.cfg.min_samples_leaf {
                    continue;
                }
                let (wl, wr) = (C::weight(&left), C::weight(&right));
                if wl <= 0.0
                    || wr <= 0.0
                    || wl < self.cfg.min_weight_leaf
                    || wr < self.cfg.min_weight_leaf
                {
                    continue;
                }
                let gain = C::score(&left) + C::score(&right) - parent_score;
                if gain <= self.min_gain {
                    continue;
                }
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mut threshold = 0.5 * (here + next);
                    if threshold >= next {
                        threshold = here;
                    }
                    best = Some(Candidate {
                        gain,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best
    }

    fn make_leaf(&self, columns: Vec<Vec<u32>>) -> Leaf<C::Stats> {
        let mut stats = self.criterion.empty();
        for &row in &columns[0] {
            self.criterion.add(&mut stats, row as usize);
        }
        let best = self.best_split(&columns, &stats);
        Leaf {
            columns,
            stats,
            best,
        }
    }

    fn grow(&self) -> TreeNode<C::Leaf> {
        let root_columns = self.index.sorted.clone();

        let mut nodes: Vec<Grown<C::Leaf>> = Vec::new();
        // (node id, leaf under construction) in creation order
        let mut open: Vec<(usize, Leaf<C::Stats>)> = Vec::new();
        let root = self.make_leaf(root_columns);
        nodes.push(Grown::Leaf(C::leaf(&root.stats)));
        open.push((0, root));
        let mut n_leaves = 1;

        let mut goes_left = vec![false; self.index.n_samples()];
        while n_leaves < self.cfg.max_leaves {
            let mut pick: Option<usize> = None;
            for (k, (_, leaf)) in open.iter().enumerate() {
                if let Some(c) = &leaf.best {
                    if pick.is_none_or(|p| c.gain > open[p].1.best.as_ref().unwrap().gain) {
                        pick = Some(k);
                    }
                }
            }
            let Some(k) = pick else { break };
            let (id, leaf) = open.remove(k);
            let split = leaf.best.expect("picked leaf has a split");
            let col = self.index.x.column(split.feature);
            for &r in &leaf.columns[0] {
                goes_left[r as usize] = col[r as usize] <= split.threshold;
            }
            let (left_cols, right_cols): (Vec<_>, Vec<_>) = leaf
                .columns
                .into_iter()
                .map(|rows| rows.into_iter().partition(|&r| goes_left[r as usize]))
                .unzip();
            let left = self.make_leaf(left_cols);
            let right = self.make_leaf(right_cols);
            let (left_id, right_id) = (nodes.len(), nodes.len() + 1);
            nodes.push(Grown::Leaf(C::leaf(&left.stats)));
            nodes.push(Grown::Leaf(C::leaf(&right.stats)));
            nodes[id] = Grown::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: left_id,
                right: right_id,
            };
            // Node ids grow with creation, so `open` stays in creation order
            // and equal-gain ties resolve to the older leaf.
            open.push((left_id, left));
            open.push((right_id, right));
            n_leaves += 1;
        }
        assemble(&nodes, 0)
    }
}

fn assemble<L: Copy>(nodes: &[Grown<L>], id: usize) -> TreeNode<L> {
    match &nodes[id] {
        Grown::Leaf(v) => TreeNode::Leaf(*v),
        Grown::Split {
            feature,
            threshold,
            left,
            right,
        } => TreeNode::Split {
            feature: *feature,
            threshold: *threshold,
            left: Box::new(assemble(nodes, *left)),
            right: Box::new(assemble(nodes, *right)),
        },
    }
}

fn check_weights(n: usize, w: &[f64]) -> Result<f64> {
    if w.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: w.len(),
        });
    }
    if let Some(bad) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Domain(format!("invalid sample weight {bad}")));
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("all sample weights are zero".into()));
    }
    Ok(total)
}

/// Weighted least-squares regression tree on presorted features.
pub fn fit_regression_tree_indexed(
    index: &FeatureIndex<'_>,
    y: &[f64],
    w: &[f64],
    cfg: &FitConfig,
) -> Result<RegressionTree> {
    cfg.validate()?;
    let n = index.n_samples();
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: y.len(),
        });
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite response {bad}")));
    }
    let total = check_weights(n, w)?;
    let grower = Grower {
        index,
        criterion: SquaredError { y, w },
        cfg,
        min_gain: MIN_RELATIVE_GAIN * total,
    };
    Ok(grower.grow())
}

pub fn fit_regression_tree(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    w: &[f64],
    cfg: &FitConfig,
) -> Result<RegressionTree> {
    let index = FeatureIndex::new(x)?;
    fit_regression_tree_indexed(&index, y, w, cfg)
}

/// Weighted Gini classification tree on presorted features.
pub fn fit_classification_tree_indexed(
    index: &FeatureIndex<'_>,
    labels: &[usize],
    n_classes: usize,
    w: &[f64],
    cfg: &FitConfig,
) -> Result<ClassificationTree> {
    cfg.validate()?;
    let n = index.n_samples();
    if labels.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: labels.len(),
        });
    }
    if let Some(bad) = labels.iter().find(|&&c| c >= n_classes) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let total = check_weights(n, w)?;
    let grower = Grower {
        index,
        criterion: Gini {
            labels,
            w,
            n_classes,
        },
        cfg,
        min_gain: MIN_RELATIVE_GAIN * total,
    };
    Ok(grower.grow())
}

pub fn fit_classification_tree(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
    w: &[f64],
    cfg: &FitConfig,
) -> Result<ClassificationTree> {
    let index = FeatureIndex::new(x)?;
    fit_classification_tree_indexed(&index, labels, n_classes, w, cfg)
}
