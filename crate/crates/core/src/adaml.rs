//! AdaBoost.ML: functional gradient descent on the empirical logit risk
//! `(1/n) Σ_i log(1 + exp(-f_{y_i}(x_i)))` over margin vectors.
//!
//! The negative gradient at sample `i` is proportional to
//! `w_i = 1/(1 + exp(f_{y_i}(x_i)))`. A weighted m-class tree `T` induces the
//! unit-norm, sum-zero increment `g_j(x) = a` if `T(x) = j`, `-b` otherwise,
//! with `a = sqrt((m-1)/m)` and `b = 1/sqrt(m(m-1))`; the step along it is
//! chosen by a one-dimensional line search.

use log::{debug, warn};
use ndarray::{Array2, ArrayView2};

use crate::data::{Dataset, LabelEncoder};
use crate::error::{Error, Result};
use crate::margin::{mean_loss, Loss, MarginVector};
use crate::model::MarginModel;
use crate::tree::{
    fit_classification_tree_indexed, ClassificationTree, FeatureIndex, FitConfig, TreeNode,
};

/// `(a, b)`: the increment is `a` at the predicted class and `-b` elsewhere.
pub fn increment_constants(n_classes: usize) -> (f64, f64) {
    let m = n_classes as f64;
    (((m - 1.0) / m).sqrt(), 1.0 / (m * (m - 1.0)).sqrt())
}

pub fn increment_vector(predicted: usize, n_classes: usize) -> MarginVector {
    assert!(n_classes >= 2 && predicted < n_classes);
    let (a, b) = increment_constants(n_classes);
    let values = (0..n_classes)
        .map(|j| if j == predicted { a } else { -b })
        .collect();
    MarginVector::new(values).expect("finite increment")
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaMlConfig {
    /// Tree size; `None` uses one leaf per class.
    pub max_leaves: Option<usize>,
    pub min_samples_leaf: usize,
    pub min_weight_leaf: f64,
    pub gamma_max: f64,
    pub line_search_tol: f64,
    /// Stop after this many consecutive steps below `stall_gamma`.
    pub stall_rounds: usize,
    pub stall_gamma: f64,
}

impl Default for AdaMlConfig {
    fn default() -> Self {
        Self {
            max_leaves: None,
            min_samples_leaf: 1,
            min_weight_leaf: 0.0,
            gamma_max: 10.0,
            line_search_tol: 1e-6,
            stall_rounds: 5,
            stall_gamma: 1e-8,
        }
    }
}

impl AdaMlConfig {
    fn tree_config(&self, n_classes: usize) -> FitConfig {
        FitConfig {
            max_leaves: self.max_leaves.unwrap_or(n_classes),
            min_samples_leaf: self.min_samples_leaf,
            min_weight_leaf: self.min_weight_leaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub tree: ClassificationTree,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaMlModel {
    encoder: LabelEncoder,
    n_features: usize,
    stages: Vec<Stage>,
}

impl AdaMlModel {
    pub fn from_parts(
        encoder: LabelEncoder,
        n_features: usize,
        stages: Vec<Stage>,
    ) -> Result<Self> {
        let m = encoder.n_classes();
        if m < 2 {
            return Err(Error::Degenerate(format!("{m} classes")));
        }
        for stage in &stages {
            if !(stage.gamma >= 0.0 && stage.gamma.is_finite()) {
                return Err(Error::Domain(format!(
                    "invalid step length {}",
                    stage.gamma
                )));
            }
            if let Some(f) = stage.tree.max_feature() {
                if f >= n_features {
                    return Err(Error::Dimension {
                        expected: n_features,
                        found: f + 1,
                    });
                }
            }
            if leaf_classes(&stage.tree).any(|c| c >= m) {
                return Err(Error::Domain(format!(
                    "tree predicts a class outside 0..{m}"
                )));
            }
        }
        Ok(Self {
            encoder,
            n_features,
            stages,
        })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn truncated(&self, k: usize) -> AdaMlModel {
        AdaMlModel {
            encoder: self.encoder.clone(),
            n_features: self.n_features,
            stages: self.stages[..k.min(self.stages.len())].to_vec(),
        }
    }
}

fn leaf_classes(tree: &ClassificationTree) -> Box<dyn Iterator<Item = usize> + '_> {
    match tree {
        TreeNode::Leaf(c) => Box::new(std::iter::once(*c)),
        TreeNode::Split { left, right, .. } => {
            Box::new(leaf_classes(left).chain(leaf_classes(right)))
        }
    }
}

fn add_increment(f: &mut [f64], predicted: usize, gamma: f64, a: f64, b: f64) {
    for (j, fj) in f.iter_mut().enumerate() {
        *fj += gamma * if j == predicted { a } else { -b };
    }
}

impl MarginModel for AdaMlModel {
    fn loss(&self) -> Loss {
        Loss::Logit
    }

    fn encoder(&self) -> &LabelEncoder {
        &self.encoder
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_stages(&self) -> usize {
        self.stages.len()
    }

    fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x)?;
        let m = self.n_classes();
        let (a, b) = increment_constants(m);
        let mut f = vec![0.0; m];
        for stage in &self.stages {
            add_increment(&mut f, stage.tree.predict(x)?, stage.gamma, a, b);
        }
        Ok(f)
    }

    fn staged_scores(
        &self,
        x: ArrayView2<'_, f64>,
        visit: &mut dyn FnMut(usize, &Array2<f64>),
    ) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        let m = self.n_classes();
        let (a, b) = increment_constants(m);
        let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        let mut f = Array2::zeros((rows.len(), m));
        for (k, stage) in self.stages.iter().enumerate() {
            for (i, row) in rows.iter().enumerate() {
                let t = stage.tree.predict(row)?;
                let mut fi = f.row_mut(i);
                add_increment(
                    fi.as_slice_mut().expect("standard layout"),
                    t,
                    stage.gamma,
                    a,
                    b,
                );
            }
            visit(k + 1, &f);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub gamma: f64,
    /// The unconstrained minimizer lies at a negative step.
    pub negative_optimum: bool,
}

/// Minimizes `γ ↦ (1/n) Σ_i log(1 + exp(-f_i - γ g_i))` over `[0, gamma_max]`
/// by bisection on its (increasing) derivative.
///
/// `label_margins[i]` is `f_{y_i}(x_i)` and `label_increments[i]` is
/// `g_{y_i}(x_i)`. When the objective is flat at zero the leftmost
/// minimizer `0` is returned.
pub fn line_search(
    label_margins: &[f64],
    label_increments: &[f64],
    gamma_max: f64,
    tol: f64,
) -> Result<LineSearch> {
    if label_margins.is_empty() {
        return Err(Error::Empty("line search over zero samples"));
    }
    if label_margins.len() != label_increments.len() {
        return Err(Error::Dimension {
            expected: label_margins.len(),
            found: label_increments.len(),
        });
    }
    if label_margins
        .iter()
        .chain(label_increments)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Domain(
            "non-finite margin or increment in line search".into(),
        ));
    }
    if !(0.0..f64::INFINITY).contains(&gamma_max) || tol.is_nan() || tol <= 0.0 {
        return Err(Error::Config(format!(
            "invalid line search bounds gamma_max={gamma_max} tol={tol}"
        )));
    }

    let n = label_margins.len() as f64;
    let slope = |gamma: f64| -> f64 {
        label_margins
            .iter()
            .zip(label_increments)
            .map(|(&f, &g)| g * Loss::Logit.deriv(f + gamma * g))
            .sum::<f64>()
            / n
    };
    let objective = |gamma: f64| -> f64 {
        mean_loss(
            Loss::Logit,
            label_margins
                .iter()
                .zip(label_increments)
                .map(|(&f, &g)| f + gamma * g),
        )
    };

    let slope0 = slope(0.0);
    if slope0 >= 0.0 {
        return Ok(LineSearch {
            gamma: 0.0,
            negative_optimum: slope0 > 0.0,
        });
    }
    let gamma = if slope(gamma_max) <= 0.0 {
        gamma_max
    } else {
        let (mut lo, mut hi) = (0.0, gamma_max);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let value = objective(gamma);
    if !value.is_finite() {
        return Err(Error::Domain("line search objective is not finite".into()));
    }
    Ok(LineSearch {
        gamma: if value <= objective(0.0) { gamma } else { 0.0 },
        negative_optimum: false,
    })
}

/// Training state handed to the observer after every stage.
pub struct AdaMlRound<'a> {
    pub round: usize,
    /// Training margins after the update, one row per sample.
    pub margins: &'a Array2<f64>,
    /// Normalized weights the stage's tree was fitted with.
    pub weights: &'a [f64],
    pub gamma: f64,
    pub weighted_accuracy: f64,
    pub empirical_risk: f64,
}

pub fn fit_adaboost_ml(data: &Dataset, rounds: usize, cfg: &AdaMlConfig) -> Result<AdaMlModel> {
    fit_adaboost_ml_observed(data, rounds, cfg, |_| {})
}

pub fn fit_adaboost_ml_observed(
    data: &Dataset,
    rounds: usize,
    cfg: &AdaMlConfig,
    mut observe: impl FnMut(&AdaMlRound<'_>),
) -> Result<AdaMlModel> {
    if rounds == 0 {
        return Err(Error::Config(
            "at least one boosting round is required".into(),
        ));
    }
    data.check_trainable()?;
    let (n, m) = (data.n_samples(), data.n_classes());
    let tree_cfg = cfg.tree_config(m);
    tree_cfg.validate()?;
    let index = FeatureIndex::new(data.features.view())?;
    let rows: Vec<Vec<f64>> = data
        .features
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();
    let base: Vec<f64> = data.weights.clone().unwrap_or_else(|| vec![1.0; n]);
    let (a, b) = increment_constants(m);

    let mut f = Array2::<f64>::zeros((n, m));
    let mut weights = vec![0.0; n];
    let mut stages: Vec<Stage> = Vec::with_capacity(rounds);
    let mut stalled = 0;

    for round in 1..=rounds {
        for (i, w) in weights.iter_mut().enumerate() {
            *w = -base[i] * Loss::Logit.deriv(f[[i, data.labels[i]]]);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);

        let tree = fit_classification_tree_indexed(&index, &data.labels, m, &weights, &tree_cfg)?;
        let predicted = rows
            .iter()
            .map(|row| tree.predict(row))
            .collect::<Result<Vec<_>>>()?;

        let weighted_accuracy: f64 = predicted
            .iter()
            .zip(&data.labels)
            .zip(&weights)
            .filter(|((t, y), _)| t == y)
            .map(|(_, w)| w)
            .sum();
        if weighted_accuracy <= 1.0 / m as f64 {
            warn!(
                "round {round}: base classifier weighted accuracy {weighted_accuracy:.4} is not above 1/m"
            );
        }

        let label_margins: Vec<f64> = (0..n).map(|i| f[[i, data.labels[i]]]).collect();
        let label_increments: Vec<f64> = predicted
            .iter()
            .zip(&data.labels)
            .map(|(t, y)| if t == y { a } else { -b })
            .collect();
        let step = line_search(
            &label_margins,
            &label_increments,
            cfg.gamma_max,
            cfg.line_search_tol,
        )?;
        if step.negative_optimum {
            debug!("round {round}: unconstrained step would be negative; using 0");
        }

        for (i, &t) in predicted.iter().enumerate() {
            let mut fi = f.row_mut(i);
            add_increment(
                fi.as_slice_mut().expect("standard layout"),
                t,
                step.gamma,
                a,
                b,
            );
        }
        stages.push(Stage {
            tree,
            gamma: step.gamma,
        });
        let empirical_risk = mean_loss(Loss::Logit, (0..n).map(|i| f[[i, data.labels[i]]]));
        observe(&AdaMlRound {
            round,
            margins: &f,
            weights: &weights,
            gamma: step.gamma,
            weighted_accuracy,
            empirical_risk,
        });

        if step.gamma < cfg.stall_gamma {
            stalled += 1;
            if cfg.stall_rounds > 0 && stalled >= cfg.stall_rounds {
                stages.truncate(stages.len() - stalled);
                debug!(
                    "stopping after {round} rounds; {} effective stages",
                    stages.len()
                );
                break;
            }
        } else {
            stalled = 0;
        }
    }

    AdaMlModel::from_parts(data.encoder.clone(), data.n_features(), stages)
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;

    #[test]
    fn increment_for_three_classes() {
        let g = increment_vector(0, 3);
        let expected = [0.816497, -0.408248, -0.408248];
        for (a, b) in g.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-6);
        }
        let g2 = increment_vector(0, 2);
        assert!((g2[0] - 0.707107).abs() < 1e-6);
        assert!((g2[1] + 0.707107).abs() < 1e-6);
    }

    #[test]
    fn increment_constraints_hold() {
        for m in 2..=12 {
            for c in [0, m - 1] {
                let g = increment_vector(c, m);
                assert!(g.sum().abs() < 1e-12);
                let sq: f64 = g.values().iter().map(|v| v * v).sum();
                assert!((sq - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flat_objective_gives_zero_step() {
        let s = line_search(&[0.3, -1.0, 2.0], &[0.0; 3], 10.0, 1e-6).unwrap();
        assert_eq!(s.gamma, 0.0);
        assert!(!s.negative_optimum);
    }

    #[test]
    fn all_correct_goes_to_the_bound() {
        let (a, _) = increment_constants(3);
        let s = line_search(&[0.0; 4], &[a; 4], 10.0, 1e-6).unwrap();
        assert_eq!(s.gamma, 10.0);
    }

    #[test]
    fn symmetric_pair_minimum_at_zero() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = line_search(&[0.0, 0.0], &[h, -h], 10.0, 1e-9).unwrap();
        assert_eq!(s.gamma, 0.0);
        // Dense grid agrees.
        let obj = |g: f64| 0.5 * (Loss::Logit.value(g * h) + Loss::Logit.value(-g * h));
        let best = (0..=10_000)
            .map(|k| k as f64 * 1e-3)
            .min_by(|x, y| obj(*x).total_cmp(&obj(*y)))
            .unwrap();
        assert_eq!(best, 0.0);
    }

    #[test]
    fn interior_minimum_matches_grid() {
        let (a, b) = increment_constants(3);
        let f = [0.2, -0.4, 0.1, 0.0, 0.5];
        let g = [a, a, -b, a, -b];
        let s = line_search(&f, &g, 10.0, 1e-9).unwrap();
        let obj = |gamma: f64| {
            f.iter()
                .zip(&g)
                .map(|(fi, gi)| Loss::Logit.value(fi + gamma * gi))
                .sum::<f64>()
        };
        let grid = (0..=100_000)
            .map(|k| k as f64 * 1e-4)
            .min_by(|x, y| obj(*x).total_cmp(&obj(*y)))
            .unwrap();
        assert!(s.gamma > 0.0 && s.gamma < 10.0);
        assert!((s.gamma - grid).abs() < 2e-4, "{} vs {grid}", s.gamma);
    }

    #[test]
    fn wrong_direction_reports_negative_optimum() {
        let b = increment_constants(3).1;
        let s = line_search(&[0.0; 3], &[-b; 3], 10.0, 1e-6).unwrap();
        assert_eq!(s.gamma, 0.0);
        assert!(s.negative_optimum);
    }

    #[test]
    fn line_search_errors() {
        assert!(line_search(&[], &[], 10.0, 1e-6).is_err());
        assert!(line_search(&[0.0], &[0.0, 1.0], 10.0, 1e-6).is_err());
        assert!(line_search(&[f64::NAN], &[1.0], 10.0, 1e-6).is_err());
    }
}
