//! Multicategory GentleBoost.
//!
//! Keeps one unrestricted additive function `G_j` per class and reports the
//! centered margins `f_j = G_j - (1/m) Σ_k G_k`. Each round fits, for every
//! class `j`, a regression tree to the working response `1/z_ij` with weights
//! `w_i z_ij²`, where `z_ij = -1/m + I(y_i = j)` and `w_i = exp(-f_{y_i}(x_i))`.
//! This is a Newton step on the empirical exponential risk with the Hessian
//! replaced by its diagonal. The `m` trees of one round read the same weights
//! and are fitted in parallel.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::data::{Dataset, LabelEncoder};
use crate::error::{Error, Result};
use crate::margin::{clamped_exp, Loss};
use crate::model::MarginModel;
use crate::tree::{fit_regression_tree_indexed, FeatureIndex, FitConfig, RegressionTree, TreeNode};

#[derive(Debug, Clone, PartialEq)]
pub struct GentleConfig {
    /// Defaults to 8 terminal nodes.
    pub tree: FitConfig,
    /// Multiplier on every fitted tree. Not part of the original algorithm;
    /// the default of 1 disables it.
    pub shrinkage: f64,
}

impl Default for GentleConfig {
    fn default() -> Self {
        Self {
            tree: FitConfig::default(),
            shrinkage: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GentleModel {
    encoder: LabelEncoder,
    n_features: usize,
    /// `rounds[k][j]` is the class-`j` increment fitted in round `k + 1`.
    rounds: Vec<Vec<RegressionTree>>,
}

impl GentleModel {
    pub fn from_parts(
        encoder: LabelEncoder,
        n_features: usize,
        rounds: Vec<Vec<RegressionTree>>,
    ) -> Result<Self> {
        let m = encoder.n_classes();
        if m < 2 {
            return Err(Error::Degenerate(format!("{m} classes")));
        }
        for round in &rounds {
            if round.len() != m {
                return Err(Error::Dimension {
                    expected: m,
                    found: round.len(),
                });
            }
            if let Some(f) = round.iter().filter_map(TreeNode::max_feature).max() {
                if f >= n_features {
                    return Err(Error::Dimension {
                        expected: n_features,
                        found: f + 1,
                    });
                }
            }
        }
        Ok(Self {
            encoder,
            n_features,
            rounds,
        })
    }

    pub fn rounds(&self) -> &[Vec<RegressionTree>] {
        &self.rounds
    }

    /// The model after its first `k` rounds.
    pub fn truncated(&self, k: usize) -> GentleModel {
        GentleModel {
            encoder: self.encoder.clone(),
            n_features: self.n_features,
            rounds: self.rounds[..k.min(self.rounds.len())].to_vec(),
        }
    }
}

impl MarginModel for GentleModel {
    fn loss(&self) -> Loss {
        Loss::Exponential
    }

    fn encoder(&self) -> &LabelEncoder {
        &self.encoder
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_stages(&self) -> usize {
        self.rounds.len()
    }

    fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x)?;
        let mut g = vec![0.0; self.n_classes()];
        for round in &self.rounds {
            for (gj, tree) in g.iter_mut().zip(round) {
                *gj += tree.predict(x)?;
            }
        }
        Ok(g)
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
        let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        let mut g = Array2::zeros((rows.len(), self.n_classes()));
        for (k, round) in self.rounds.iter().enumerate() {
            for (i, row) in rows.iter().enumerate() {
                for (j, tree) in round.iter().enumerate() {
                    g[[i, j]] += tree.predict(row)?;
                }
            }
            visit(k + 1, &g);
        }
        Ok(())
    }
}

/// Working response `1/z` for a sample whose class does (`true`) or does not
/// match the class being fitted: `m/(m-1)` or `-m`.
pub fn working_response(n_classes: usize, matches: bool) -> f64 {
    1.0 / working_z(n_classes, matches)
}

fn working_z(n_classes: usize, matches: bool) -> f64 {
    -1.0 / n_classes as f64 + if matches { 1.0 } else { 0.0 }
}

/// Training state handed to the observer after every round.
pub struct GentleRound<'a> {
    pub round: usize,
    /// Centered training margins, one row per sample.
    pub margins: &'a Array2<f64>,
    /// `w_i = exp(-f_{y_i}(x_i))`, the weights entering the next round.
    pub weights: &'a [f64],
}

pub fn fit_gentleboost(data: &Dataset, rounds: usize, cfg: &GentleConfig) -> Result<GentleModel> {
    fit_gentleboost_observed(data, rounds, cfg, |_| {})
}

pub fn fit_gentleboost_observed(
    data: &Dataset,
    rounds: usize,
    cfg: &GentleConfig,
    mut observe: impl FnMut(&GentleRound<'_>),
) -> Result<GentleModel> {
    if rounds == 0 {
        return Err(Error::Config(
            "at least one boosting round is required".into(),
        ));
    }
    if !(cfg.shrinkage > 0.0 && cfg.shrinkage.is_finite()) {
        return Err(Error::Config(format!(
            "invalid shrinkage {}",
            cfg.shrinkage
        )));
    }
    cfg.tree.validate()?;
    data.check_trainable()?;

    let (n, m) = (data.n_samples(), data.n_classes());
    let index = FeatureIndex::new(data.features.view())?;
    let rows: Vec<Vec<f64>> = data
        .features
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();
    let base: Vec<f64> = data.weights.clone().unwrap_or_else(|| vec![1.0; n]);

    let mut weights = base.clone();
    let mut g = Array2::<f64>::zeros((n, m));
    let mut f = Array2::<f64>::zeros((n, m));
    let mut fitted = Vec::with_capacity(rounds);

    for round in 1..=rounds {
        let trees = (0..m)
            .into_par_iter()
            .map(|j| {
                let mut response = Vec::with_capacity(n);
                let mut w_star = Vec::with_capacity(n);
                for (&y, &w) in data.labels.iter().zip(&weights) {
                    let z = working_z(m, y == j);
                    response.push(1.0 / z);
                    w_star.push(w * z * z);
                }
                let total: f64 = w_star.iter().sum();
                w_star.iter_mut().for_each(|w| *w /= total);
                let tree = fit_regression_tree_indexed(&index, &response, &w_star, &cfg.tree)?;
                Ok(if cfg.shrinkage == 1.0 {
                    tree
                } else {
                    scale_leaves(tree, cfg.shrinkage)
                })
            })
            .collect::<Result<Vec<RegressionTree>>>()?;

        for (i, row) in rows.iter().enumerate() {
            for (j, tree) in trees.iter().enumerate() {
                g[[i, j]] += tree.predict(row)?;
            }
            let mean = g.row(i).sum() / m as f64;
            for j in 0..m {
                f[[i, j]] = g[[i, j]] - mean;
            }
            weights[i] = base[i] * clamped_exp(-f[[i, data.labels[i]]]);
        }
        fitted.push(trees);
        observe(&GentleRound {
            round,
            margins: &f,
            weights: &weights,
        });
    }

    GentleModel::from_parts(data.encoder.clone(), data.n_features(), fitted)
}

fn scale_leaves(tree: RegressionTree, factor: f64) -> RegressionTree {
    match tree {
        TreeNode::Leaf(v) => TreeNode::Leaf(v * factor),
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => TreeNode::Split {
            feature,
            threshold,
            left: Box::new(scale_leaves(*left, factor)),
            right: Box::new(scale_leaves(*right, factor)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelEncoder;
    use ndarray::array;

    fn two_point() -> Dataset {
        Dataset::new(
            array![[0.0], [1.0]],
            vec![0, 1],
            LabelEncoder::from_names(["a", "b"]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn working_responses_for_three_classes() {
        assert!((working_response(3, true) - 1.5).abs() < 1e-15);
        assert!((working_response(3, false) + 3.0).abs() < 1e-15);
        // |1/z| <= m
        for m in 2..10 {
            assert!(working_response(m, false).abs() <= m as f64 + 1e-12);
            assert!(working_response(m, true).abs() <= m as f64);
        }
    }

    #[test]
    fn zero_round_model_has_zero_margins() {
        let model = GentleModel::from_parts(
            LabelEncoder::from_names(["a", "b", "c"]).unwrap(),
            2,
            vec![],
        )
        .unwrap();
        assert_eq!(model.margins(&[1.0, 2.0]).unwrap().values(), &[0.0; 3]);
        let p = model.predict_proba(&[1.0, 2.0]).unwrap();
        assert_eq!(p.probs(), &[1.0 / 3.0; 3]);
        assert!(model.margins(&[1.0]).is_err());
    }

    #[test]
    fn one_round_hand_trace() {
        // Two samples, two classes, stumps. For class 0 the working responses
        // are (2, -2) with equal weights, so the stump reproduces them.
        // G = [[2, -2], [-2, 2]] and f = G since rows already sum to zero.
        let data = two_point();
        let model = fit_gentleboost(&data, 1, &GentleConfig::default()).unwrap();
        assert_eq!(model.margins(&[0.0]).unwrap().values(), &[2.0, -2.0]);
        assert_eq!(model.margins(&[1.0]).unwrap().values(), &[-2.0, 2.0]);
        assert_eq!(model.rounds().len(), 1);
        assert_eq!(model.rounds()[0].len(), 2);
    }

    #[test]
    fn single_leaf_round_is_weighted_mean() {
        // With one leaf the class-0 tree predicts the weighted mean of the
        // responses: weights z² are equal, responses 2 and -2, so 0.
        let data = two_point();
        let cfg = GentleConfig {
            tree: FitConfig::with_max_leaves(1),
            ..GentleConfig::default()
        };
        let model = fit_gentleboost(&data, 1, &cfg).unwrap();
        assert_eq!(model.margins(&[0.0]).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let data = two_point();
        assert!(matches!(
            fit_gentleboost(&data, 0, &GentleConfig::default()),
            Err(Error::Config(_))
        ));
        let single = Dataset::new(
            array![[0.0], [1.0]],
            vec![0, 0],
            LabelEncoder::from_names(["a"]).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            fit_gentleboost(&single, 3, &GentleConfig::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn constant_added_to_every_class_leaves_prediction() {
        let data = two_point();
        let model = fit_gentleboost(&data, 2, &GentleConfig::default()).unwrap();
        let scores = model.scores(&[0.3]).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|s| s + 17.0).collect();
        let a = crate::margin::MarginVector::new(scores).unwrap();
        let b = crate::margin::MarginVector::new(shifted).unwrap();
        assert_eq!(a.argmax(), b.argmax());
    }
}
