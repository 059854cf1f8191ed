//! Multicategory boosting with margin-vector losses.
//!
//! A margin vector holds one score per class and sums to zero; a convex loss
//! `φ` applied to the observed class's margin gives an empirical risk whose
//! population minimizer ranks the Bayes class first and can be inverted back
//! to class probabilities. The crate ships five such losses, a population
//! solver, weighted CART base learners, GentleBoost (exponential loss,
//! regression trees) and AdaBoost.ML (logit loss, classification trees).

pub mod adaml;
pub mod consistency;
pub mod data;
pub mod error;
pub mod gentle;
pub mod margin;
pub mod model;
pub mod solver;
pub mod tree;

pub use adaml::{fit_adaboost_ml, increment_vector, line_search, AdaMlConfig, AdaMlModel};
pub use data::{load_delimited, synth_blobs, Dataset, LabelEncoder, ReadOptions, SynthSpec};
pub use error::{Error, Result};
pub use gentle::{fit_gentleboost, GentleConfig, GentleModel};
pub use margin::{empirical_risk, expected_risk, Loss, MarginVector, ProbabilityVector};
pub use model::{staged_metrics, MarginModel, Model, StageMetrics};
pub use solver::{check_fisher_consistency, margins_to_probabilities, population_minimizer};
pub use tree::{FitConfig, TreeNode};
