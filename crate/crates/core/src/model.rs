//! Common interface of the trained ensembles and a flat text model format.
//!
//! ```text
//! mcboost-model 1
//! algorithm gentleboost
//! classes 3
//! features 2
//! label setosa
//! label versicolor
//! label virginica
//! stages 1
//! round 1
//! tree 1
//! split 0 2.45
//! leaf 1.5
//! leaf -3
//! tree 2
//! ...
//! end
//! ```
//!
//! AdaBoost.ML files use `algorithm adaboost-ml` and one `stage <k> <gamma>`
//! header per stage followed by a single classification tree whose leaves
//! hold zero-based class indices. Trees are written in pre-order. Reals use
//! the shortest decimal form that parses back to the identical `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::adaml::{AdaMlModel, Stage};
use crate::data::{Dataset, LabelEncoder};
use crate::error::{Error, Result};
use crate::gentle::GentleModel;
use crate::margin::{Loss, MarginVector, ProbabilityVector};
use crate::solver::margins_to_probabilities;
use crate::tree::TreeNode;

pub const FORMAT_HEADER: &str = "mcboost-model 1";

/// A trained additive margin-vector model.
pub trait MarginModel {
    /// The loss whose empirical risk the model minimizes.
    fn loss(&self) -> Loss;
    fn encoder(&self) -> &LabelEncoder;
    fn n_features(&self) -> usize;
    fn n_stages(&self) -> usize;

    /// Raw class scores at `x`, before re-centering.
    fn scores(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Calls `visit(k, margins)` after each stage `k = 1..=n_stages` with the
    /// un-centered `n x m` score matrix of their rows.
    fn staged_scores(
        &self,
        x: ArrayView2<'_, f64>,
        visit: &mut dyn FnMut(usize, &Array2<f64>),
    ) -> Result<()>;

    fn n_classes(&self) -> usize {
        self.encoder().n_classes()
    }

    fn check_dims(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn margins(&self, x: &[f64]) -> Result<MarginVector> {
        MarginVector::new(self.scores(x)?)
    }

    fn predict_proba(&self, x: &[f64]) -> Result<ProbabilityVector> {
        Ok(margins_to_probabilities(self.loss(), &self.margins(x)?))
    }

    fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.margins(x)?.argmax())
    }

    fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        x.rows()
            .into_iter()
            .map(|row| self.predict(&row.to_vec()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageMetrics {
    pub error: f64,
    /// Mean loss of the true-class margin under the model's own loss.
    pub empirical_risk: f64,
}

/// Misclassification rate and empirical risk after each stage `1..=n_stages`.
pub fn staged_metrics(model: &dyn MarginModel, data: &Dataset) -> Result<Vec<StageMetrics>> {
    if data.n_samples() == 0 {
        return Err(Error::Empty("staged metrics over zero samples"));
    }
    let loss = model.loss();
    let mut out = Vec::with_capacity(model.n_stages());
    let mut failure = None;
    model.staged_scores(data.features.view(), &mut |_, scores| {
        if failure.is_some() {
            return;
        }
        let mut wrong = 0usize;
        let mut total = 0.0;
        for (row, &y) in scores.rows().into_iter().zip(&data.labels) {
            match MarginVector::new(row.to_vec()) {
                Ok(f) => {
                    wrong += usize::from(f.argmax() != y);
                    total += loss.value(f[y]);
                }
                Err(e) => failure = Some(e),
            }
        }
        let n = data.n_samples() as f64;
        out.push(StageMetrics {
            error: wrong as f64 / n,
            empirical_risk: total / n,
        });
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Gentle(GentleModel),
    AdaMl(AdaMlModel),
}

impl Model {
    pub fn as_margin_model(&self) -> &dyn MarginModel {
        match self {
            Model::Gentle(m) => m,
            Model::AdaMl(m) => m,
        }
    }

    pub fn algorithm_name(&self) -> &'static str {
        match self {
            Model::Gentle(_) => "gentleboost",
            Model::AdaMl(_) => "adaboost-ml",
        }
    }

    pub fn to_text(&self) -> String {
        let model = self.as_margin_model();
        let mut out = String::new();
        writeln!(out, "{FORMAT_HEADER}").unwrap();
        writeln!(out, "algorithm {}", self.algorithm_name()).unwrap();
        writeln!(out, "classes {}", model.n_classes()).unwrap();
        writeln!(out, "features {}", model.n_features()).unwrap();
        for name in model.encoder().names() {
            writeln!(out, "label {name}").unwrap();
        }
        writeln!(out, "stages {}", model.n_stages()).unwrap();
        match self {
            Model::Gentle(g) => {
                for (k, round) in g.rounds().iter().enumerate() {
                    writeln!(out, "round {}", k + 1).unwrap();
                    for (j, tree) in round.iter().enumerate() {
                        writeln!(out, "tree {}", j + 1).unwrap();
                        write_tree(&mut out, tree);
                    }
                }
            }
            Model::AdaMl(a) => {
                for (k, stage) in a.stages().iter().enumerate() {
                    writeln!(out, "stage {} {}", k + 1, stage.gamma).unwrap();
                    write_tree(&mut out, &stage.tree);
                }
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Model> {
        let mut lines = Lines::new(text);
        lines.expect_exact(FORMAT_HEADER)?;
        let algorithm = lines.keyword("algorithm")?.to_string();
        let m: usize = lines.parse_field("classes")?;
        let d: usize = lines.parse_field("features")?;
        let names = (0..m)
            .map(|_| lines.keyword("label").map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        let encoder = LabelEncoder::from_names(names).map_err(|e| lines.error(e.to_string()))?;
        let n_stages: usize = lines.parse_field("stages")?;
        let model = match algorithm.as_str() {
            "gentleboost" => {
                let mut rounds = Vec::with_capacity(n_stages);
                for k in 1..=n_stages {
                    lines.expect_numbered("round", k)?;
                    let mut trees = Vec::with_capacity(m);
                    for j in 1..=m {
                        lines.expect_numbered("tree", j)?;
                        trees.push(read_tree(&mut lines, |s| s.parse::<f64>().ok())?);
                    }
                    rounds.push(trees);
                }
                Model::Gentle(
                    GentleModel::from_parts(encoder, d, rounds)
                        .map_err(|e| lines.error(e.to_string()))?,
                )
            }
            "adaboost-ml" => {
                let mut stages = Vec::with_capacity(n_stages);
                for k in 1..=n_stages {
                    let rest = lines.keyword("stage")?;
                    let mut parts = rest.split(' ');
                    let index = parts.next().and_then(|s| s.parse::<usize>().ok());
                    let gamma = parts.next().and_then(|s| s.parse::<f64>().ok());
                    let (Some(index), Some(gamma), None) = (index, gamma, parts.next()) else {
                        return Err(lines.error(format!("malformed stage header {rest:?}")));
                    };
                    if index != k {
                        return Err(lines.error(format!("expected stage {k}, found {index}")));
                    }
                    let tree = read_tree(&mut lines, |s| s.parse::<usize>().ok())?;
                    stages.push(Stage { tree, gamma });
                }
                Model::AdaMl(
                    AdaMlModel::from_parts(encoder, d, stages)
                        .map_err(|e| lines.error(e.to_string()))?,
                )
            }
            other => return Err(lines.error(format!("unknown algorithm {other:?}"))),
        };
        lines.expect_exact("end")?;
        if let Some((line, _)) = lines.next_nonempty() {
            return Err(Error::ModelFormat {
                line,
                message: "trailing content after end".into(),
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Model::from_text(&text)
    }
}

impl From<GentleModel> for Model {
    fn from(m: GentleModel) -> Self {
        Model::Gentle(m)
    }
}

impl From<AdaMlModel> for Model {
    fn from(m: AdaMlModel) -> Self {
        Model::AdaMl(m)
    }
}

fn write_tree<L: std::fmt::Display>(out: &mut String, tree: &TreeNode<L>) {
    match tree {
        TreeNode::Leaf(v) => writeln!(out, "leaf {v}").unwrap(),
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            writeln!(out, "split {feature} {threshold}").unwrap();
            write_tree(out, left);
            write_tree(out, right);
        }
    }
}

fn read_tree<L>(lines: &mut Lines<'_>, parse_leaf: fn(&str) -> Option<L>) -> Result<TreeNode<L>> {
    let (line, text) = lines
        .next_nonempty()
        .ok_or_else(|| lines.error("unexpected end of file inside a tree".into()))?;
    let bad = |message: String| Error::ModelFormat { line, message };
    if let Some(rest) = text.strip_prefix("leaf ") {
        let value = parse_leaf(rest).ok_or_else(|| bad(format!("bad leaf value {rest:?}")))?;
        return Ok(TreeNode::Leaf(value));
    }
    if let Some(rest) = text.strip_prefix("split ") {
        let mut parts = rest.split(' ');
        let feature = parts.next().and_then(|s| s.parse::<usize>().ok());
        let threshold = parts.next().and_then(|s| s.parse::<f64>().ok());
        let (Some(feature), Some(threshold), None) = (feature, threshold, parts.next()) else {
            return Err(bad(format!("malformed split {rest:?}")));
        };
        let left = Box::new(read_tree(lines, parse_leaf)?);
        let right = Box::new(read_tree(lines, parse_leaf)?);
        return Ok(TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        });
    }
    Err(bad(format!("expected a tree node, found {text:?}")))
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    fn error(&self, message: String) -> Error {
        Error::ModelFormat {
            line: self.last,
            message,
        }
    }

    fn next_nonempty(&mut self) -> Option<(usize, &'a str)> {
        for (k, line) in self.inner.by_ref() {
            self.last = k + 1;
            if !line.is_empty() {
                return Some((k + 1, line));
            }
        }
        None
    }

    fn next_line(&mut self) -> Result<&'a str> {
        self.next_nonempty()
            .map(|(_, l)| l)
            .ok_or_else(|| self.error("unexpected end of file".into()))
    }

    fn expect_exact(&mut self, expected: &str) -> Result<()> {
        let line = self.next_line()?;
        if line != expected {
            return Err(self.error(format!("expected {expected:?}, found {line:?}")));
        }
        Ok(())
    }

    /// The remainder of a `keyword <rest>` line.
    fn keyword(&mut self, keyword: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        match line.strip_prefix(keyword) {
            Some("") => Ok(""),
            Some(rest) if rest.starts_with(' ') => Ok(&rest[1..]),
            _ => Err(self.error(format!("expected {keyword:?}, found {line:?}"))),
        }
    }

    fn parse_field<T: std::str::FromStr>(&mut self, keyword: &str) -> Result<T> {
        let rest = self.keyword(keyword)?;
        rest.parse()
            .map_err(|_| self.error(format!("bad value {rest:?} for {keyword}")))
    }

    fn expect_numbered(&mut self, keyword: &str, k: usize) -> Result<()> {
        let found: usize = self.parse_field(keyword)?;
        if found != k {
            return Err(self.error(format!("expected {keyword} {k}, found {found}")));
        }
        Ok(())
    }
}
