//! Margin vectors, class-probability vectors, and the five convex margin losses.
//!
//! A margin vector assigns one real score to each of the `m` classes and is
//! constrained to sum to zero. A loss `φ` is applied per class margin; the
//! expected risk at a point weights `φ(f_j)` by `p_j`, while the empirical
//! risk of a sample only charges the margin of its observed class.
//!
//! Class indices are zero-based throughout the crate (`0..m`).

use std::fmt;

use crate::error::{Error, Result};

/// Exponent arguments are clamped to this magnitude so that `exp` stays finite.
pub const EXP_CLAMP: f64 = 700.0;

const SUM_TOLERANCE: f64 = 1e-12;

#[inline]
pub(crate) fn clamped_exp(x: f64) -> f64 {
    x.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

/// `m` real margins that sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginVector {
    values: Vec<f64>,
}

impl MarginVector {
    /// Builds a margin vector from arbitrary finite scores by subtracting their mean.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Domain(format!(
                "a margin vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite margin {bad}")));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        for v in &mut values {
            *v -= mean;
        }
        Ok(Self { values })
    }

    pub fn zeros(m: usize) -> Self {
        assert!(m >= 2, "a margin vector needs at least 2 classes");
        Self {
            values: vec![0.0; m],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

impl std::ops::Index<usize> for MarginVector {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.values[j]
    }
}

/// A point on the probability simplex: conditional class probabilities at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    probs: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::Domain(format!(
                "a probability vector needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain(format!("probability {bad} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Domain(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes nonnegative finite weights (at least one positive) onto the simplex.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if let Some(bad) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::Domain(format!("invalid probability weight {bad}")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Domain("probability weights sum to zero".into()));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(m: usize) -> Self {
        assert!(m >= 2, "a probability vector needs at least 2 classes");
        Self {
            probs: vec![1.0 / m as f64; m],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// The argmax, or `None` when the largest probability is shared.
    pub fn unique_argmax(&self) -> Option<usize> {
        let best = self.argmax();
        let top = self.probs[best];
        let shared = self
            .probs
            .iter()
            .enumerate()
            .any(|(j, &p)| j != best && p == top);
        (!shared).then_some(best)
    }

    pub fn sup_distance(&self, other: &ProbabilityVector) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for ProbabilityVector {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.probs[j]
    }
}

/// The shipped margin-loss families.
///
/// `SquaredHinge` and `ModifiedHuber` are linearized versions of least squares:
/// constant beyond the right knot `t1 = 1`, and (for modified Huber) linear
/// below the left knot `t2 = -1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Loss {
    Exponential,
    Logit,
    LeastSquares,
    SquaredHinge,
    ModifiedHuber,
}

impl Loss {
    pub const ALL: [Loss; 5] = [
        Loss::Exponential,
        Loss::Logit,
        Loss::LeastSquares,
        Loss::SquaredHinge,
        Loss::ModifiedHuber,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Loss::Exponential => "exponential",
            Loss::Logit => "logit",
            Loss::LeastSquares => "least-squares",
            Loss::SquaredHinge => "squared-hinge",
            Loss::ModifiedHuber => "modified-huber",
        }
    }

    pub fn from_name(name: &str) -> Option<Loss> {
        Loss::ALL.into_iter().find(|l| l.name() == name)
    }

    /// Smooth families have a strictly increasing derivative everywhere.
    pub fn is_smooth(self) -> bool {
        matches!(self, Loss::Exponential | Loss::Logit | Loss::LeastSquares)
    }

    /// Knots `(t1, t2)` of a linearized family.
    pub fn knots(self) -> Option<(f64, f64)> {
        match self {
            Loss::SquaredHinge => Some((1.0, f64::NEG_INFINITY)),
            Loss::ModifiedHuber => Some((1.0, -1.0)),
            _ => None,
        }
    }

    pub fn value(self, t: f64) -> f64 {
        match self {
            Loss::Exponential => clamped_exp(-t),
            Loss::Logit => {
                if t > 0.0 {
                    (-t).exp().ln_1p()
                } else {
                    -t + t.exp().ln_1p()
                }
            }
            Loss::LeastSquares => (1.0 - t) * (1.0 - t),
            Loss::SquaredHinge => {
                let r = (1.0 - t).max(0.0);
                r * r
            }
            Loss::ModifiedHuber => {
                if t <= -1.0 {
                    -4.0 * t
                } else if t < 1.0 {
                    (t - 1.0) * (t - 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// First derivative. At the knots of the piecewise families the printed
    /// branch assignment is used: `t <= -1` is linear, `t >= 1` is flat.
    pub fn deriv(self, t: f64) -> f64 {
        match self {
            Loss::Exponential => -clamped_exp(-t),
            Loss::Logit => {
                if t > 0.0 {
                    let e = (-t).exp();
                    -e / (1.0 + e)
                } else {
                    -1.0 / (1.0 + t.exp())
                }
            }
            Loss::LeastSquares => 2.0 * (t - 1.0),
            Loss::SquaredHinge => {
                if t < 1.0 {
                    2.0 * (t - 1.0)
                } else {
                    0.0
                }
            }
            Loss::ModifiedHuber => {
                if t <= -1.0 {
                    -4.0
                } else if t < 1.0 {
                    2.0 * (t - 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn second_deriv(self, t: f64) -> f64 {
        match self {
            Loss::Exponential => clamped_exp(-t),
            Loss::Logit => {
                let s = -self.deriv(t);
                s * (1.0 - s)
            }
            Loss::LeastSquares => 2.0,
            Loss::SquaredHinge => {
                if t < 1.0 {
                    2.0
                } else {
                    0.0
                }
            }
            Loss::ModifiedHuber => {
                if t > -1.0 && t < 1.0 {
                    2.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Value of the derivative on the linear left tail, if the family has one.
    ///
    /// This is the smallest derivative value and it is attained on a whole
    /// interval `(-inf, t2]`, so `deriv` has no inverse there.
    pub fn deriv_floor(self) -> Option<f64> {
        match self {
            Loss::ModifiedHuber => Some(-4.0),
            _ => None,
        }
    }

    /// Inverse of the strictly increasing part of `deriv`, for `u < 0`.
    ///
    /// Returns `-inf` when `u` lies at or below the derivative's range (no
    /// finite margin has that slope) and `+inf` when `u >= 0` for the families
    /// whose derivative never reaches zero.
    pub fn inverse_deriv(self, u: f64) -> f64 {
        match self {
            Loss::Exponential => {
                if u >= 0.0 {
                    f64::INFINITY
                } else {
                    -(-u).ln()
                }
            }
            Loss::Logit => {
                if u <= -1.0 {
                    f64::NEG_INFINITY
                } else if u >= 0.0 {
                    f64::INFINITY
                } else {
                    // -1/(1+e^t) = u  =>  t = ln(-1/u - 1) = ln((1+u)/(-u))
                    (1.0 + u).ln() - (-u).ln()
                }
            }
            Loss::LeastSquares => 1.0 + 0.5 * u,
            Loss::SquaredHinge => 1.0 + 0.5 * u.min(0.0),
            Loss::ModifiedHuber => {
                if u <= -4.0 {
                    f64::NEG_INFINITY
                } else {
                    1.0 + 0.5 * u.min(0.0)
                }
            }
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Expected loss at a point: `Σ_j φ(f_j) p_j`.
pub fn expected_risk(loss: Loss, p: &ProbabilityVector, f: &MarginVector) -> Result<f64> {
    if p.len() != f.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            found: f.len(),
        });
    }
    Ok(p.probs()
        .iter()
        .zip(f.values())
        .map(|(&pj, &fj)| loss.value(fj) * pj)
        .sum())
}

/// Mean loss of the observed-class margins, summed left to right.
pub(crate) fn mean_loss(loss: Loss, label_margins: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = label_margins.len();
    let total: f64 = label_margins.map(|t| loss.value(t)).sum();
    total / n as f64
}

/// Empirical risk `(1/n) Σ_i φ(f_{y_i}(x_i))`.
pub fn empirical_risk(loss: Loss, margins: &[MarginVector], labels: &[usize]) -> Result<f64> {
    if margins.is_empty() {
        return Err(Error::Empty("empirical risk over zero samples"));
    }
    if margins.len() != labels.len() {
        return Err(Error::Dimension {
            expected: margins.len(),
            found: labels.len(),
        });
    }
    for (f, &y) in margins.iter().zip(labels) {
        if y >= f.len() {
            return Err(Error::Domain(format!(
                "label {y} out of range for {} classes",
                f.len()
            )));
        }
    }
    Ok(mean_loss(
        loss,
        margins.iter().zip(labels).map(|(f, &y)| f[y]),
    ))
}
