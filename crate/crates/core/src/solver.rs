//! Population minimizers of the constrained expected risk and the inverse
//! map from optimal margins back to class probabilities.
//!
//! The generic solver works on the Lagrangian stationarity condition
//! `φ'(f_j) p_j = -λ`: for a given multiplier every margin is
//! `f_j = ψ(-λ/p_j)` with `ψ` the inverse of `φ'`, and `Σ_j ψ(-λ/p_j)` is
//! decreasing in `λ`, so the multiplier that makes the margins sum to zero
//! is found by bisection.
//!
//! For losses with a linear left tail (modified Huber) the derivative is
//! constant below the left knot and `ψ` is set-valued at that slope. When
//! the multiplier is pinned at `-φ'(t2) p_min` the smallest-probability
//! classes sit on the tail and their margin is fixed by the sum constraint.

use crate::error::{Error, Result};
use crate::margin::{argmax, Loss, MarginVector, ProbabilityVector};

/// Default sup-norm tolerance on returned margins.
pub const DEFAULT_TOL: f64 = 1e-8;
pub const MAX_BISECTION_ITERS: usize = 200;

/// Floor applied to `φ'` before inverting it, since a learned margin may sit
/// in the flat region of a linearized loss.
pub const DERIV_CLIP: f64 = -1e-10;

fn require_positive(p: &ProbabilityVector) -> Result<()> {
    match p.probs().iter().find(|&&pj| pj <= 0.0) {
        Some(pj) => Err(Error::Domain(format!(
            "population minimizer needs every p_j > 0, got {pj}"
        ))),
        None => Ok(()),
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

struct Multiplier<'a> {
    loss: Loss,
    probs: &'a [f64],
}

impl Multiplier<'_> {
    fn margin(&self, lambda: f64, pj: f64) -> f64 {
        self.loss.inverse_deriv(-lambda / pj)
    }

    fn margin_sum(&self, lambda: f64) -> f64 {
        self.probs.iter().map(|&pj| self.margin(lambda, pj)).sum()
    }

    /// Margin movement of each class between two multipliers.
    fn spreads(&self, lo: f64, hi: f64) -> Vec<f64> {
        self.probs
            .iter()
            .map(|&pj| (self.margin(lo, pj) - self.margin(hi, pj)).abs())
            .collect()
    }
}

/// Replaces entry `k` by minus the sum of the others.
///
/// Used for the class whose margin is worst conditioned in the multiplier;
/// the sum constraint then pins it as accurately as the rest.
fn close_by_sum(mut values: Vec<f64>, k: usize) -> Vec<f64> {
    values[k] = 0.0;
    values[k] = -values.iter().sum::<f64>();
    values
}

fn largest(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (j, v)| {
            if v > best.1 {
                (j, v)
            } else {
                best
            }
        })
}

/// Minimizes `Σ_j φ(f_j) p_j` subject to `Σ_j f_j = 0`.
///
/// The returned margins are within `tol` (sup norm) of the exact minimizer.
pub fn population_minimizer(loss: Loss, p: &ProbabilityVector, tol: f64) -> Result<MarginVector> {
    require_positive(p)?;
    let probs = p.probs();
    let (p_min, p_max) = min_max(probs);
    let eq = Multiplier { loss, probs };

    // Multiplier values beyond `cap` would need a slope below the loss's floor.
    let mut cap = f64::INFINITY;
    if let (Some(floor), Some((_, left_knot))) = (loss.deriv_floor(), loss.knots()) {
        cap = -floor * p_min;
        let tail = probs.iter().filter(|&&pj| pj == p_min).count();
        let rest: f64 = probs
            .iter()
            .filter(|&&pj| pj > p_min)
            .map(|&pj| eq.margin(cap, pj))
            .sum();
        if rest + tail as f64 * left_knot >= 0.0 {
            let tail_margin = -rest / tail as f64;
            let values = probs
                .iter()
                .map(|&pj| {
                    if pj == p_min {
                        tail_margin
                    } else {
                        eq.margin(cap, pj)
                    }
                })
                .collect();
            return MarginVector::new(values);
        }
    }

    // At λ = -φ'(0) p_min the smallest class has margin 0 and every other
    // margin is nonnegative; at λ = -φ'(0) p_max the opposite holds.
    let slope0 = -loss.deriv(0.0);
    let mut lo = slope0 * p_min;
    let mut hi = (slope0 * p_max).min(cap);

    let mut expansions = 0;
    while eq.margin_sum(lo) < 0.0 {
        lo *= 0.5;
        expansions += 1;
        if expansions > MAX_BISECTION_ITERS {
            return Err(Error::NonConvergence {
                what: "multiplier bracket (lower end)",
                iterations: expansions,
                residual: eq.margin_sum(lo),
            });
        }
    }
    while eq.margin_sum(hi) > 0.0 {
        hi = (hi * 2.0).min(cap);
        expansions += 1;
        if expansions > MAX_BISECTION_ITERS {
            return Err(Error::NonConvergence {
                what: "multiplier bracket (upper end)",
                iterations: expansions,
                residual: eq.margin_sum(hi),
            });
        }
    }

    let mut collapsed = lo >= hi;
    let mut iterations = 0;
    while !collapsed && iterations < MAX_BISECTION_ITERS {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            collapsed = true;
            break;
        }
        let s = eq.margin_sum(mid);
        if s == 0.0 {
            lo = mid;
            hi = mid;
            collapsed = true;
        } else if s > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut spreads = eq.spreads(lo, hi);
    let (k, _) = largest(&spreads);
    spreads[k] = 0.0;
    let (_, spread) = largest(&spreads);
    if !collapsed || spread.is_nan() || spread > tol {
        return Err(Error::NonConvergence {
            what: "multiplier bisection",
            iterations,
            residual: spread,
        });
    }
    // Every margin is finite at the lower end and the true multiplier lies
    // in [lo, hi], so all classes but `k` are within `spread`.
    let values = probs.iter().map(|&pj| eq.margin(lo, pj)).collect();
    MarginVector::new(close_by_sum(values, k))
}

/// `f_j = log p_j - (1/m) Σ_k log p_k`.
pub fn exponential_minimizer_closed_form(p: &ProbabilityVector) -> Result<MarginVector> {
    require_positive(p)?;
    MarginVector::new(p.probs().iter().map(|pj| pj.ln()).collect())
}

/// `f_j = 1 - 1 / (p_j · (1/m) Σ_k 1/p_k)`.
pub fn least_squares_minimizer_closed_form(p: &ProbabilityVector) -> Result<MarginVector> {
    require_positive(p)?;
    let m = p.len() as f64;
    let mean_inv = p.probs().iter().map(|pj| 1.0 / pj).sum::<f64>() / m;
    MarginVector::new(
        p.probs()
            .iter()
            .map(|pj| 1.0 - 1.0 / (pj * mean_inv))
            .collect(),
    )
}

/// Root `λ*` of `Σ_j log(p_j λ - 1) = 0` on `λ > 1/p_min`.
///
/// At the root `λ* = Σ_k (1 + e^{f_k})` for the logit minimizer `f`; for two
/// classes this is `1/(p_1 p_2)`.
pub fn logit_multiplier(p: &ProbabilityVector, tol: f64) -> Result<f64> {
    require_positive(p)?;
    let probs = p.probs();
    let (p_min, p_max) = min_max(probs);
    let h = |lambda: f64| -> f64 { probs.iter().map(|&pj| (pj * lambda - 1.0).ln()).sum() };

    // h(2/p_max) <= 0 and h(2/p_min) >= 0 since one term vanishes and the
    // rest share its sign.
    let mut lo = (2.0 / p_max).max(1.0 / p_min);
    let mut hi = 2.0 / p_min;
    let mut collapsed = false;
    for _ in 0..MAX_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            collapsed = true;
            break;
        }
        if h(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let root = if h(lo).abs() <= h(hi).abs() { lo } else { hi };
    let residual = h(root).abs();
    // Near p_j λ = 1 a single ulp in λ can move h by more than `tol`.
    if residual.is_nan() || (residual > tol && !collapsed) {
        return Err(Error::NonConvergence {
            what: "logit multiplier root",
            iterations: MAX_BISECTION_ITERS,
            residual,
        });
    }
    Ok(root)
}

/// Logit minimizer `f_j = log(p_j λ* - 1)` via the multiplier root.
pub fn logit_minimizer(p: &ProbabilityVector, tol: f64) -> Result<MarginVector> {
    let root = logit_multiplier(p, tol)?;
    let values = p.probs().iter().map(|&pj| (pj * root - 1.0).ln()).collect();
    let (k, _) = largest(&p.probs().iter().map(|pj| -pj).collect::<Vec<_>>());
    MarginVector::new(close_by_sum(values, k))
}

/// The closed or semi-closed form minimizer, for the families that have one.
pub fn reference_minimizer(
    loss: Loss,
    p: &ProbabilityVector,
    tol: f64,
) -> Option<Result<MarginVector>> {
    match loss {
        Loss::Exponential => Some(exponential_minimizer_closed_form(p)),
        Loss::Logit => Some(logit_minimizer(p, tol)),
        Loss::LeastSquares => Some(least_squares_minimizer_closed_form(p)),
        Loss::SquaredHinge | Loss::ModifiedHuber => None,
    }
}

/// Inverts margins to probabilities, `p_j ∝ 1/φ'(f_j)`.
pub fn margins_to_probabilities(loss: Loss, f: &MarginVector) -> ProbabilityVector {
    let values = f.values();
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = match loss {
        // 1/φ' ∝ e^{f_j}
        Loss::Exponential => values.iter().map(|fj| (fj - top).exp()).collect(),
        // 1/φ' ∝ 1 + e^{f_j}, scaled by e^{-max(top, 0)}
        Loss::Logit => {
            let shift = top.max(0.0);
            values
                .iter()
                .map(|fj| (-shift).exp() + (fj - shift).exp())
                .collect()
        }
        _ => values
            .iter()
            .map(|&fj| -1.0 / loss.deriv(fj).min(DERIV_CLIP))
            .collect(),
    };
    ProbabilityVector::from_weights(&weights)
        .expect("inverse-derivative weights are positive and finite")
}

#[derive(Debug, Clone)]
pub struct FisherReport {
    pub argmax_match: bool,
    pub roundtrip_error: f64,
    pub margins: MarginVector,
}

/// Solves the population problem and checks that the optimal margins rank
/// the Bayes class first and invert back to `p`.
pub fn check_fisher_consistency(
    loss: Loss,
    p: &ProbabilityVector,
    tol: f64,
) -> Result<FisherReport> {
    let bayes = p.unique_argmax().ok_or_else(|| {
        Error::Domain("Fisher-consistency check needs a unique most probable class".into())
    })?;
    let margins = population_minimizer(loss, p, tol)?;
    let recovered = margins_to_probabilities(loss, &margins);
    Ok(FisherReport {
        argmax_match: argmax(margins.values()) == bayes,
        roundtrip_error: recovered.sup_distance(p),
        margins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::from_weights(v).unwrap()
    }

    fn assert_margins(f: &MarginVector, expected: &[f64], tol: f64) {
        assert_eq!(f.len(), expected.len());
        for (a, b) in f.values().iter().zip(expected) {
            assert_abs_diff_eq!(a, b, epsilon = tol);
        }
    }

    /// Derivative-free compass search over the sum-zero plane.
    fn brute_force_minimizer(loss: Loss, p: &ProbabilityVector) -> Vec<f64> {
        let m = p.len();
        let risk = |free: &[f64]| {
            let last = -free.iter().sum::<f64>();
            free.iter()
                .chain(std::iter::once(&last))
                .zip(p.probs())
                .map(|(&f, &pj)| loss.value(f) * pj)
                .sum::<f64>()
        };
        let mut x = vec![0.0; m - 1];
        let mut best = risk(&x);
        let mut step = 1.0;
        while step > 1e-10 {
            let mut improved = false;
            for k in 0..m - 1 {
                for dir in [1.0, -1.0] {
                    let mut y = x.clone();
                    y[k] += dir * step;
                    let r = risk(&y);
                    if r < best {
                        best = r;
                        x = y;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        let last = -x.iter().sum::<f64>();
        x.push(last);
        x
    }

    #[test]
    fn exponential_examples() {
        let f = population_minimizer(
            Loss::Exponential,
            &ProbabilityVector::uniform(4),
            DEFAULT_TOL,
        )
        .unwrap();
        assert_margins(&f, &[0.0; 4], 1e-12);

        let p = pv(&[0.5, 0.25, 0.25]);
        let expected = [0.462098, -0.231049, -0.231049];
        let generic = population_minimizer(Loss::Exponential, &p, DEFAULT_TOL).unwrap();
        assert_margins(&generic, &expected, 1e-6);
        let closed = exponential_minimizer_closed_form(&p).unwrap();
        assert_margins(&closed, &expected, 1e-6);

        let e = std::f64::consts::E;
        let binary = pv(&[e / (e + 1.0), 1.0 / (e + 1.0)]);
        assert_margins(
            &exponential_minimizer_closed_form(&binary).unwrap(),
            &[0.5, -0.5],
            1e-12,
        );
        assert_margins(
            &exponential_minimizer_closed_form(&pv(&[1.0, 1.0])).unwrap(),
            &[0.0, 0.0],
            0.0,
        );
    }

    #[test]
    fn least_squares_examples() {
        let p = pv(&[0.5, 0.25, 0.25]);
        let expected = [0.4, -0.2, -0.2];
        assert_margins(
            &population_minimizer(Loss::LeastSquares, &p, DEFAULT_TOL).unwrap(),
            &expected,
            1e-9,
        );
        assert_margins(
            &least_squares_minimizer_closed_form(&p).unwrap(),
            &expected,
            1e-12,
        );
        assert_margins(
            &least_squares_minimizer_closed_form(&pv(&[0.8, 0.2])).unwrap(),
            &[0.6, -0.6],
            1e-12,
        );
        assert_margins(
            &least_squares_minimizer_closed_form(&ProbabilityVector::uniform(5)).unwrap(),
            &[0.0; 5],
            1e-12,
        );
    }

    #[test]
    fn logit_examples() {
        let ln3 = 3f64.ln();
        assert_margins(
            &logit_minimizer(&pv(&[0.75, 0.25]), 1e-12).unwrap(),
            &[ln3, -ln3],
            1e-9,
        );
        assert_margins(
            &logit_minimizer(&ProbabilityVector::uniform(6), 1e-12).unwrap(),
            &[0.0; 6],
            1e-12,
        );
        let p = pv(&[0.6, 0.3, 0.1]);
        let semi = logit_minimizer(&p, 1e-12).unwrap();
        let generic = population_minimizer(Loss::Logit, &p, DEFAULT_TOL).unwrap();
        assert_margins(&semi, generic.values(), 1e-6);
        assert_margins(&semi, &brute_force_minimizer(Loss::Logit, &p), 1e-6);
    }

    #[test]
    fn two_class_logit_multiplier_is_reciprocal_of_product() {
        for p1 in [0.75, 0.6, 0.9, 0.3] {
            let p2 = 1.0 - p1;
            let root = logit_multiplier(&pv(&[p1, p2]), 1e-13).unwrap();
            assert_abs_diff_eq!(root * p1 * p2, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn linearized_families_match_brute_force() {
        for probs in [
            vec![0.4, 0.35, 0.25],
            vec![0.5, 0.3, 0.15, 0.05],
            vec![0.7, 0.3],
            vec![0.45, 0.44, 0.11],
        ] {
            let p = pv(&probs);
            for loss in [Loss::SquaredHinge, Loss::ModifiedHuber] {
                let f = population_minimizer(loss, &p, DEFAULT_TOL).unwrap();
                assert_margins(&f, &brute_force_minimizer(loss, &p), 1e-6);
            }
        }
    }

    #[test]
    fn modified_huber_pinned_multiplier_case() {
        // λ = 4 p_min: the two large classes get 1 - λ/(2 p_j) = 5/9 and the
        // smallest class absorbs the constraint at -10/9, below the knot.
        let p = pv(&[0.45, 0.45, 0.1]);
        let f = population_minimizer(Loss::ModifiedHuber, &p, DEFAULT_TOL).unwrap();
        assert_margins(&f, &[5.0 / 9.0, 5.0 / 9.0, -10.0 / 9.0], 1e-12);
        assert_margins(&f, &brute_force_minimizer(Loss::ModifiedHuber, &p), 1e-6);
        let back = margins_to_probabilities(Loss::ModifiedHuber, &f);
        assert!(back.sup_distance(&p) < 1e-12);
    }

    #[test]
    fn squared_hinge_shares_least_squares_minimizer() {
        let p = pv(&[0.5, 0.2, 0.2, 0.1]);
        let hinge = population_minimizer(Loss::SquaredHinge, &p, DEFAULT_TOL).unwrap();
        let ls = least_squares_minimizer_closed_form(&p).unwrap();
        assert_margins(&hinge, ls.values(), 1e-8);
    }

    #[test]
    fn inversion_examples() {
        assert_eq!(
            margins_to_probabilities(Loss::Exponential, &MarginVector::zeros(3)).probs(),
            &[1.0 / 3.0; 3]
        );
        let f = MarginVector::new(vec![0.462098, -0.231049, -0.231049]).unwrap();
        let p = margins_to_probabilities(Loss::Exponential, &f);
        assert!(p.sup_distance(&pv(&[0.5, 0.25, 0.25])) < 1e-6);

        let ln3 = 3f64.ln();
        let f = MarginVector::new(vec![ln3, -ln3]).unwrap();
        let p = margins_to_probabilities(Loss::Logit, &f);
        assert!(p.sup_distance(&pv(&[0.75, 0.25])) < 1e-12);
    }

    #[test]
    fn inversion_clips_flat_region() {
        let f = MarginVector::new(vec![3.0, -1.0, -2.0]).unwrap();
        for loss in [Loss::SquaredHinge, Loss::ModifiedHuber] {
            let p = margins_to_probabilities(loss, &f);
            assert!(p.probs().iter().all(|v| v.is_finite()));
            assert_eq!(p.argmax(), 0);
        }
    }

    #[test]
    fn fisher_report_examples() {
        let r = check_fisher_consistency(Loss::Logit, &pv(&[0.5, 0.3, 0.2]), DEFAULT_TOL).unwrap();
        assert!(r.argmax_match);
        let r = check_fisher_consistency(Loss::ModifiedHuber, &pv(&[0.4, 0.35, 0.25]), DEFAULT_TOL)
            .unwrap();
        assert!(r.argmax_match);
        let r = check_fisher_consistency(Loss::Exponential, &pv(&[0.5, 0.25, 0.25]), DEFAULT_TOL)
            .unwrap();
        assert!(r.roundtrip_error < 1e-6);
        assert!(
            check_fisher_consistency(Loss::Logit, &ProbabilityVector::uniform(3), 1e-8).is_err()
        );
    }

    #[test]
    fn rejects_zero_probabilities() {
        let p = ProbabilityVector::new(vec![1.0, 0.0]).unwrap();
        for loss in Loss::ALL {
            assert!(matches!(
                population_minimizer(loss, &p, DEFAULT_TOL),
                Err(Error::Domain(_))
            ));
        }
        assert!(exponential_minimizer_closed_form(&p).is_err());
        assert!(least_squares_minimizer_closed_form(&p).is_err());
        assert!(logit_minimizer(&p, 1e-8).is_err());
    }

    #[test]
    fn impossible_tolerance_is_reported() {
        // Any attainable spread is positive for this point.
        let p = pv(&[0.6, 0.3, 0.1]);
        assert!(matches!(
            population_minimizer(Loss::Logit, &p, -1.0),
            Err(Error::NonConvergence { .. })
        ));
    }
}
