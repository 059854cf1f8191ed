//! Randomized numerical check of Fisher consistency on the simplex.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::Result;
use crate::margin::{Loss, ProbabilityVector};
use crate::solver::{check_fisher_consistency, reference_minimizer, DEFAULT_TOL};

/// Uniform draw from the open simplex with a unique largest entry.
pub fn random_simplex_point(m: usize, rng: &mut ChaCha8Rng) -> ProbabilityVector {
    loop {
        let weights: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
        if weights.iter().any(|&w| w <= 0.0) {
            continue;
        }
        let p = ProbabilityVector::from_weights(&weights).expect("positive weights");
        if p.unique_argmax().is_some() {
            return p;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub classes: usize,
    pub trials: usize,
    pub seed: u64,
    /// A trial passes when its round-trip error and closed-form deviation
    /// are strictly below this.
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct FamilyReport {
    pub loss: Loss,
    pub trials: usize,
    pub argmax_matches: usize,
    pub passes: usize,
    pub max_roundtrip_error: f64,
    /// Only for families with a closed or semi-closed form.
    pub max_closed_form_deviation: Option<f64>,
}

impl FamilyReport {
    pub fn all_passed(&self) -> bool {
        self.passes == self.trials
    }
}

pub fn sweep(loss: Loss, cfg: &SweepConfig) -> Result<FamilyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = FamilyReport {
        loss,
        trials: cfg.trials,
        argmax_matches: 0,
        passes: 0,
        max_roundtrip_error: 0.0,
        max_closed_form_deviation: None,
    };
    for _ in 0..cfg.trials {
        let p = random_simplex_point(cfg.classes, &mut rng);
        let check = check_fisher_consistency(loss, &p, DEFAULT_TOL)?;
        let deviation = match reference_minimizer(loss, &p, 1e-12) {
            Some(reference) => {
                let reference = reference?;
                let dev = reference
                    .values()
                    .iter()
                    .zip(check.margins.values())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                report.max_closed_form_deviation =
                    Some(report.max_closed_form_deviation.unwrap_or(0.0).max(dev));
                dev
            }
            None => 0.0,
        };
        report.max_roundtrip_error = report.max_roundtrip_error.max(check.roundtrip_error);
        if check.argmax_match {
            report.argmax_matches += 1;
        }
        if check.argmax_match && check.roundtrip_error < cfg.tolerance && deviation < cfg.tolerance
        {
            report.passes += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_passes_at_default_tolerance() {
        let cfg = SweepConfig {
            classes: 4,
            trials: 50,
            seed: 3,
            tolerance: 1e-6,
        };
        for loss in Loss::ALL {
            let r = sweep(loss, &cfg).unwrap();
            assert!(r.all_passed(), "{loss}: {r:?}");
            assert_eq!(r.max_closed_form_deviation.is_some(), loss.is_smooth());
        }
    }

    #[test]
    fn zero_tolerance_fails_every_trial() {
        let cfg = SweepConfig {
            classes: 3,
            trials: 20,
            seed: 1,
            tolerance: 0.0,
        };
        for loss in Loss::ALL {
            let r = sweep(loss, &cfg).unwrap();
            assert_eq!(r.passes, 0);
            assert_eq!(r.argmax_matches, 20);
        }
    }
}
