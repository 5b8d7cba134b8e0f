//! Independent ground-truth distinguishers and estimators.
//!
//! These validate the closed-form results in [`crate::leakage`]: exact
//! enumeration over the binomial sufficient statistic where feasible, seeded
//! Monte Carlo with a likelihood-ratio decision rule otherwise. Nothing here
//! shares code with the bound formulas it checks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::leakage::{RatioPair, ZipfSpec};
use crate::util::{mix64, KahanSum};

/// Enumeration limit: binomial coefficients stay exact in u128 and the sums
/// stay O(n).
pub const MAX_ENUM_N: u32 = 64;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("n = {0} exceeds the exact-enumeration limit of {MAX_ENUM_N}")]
    TooLarge(u32),
    #[error("prediction/truth lengths differ or are empty ({predictions} vs {truths})")]
    LengthMismatch { predictions: usize, truths: usize },
}

/// A seeded Monte-Carlo estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: u64,
    pub seed: u64,
}

/// Exact binomial pmf over `k = 0..=n`, built from u128 Pascal coefficients.
fn binomial_pmf(n: u32, alpha: f64) -> Vec<f64> {
    let mut coef: u128 = 1;
    let mut pmf = Vec::with_capacity(n as usize + 1);
    for k in 0..=n {
        let p = coef as f64 * alpha.powi(k as i32) * (1.0 - alpha).powi((n - k) as i32);
        pmf.push(p);
        if k < n {
            coef = coef * (n - k) as u128 / (k + 1) as u128;
        }
    }
    pmf
}

/// Bayes accuracy of the optimal equal-prior test between the two proportional
/// distributions from `n` samples, by enumerating the sufficient statistic
/// (the count of property-positive records): `1/2 * sum_k max(pmf0, pmf1)`.
pub fn exact_optimal_accuracy(pair: RatioPair, n: u32) -> Result<f64, OracleError> {
    if n > MAX_ENUM_N {
        return Err(OracleError::TooLarge(n));
    }
    let p0 = binomial_pmf(n, pair.alpha0());
    let p1 = binomial_pmf(n, pair.alpha1());
    let mut acc = KahanSum::new();
    for k in 0..=n as usize {
        acc.add(p0[k].max(p1[k]));
    }
    Ok(0.5 * acc.total())
}

/// Expected squared error of the maximum-likelihood ratio estimate (the sample
/// ratio) over all datasets of size `n`, by direct enumeration.
pub fn exact_regression_mse(alpha: f64, n: u32) -> Result<f64, OracleError> {
    if n > MAX_ENUM_N {
        return Err(OracleError::TooLarge(n));
    }
    let pmf = binomial_pmf(n, alpha);
    let mut acc = KahanSum::new();
    for (k, p) in pmf.iter().enumerate() {
        let err = k as f64 / n as f64 - alpha;
        acc.add(p * err * err);
    }
    Ok(acc.total())
}

/// Inverse-CDF sampler over a finite Zipf support with a precomputed
/// cumulative table, plus the log-pmf used by the likelihood-ratio test.
struct ZipfTable {
    cumulative: Vec<f64>,
    log_norm: f64,
    exponent: f64,
    n_elems: u64,
}

impl ZipfTable {
    fn new(spec: ZipfSpec) -> Self {
        let norm = spec.normalizer();
        let mut cumulative = Vec::with_capacity(spec.n_elems() as usize);
        let mut acc = KahanSum::new();
        for k in 1..=spec.n_elems() {
            acc.add((k as f64).powf(-spec.exponent()) / norm);
            cumulative.push(acc.total());
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Self {
            cumulative,
            log_norm: norm.ln(),
            exponent: spec.exponent(),
            n_elems: spec.n_elems(),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> u64 {
        let u: f64 = rng.random();
        self.cumulative.partition_point(|&c| c <= u) as u64 + 1
    }

    fn log_pmf(&self, value: u64) -> f64 {
        if value == 0 || value > self.n_elems {
            f64::NEG_INFINITY
        } else {
            -self.exponent * (value as f64).ln() - self.log_norm
        }
    }
}

/// Monte-Carlo estimate of the optimal distinguishing accuracy between two
/// finite Zipf distributions from `n` samples per trial.
///
/// Each trial draws the hidden bit uniformly, samples `n` values from the
/// chosen distribution and decides with the exact log-likelihood ratio; a
/// sample outside one support forces the other hypothesis, and an exact tie
/// decides 0. Trials derive independent substreams from `(seed, trial)`, so
/// the result is bit-identical for any worker partitioning.
pub fn mc_optimal_accuracy_zipf(
    spec0: ZipfSpec,
    spec1: ZipfSpec,
    n: u32,
    trials: u64,
    seed: u64,
) -> McEstimate {
    assert!(n >= 1 && trials >= 1);
    let table0 = ZipfTable::new(spec0);
    let table1 = ZipfTable::new(spec1);

    let correct: u64 = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(&[seed, trial]));
            let b = rng.random::<u64>() & 1 == 1;
            let source = if b { &table1 } else { &table0 };
            let mut llr = 0.0f64;
            for _ in 0..n {
                let x = source.sample(&mut rng);
                llr += table0.log_pmf(x) - table1.log_pmf(x);
                if llr.is_nan() {
                    unreachable!("a drawn value lies outside both supports");
                }
            }
            let decide_one = llr < 0.0;
            u64::from(decide_one == b)
        })
        .sum();

    let mean = correct as f64 / trials as f64;
    McEstimate {
        mean,
        std_error: (mean * (1.0 - mean) / trials as f64).sqrt(),
        trials,
        seed,
    }
}

/// Empirical accuracy of a batch of binary predictions, with the per-class
/// correct rates needed for the advantage computation. A class absent from
/// `truths` has no rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackAccuracy {
    pub accuracy: f64,
    pub correct_rate_class0: Option<f64>,
    pub correct_rate_class1: Option<f64>,
}

pub fn mc_attack_accuracy(
    predictions: &[bool],
    truths: &[bool],
) -> Result<AttackAccuracy, OracleError> {
    if predictions.is_empty() || predictions.len() != truths.len() {
        return Err(OracleError::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    let mut correct = [0usize; 2];
    let mut total = [0usize; 2];
    for (&p, &t) in predictions.iter().zip(truths) {
        let class = usize::from(t);
        total[class] += 1;
        correct[class] += usize::from(p == t);
    }
    let rate = |class: usize| {
        (total[class] > 0).then(|| correct[class] as f64 / total[class] as f64)
    };
    Ok(AttackAccuracy {
        accuracy: (correct[0] + correct[1]) as f64 / predictions.len() as f64,
        correct_rate_class0: rate(0),
        correct_rate_class1: rate(1),
    })
}

impl AttackAccuracy {
    /// Adversary advantage `|Pr[b_hat=1 | b=1] - Pr[b_hat=1 | b=0]|`, defined
    /// only when both classes were observed.
    pub fn advantage(&self) -> Option<f64> {
        match (self.correct_rate_class1, self.correct_rate_class0) {
            (Some(c1), Some(c0)) => Some(crate::leakage::advantage(c1, 1.0 - c0)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leakage::{binary_accuracy_bound, zipf_accuracy_bound};

    fn pair(a0: f64, a1: f64) -> RatioPair {
        RatioPair::new(a0, a1).unwrap()
    }

    #[test]
    fn exact_accuracy_examples() {
        for alpha in [0.0, 0.3, 1.0] {
            for n in [1, 5, 20] {
                assert!((exact_optimal_accuracy(pair(alpha, alpha), n).unwrap() - 0.5).abs() < 1e-12);
            }
        }
        assert_eq!(exact_optimal_accuracy(pair(0.0, 1.0), 1).unwrap(), 1.0);
        assert!((exact_optimal_accuracy(pair(0.5, 1.0), 1).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(
            exact_optimal_accuracy(pair(0.1, 0.2), 65),
            Err(OracleError::TooLarge(65))
        );
    }

    #[test]
    fn exact_accuracy_symmetric_and_monotone() {
        for &(a0, a1) in &[(0.2, 0.7), (0.05, 0.1), (0.4, 0.95)] {
            let mut prev = 0.5;
            for n in 1..=30 {
                let acc = exact_optimal_accuracy(pair(a0, a1), n).unwrap();
                let swapped = exact_optimal_accuracy(pair(a1, a0), n).unwrap();
                assert!((acc - swapped).abs() < 1e-15);
                assert!(acc >= prev - 1e-12, "n={n}: {acc} < {prev}");
                prev = acc;
            }
        }
    }

    #[test]
    fn exact_accuracy_dominated_by_bound() {
        for i in 0..=20u32 {
            for j in 0..=20u32 {
                let p = pair(i as f64 / 20.0, j as f64 / 20.0);
                for n in 1..=10u32 {
                    let exact = exact_optimal_accuracy(p, n).unwrap();
                    let bound = binary_accuracy_bound(p, n);
                    assert!(
                        exact <= bound + 1e-12,
                        "({}, {}) n={n}: {exact} > {bound}",
                        p.alpha0(),
                        p.alpha1()
                    );
                }
            }
        }
    }

    #[test]
    fn regression_mse_examples() {
        assert!((exact_regression_mse(0.5, 2).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(exact_regression_mse(0.0, 10).unwrap(), 0.0);
        assert!((exact_regression_mse(0.3, 7).unwrap() - 0.03).abs() < 1e-14);
        assert_eq!(
            exact_regression_mse(0.3, 100),
            Err(OracleError::TooLarge(100))
        );
    }

    #[test]
    fn regression_mse_identity() {
        for i in 1..=19 {
            let alpha = i as f64 / 20.0;
            for n in 1..=MAX_ENUM_N {
                let mse = exact_regression_mse(alpha, n).unwrap();
                let closed = alpha * (1.0 - alpha) / n as f64;
                assert!(
                    (mse - closed).abs() < 1e-12,
                    "alpha={alpha}, n={n}: {mse} vs {closed}"
                );
            }
        }
    }

    #[test]
    fn zipf_mc_no_signal() {
        let spec = ZipfSpec::new(20, 1.1).unwrap();
        let est = mc_optimal_accuracy_zipf(spec, spec, 3, 10_000, 11);
        assert!((est.mean - 0.5).abs() <= 3.0 * est.std_error.max(1e-9));
    }

    #[test]
    fn zipf_mc_matches_single_sample_enumeration() {
        let spec0 = ZipfSpec::new(5, 1.0).unwrap();
        let spec1 = ZipfSpec::new(10, 1.0).unwrap();
        // Independent enumeration of the single-sample Bayes accuracy.
        let h0 = crate::leakage::harmonic(5, 1.0);
        let h1 = crate::leakage::harmonic(10, 1.0);
        let mut bayes = 0.0;
        for k in 1..=10u64 {
            let p0 = if k <= 5 {
                (k as f64).powf(-1.0) / h0
            } else {
                0.0
            };
            let p1 = (k as f64).powf(-1.0) / h1;
            bayes += p0.max(p1);
        }
        bayes *= 0.5;
        let est = mc_optimal_accuracy_zipf(spec0, spec1, 1, 100_000, 7);
        assert!(
            (est.mean - bayes).abs() <= 3.0 * est.std_error,
            "mc {} vs exact {bayes} (se {})",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn zipf_mc_dominated_by_bound() {
        let spec0 = ZipfSpec::new(10, 2.0).unwrap();
        let spec1 = ZipfSpec::new(10, 1.0).unwrap();
        let bound = zipf_accuracy_bound(spec0, spec1, 4).unwrap();
        let est = mc_optimal_accuracy_zipf(spec0, spec1, 4, 100_000, 13);
        assert!(est.mean <= bound + 3.0 * est.std_error);
    }

    #[test]
    fn zipf_mc_deterministic() {
        let spec0 = ZipfSpec::new(8, 1.5).unwrap();
        let spec1 = ZipfSpec::new(12, 1.0).unwrap();
        let a = mc_optimal_accuracy_zipf(spec0, spec1, 3, 5_000, 99);
        let b = mc_optimal_accuracy_zipf(spec0, spec1, 3, 5_000, 99);
        assert_eq!(a, b);
    }

    #[test]
    fn attack_accuracy_examples() {
        let acc = |p: &[u8], t: &[u8]| {
            let p: Vec<bool> = p.iter().map(|&x| x == 1).collect();
            let t: Vec<bool> = t.iter().map(|&x| x == 1).collect();
            mc_attack_accuracy(&p, &t)
        };
        assert_eq!(acc(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap().accuracy, 1.0);
        assert_eq!(acc(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap().accuracy, 0.5);
        let r = acc(&[1, 1, 0], &[0, 1, 0]).unwrap();
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.correct_rate_class0, Some(0.5));
        assert_eq!(r.correct_rate_class1, Some(1.0));
        assert!(matches!(
            acc(&[1], &[1, 0]),
            Err(OracleError::LengthMismatch { .. })
        ));
        assert!(acc(&[], &[]).is_err());
    }

    #[test]
    fn attack_advantage_from_rates() {
        let perfect = AttackAccuracy {
            accuracy: 1.0,
            correct_rate_class0: Some(1.0),
            correct_rate_class1: Some(1.0),
        };
        assert_eq!(perfect.advantage(), Some(1.0));
        let chance = AttackAccuracy {
            accuracy: 0.5,
            correct_rate_class0: Some(0.5),
            correct_rate_class1: Some(0.5),
        };
        assert_eq!(chance.advantage(), Some(0.0));
    }
}
