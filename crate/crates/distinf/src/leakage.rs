//! Closed-form leakage bounds and the `n_leaked` metrics.
//!
//! The quantities here relate an attack's observed distinguishing accuracy
//! (or regression error) to the number of raw samples from the training
//! distribution that an optimal statistical test would need to match it.
//! Everything is a pure function; all logarithms are natural.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::KahanSum;

#[derive(Debug, Error, PartialEq)]
pub enum LeakageError {
    #[error("ratio {0} is not a finite value in [0, 1]")]
    InvalidRatio(f64),
    #[error("Zipf spec requires n_elems >= 1 and a finite exponent (got n={n_elems}, s={exponent})")]
    InvalidZipf { n_elems: u64, exponent: f64 },
    #[error("alpha0 and alpha1 must differ")]
    EqualRatios,
    #[error("omega {0} outside [0.5, 1]; flip the predictor before computing leakage")]
    OmegaOutOfRange(f64),
    #[error("spec0.n_elems must not exceed spec1.n_elems")]
    UnorderedSpecs,
    #[error("specs are indistinguishable under this bound (zero denominator)")]
    ZeroDenominator,
    #[error("alpha {0} has zero variance; regression leakage undefined")]
    DegenerateAlpha(f64),
    #[error("squared error must be positive (got {0})")]
    NonpositiveError(f64),
}

/// A pair of property proportions (alpha0 for G0, alpha1 for G1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioPair {
    alpha0: f64,
    alpha1: f64,
}

impl RatioPair {
    pub fn new(alpha0: f64, alpha1: f64) -> Result<Self, LeakageError> {
        for a in [alpha0, alpha1] {
            if !a.is_finite() || !(0.0..=1.0).contains(&a) {
                return Err(LeakageError::InvalidRatio(a));
            }
        }
        Ok(Self { alpha0, alpha1 })
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }

    /// The two likelihood ratios the bounds are built from:
    /// `min/max` and `(1-max)/(1-min)`. A 0/0 ratio (identical degenerate
    /// proportions) is defined as 1, the continuity-consistent choice.
    pub fn ratio_branches(&self) -> (f64, f64) {
        let lo = self.alpha0.min(self.alpha1);
        let hi = self.alpha0.max(self.alpha1);
        let r_low = safe_ratio(lo, hi);
        let r_high = safe_ratio(1.0 - hi, 1.0 - lo);
        (r_low, r_high)
    }
}

fn safe_ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 && den == 0.0 {
        1.0
    } else {
        num / den
    }
}

/// A finite Zipf distribution: pmf proportional to `k^(-s)` on `1..=n_elems`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZipfSpec {
    n_elems: u64,
    exponent: f64,
}

impl ZipfSpec {
    pub fn new(n_elems: u64, exponent: f64) -> Result<Self, LeakageError> {
        if n_elems < 1 || !exponent.is_finite() {
            return Err(LeakageError::InvalidZipf { n_elems, exponent });
        }
        Ok(Self { n_elems, exponent })
    }

    pub fn n_elems(&self) -> u64 {
        self.n_elems
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    pub fn normalizer(&self) -> f64 {
        harmonic(self.n_elems, self.exponent)
    }
}

/// Per-pair attack outcome: distinguishing accuracy, adversary advantage and
/// the matching `n_leaked` value (`+inf` is a first-class citizen and is
/// rendered as the literal string `"inf"` in JSON and CSV).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub accuracy: f64,
    pub advantage: f64,
    #[serde(with = "inf_f64")]
    pub n_leaked: f64,
}

/// Serde adapter that keeps `+inf` round-trippable through JSON.
pub mod inf_f64 {
    use serde::de::{self, Deserializer, Unexpected};
    use serde::ser::Serializer;
    use serde::Deserialize;

    pub fn serialize<S: Serializer>(v: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            ser.serialize_f64(*v)
        } else if *v > 0.0 {
            ser.serialize_str("inf")
        } else {
            ser.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(de::Error::invalid_value(
                    Unexpected::Str(other),
                    &"a float or \"inf\"",
                )),
            },
        }
    }
}

/// Generalized harmonic number `H(n, s) = sum_{k=1..n} k^(-s)`.
///
/// Direct compensated summation, smallest terms first, so oracle comparisons
/// stay exact; no asymptotic approximation.
pub fn harmonic(n: u64, s: f64) -> f64 {
    assert!(n >= 1, "harmonic requires n >= 1");
    let mut acc = KahanSum::new();
    for k in (1..=n).rev() {
        acc.add((k as f64).powf(-s));
    }
    acc.total()
}

/// Upper bound on the distinguishing accuracy between models trained on
/// datasets of size `n` drawn from the two proportional distributions.
pub fn binary_accuracy_bound(pair: RatioPair, n: u32) -> f64 {
    let (r_low, r_high) = pair.ratio_branches();
    let tv_low = (1.0 - r_low.powi(n as i32)).max(0.0).sqrt();
    let tv_high = (1.0 - r_high.powi(n as i32)).max(0.0).sqrt();
    0.5 + 0.5 * tv_low.min(tv_high)
}

/// Effective leaked-sample count for an attack with distinguishing accuracy
/// `omega` on the pair: `log(4w(1-w)) / log(max of the two ratios)`.
///
/// `omega = 0.5` gives 0, `omega = 1` gives `+inf`. When the ratio maximum is
/// 0 (the `{0, 1}` pair), the result is 0 for `omega < 1` and `+inf` at 1.
pub fn n_leaked_binary(pair: RatioPair, omega: f64) -> Result<f64, LeakageError> {
    if pair.alpha0 == pair.alpha1 {
        return Err(LeakageError::EqualRatios);
    }
    if !(0.5..=1.0).contains(&omega) {
        return Err(LeakageError::OmegaOutOfRange(omega));
    }
    let (r_low, r_high) = pair.ratio_branches();
    let r = r_low.max(r_high);
    if r == 0.0 {
        return Ok(if omega == 1.0 { f64::INFINITY } else { 0.0 });
    }
    // r < 1 because the ratios differ, so ln(r) < 0 and the quotient is >= 0.
    let value = (4.0 * omega * (1.0 - omega)).ln() / r.ln();
    Ok(if value == 0.0 { 0.0 } else { value })
}

/// Effective leaked-sample count for a regression attack with observed mean
/// squared error `omega`: `alpha(1-alpha)/omega`.
pub fn n_leaked_regression(alpha: f64, omega: f64) -> Result<f64, LeakageError> {
    if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
        return Err(LeakageError::InvalidRatio(alpha));
    }
    if alpha == 0.0 || alpha == 1.0 {
        return Err(LeakageError::DegenerateAlpha(alpha));
    }
    if !(omega > 0.0) {
        return Err(LeakageError::NonpositiveError(omega));
    }
    Ok(alpha * (1.0 - alpha) / omega)
}

/// Population mean of a finite Zipf distribution: `H(N, s-1) / H(N, s)`.
pub fn zipf_mean(spec: ZipfSpec) -> f64 {
    harmonic(spec.n_elems, spec.exponent - 1.0) / spec.normalizer()
}

fn zipf_log_base(spec0: ZipfSpec, spec1: ZipfSpec) -> Result<f64, LeakageError> {
    if spec0.n_elems > spec1.n_elems {
        return Err(LeakageError::UnorderedSpecs);
    }
    let mut log_base = (harmonic(spec0.n_elems, spec0.exponent)
        / harmonic(spec1.n_elems, spec1.exponent))
    .ln();
    if spec1.exponent > spec0.exponent {
        log_base += (spec0.exponent - spec1.exponent) * (spec0.n_elems as f64).ln();
    }
    Ok(log_base)
}

/// Upper bound on the distinguishing accuracy between two finite Zipf
/// distributions with `spec0.n_elems <= spec1.n_elems`, from `n` samples.
pub fn zipf_accuracy_bound(spec0: ZipfSpec, spec1: ZipfSpec, n: u32) -> Result<f64, LeakageError> {
    let base = zipf_log_base(spec0, spec1)?.exp();
    let tv = (1.0 - base.powi(n as i32)).max(0.0).sqrt();
    Ok(0.5 + 0.5 * tv)
}

/// Zipf analogue of [`n_leaked_binary`].
pub fn n_leaked_degree(
    spec0: ZipfSpec,
    spec1: ZipfSpec,
    omega: f64,
) -> Result<f64, LeakageError> {
    let log_base = zipf_log_base(spec0, spec1)?;
    if log_base == 0.0 {
        return Err(LeakageError::ZeroDenominator);
    }
    if !(0.5..=1.0).contains(&omega) {
        return Err(LeakageError::OmegaOutOfRange(omega));
    }
    if omega == 1.0 {
        return Ok(f64::INFINITY);
    }
    let value = (4.0 * omega * (1.0 - omega)).ln() / log_base;
    Ok(if value == 0.0 { 0.0 } else { value })
}

/// The two KL upper bounds `(D(G0 || G1), D(G1 || G0))` for a ratio pair:
/// `log(max/min)` and `log((1-min)/(1-max))`. Components with a zero
/// denominator come back as `+inf`.
pub fn kl_bounds_binary(pair: RatioPair) -> (f64, f64) {
    let lo = pair.alpha0.min(pair.alpha1);
    let hi = pair.alpha0.max(pair.alpha1);
    (safe_ratio(hi, lo).ln(), safe_ratio(1.0 - lo, 1.0 - hi).ln())
}

/// Total-variation bound from a KL divergence: `sqrt(1 - exp(-d))`.
pub fn tv_from_kl(d: f64) -> f64 {
    assert!(d >= 0.0, "KL divergence must be nonnegative");
    (-(-d).exp_m1()).sqrt()
}

/// Adversary advantage `|Pr[b_hat = b | b] - Pr[b_hat = b's value | not b]|`.
pub fn advantage(p_correct_given_b: f64, p_predict_b_given_not_b: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p_correct_given_b));
    debug_assert!((0.0..=1.0).contains(&p_predict_b_given_not_b));
    (p_correct_given_b - p_predict_b_given_not_b).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a0: f64, a1: f64) -> RatioPair {
        RatioPair::new(a0, a1).unwrap()
    }

    #[test]
    fn harmonic_direct_sums() {
        assert_eq!(harmonic(1, 2.7), 1.0);
        assert!((harmonic(3, 1.0) - 11.0 / 6.0).abs() < 1e-15);
        assert!((harmonic(2, 2.0) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn ratio_pair_rejects_bad_values() {
        assert!(RatioPair::new(-0.1, 0.5).is_err());
        assert!(RatioPair::new(0.1, 1.5).is_err());
        assert!(RatioPair::new(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn accuracy_bound_examples() {
        assert_eq!(binary_accuracy_bound(pair(0.3, 0.3), 10), 0.5);
        let b = binary_accuracy_bound(pair(0.5, 1.0), 1);
        assert!((b - (0.5 + 0.5 * 0.5f64.sqrt())).abs() < 1e-12);
        assert!((b - 0.853553).abs() < 1e-6);
        assert_eq!(binary_accuracy_bound(pair(0.0, 1.0), 1), 1.0);
    }

    #[test]
    fn accuracy_bound_symmetries() {
        for &(a0, a1) in &[(0.2, 0.7), (0.0, 0.4), (0.55, 0.95)] {
            for n in [1u32, 3, 17] {
                let b = binary_accuracy_bound(pair(a0, a1), n);
                assert_eq!(b, binary_accuracy_bound(pair(a1, a0), n));
                let c = binary_accuracy_bound(pair(1.0 - a0, 1.0 - a1), n);
                assert!((b - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn accuracy_bound_monotone_in_n() {
        let p = pair(0.3, 0.45);
        let mut prev = 0.5;
        for n in 1..=40 {
            let b = binary_accuracy_bound(p, n);
            assert!(b >= prev - 1e-12);
            assert!((0.5..=1.0).contains(&b));
            prev = b;
        }
    }

    #[test]
    fn n_leaked_binary_paper_example() {
        let v = n_leaked_binary(pair(0.5, 0.52), 0.95).unwrap();
        assert!((v - 42.34).abs() < 0.05);
        assert!((v - 0.19f64.ln() / (25.0f64 / 26.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn n_leaked_binary_edges() {
        assert_eq!(n_leaked_binary(pair(0.2, 0.7), 0.5).unwrap(), 0.0);
        let v = n_leaked_binary(pair(0.5, 1.0), 0.95).unwrap();
        assert!((v - 0.19f64.ln() / 0.5f64.ln()).abs() < 1e-12);
        assert!((v - 2.3958).abs() < 1e-4);
        assert_eq!(
            n_leaked_binary(pair(0.0, 1.0), 0.95).unwrap(),
            0.0,
            "disjoint supports leak nothing at omega < 1"
        );
        assert_eq!(
            n_leaked_binary(pair(0.0, 1.0), 1.0).unwrap(),
            f64::INFINITY
        );
        assert_eq!(
            n_leaked_binary(pair(0.3, 0.3), 0.9),
            Err(LeakageError::EqualRatios)
        );
        assert_eq!(
            n_leaked_binary(pair(0.3, 0.6), 0.4),
            Err(LeakageError::OmegaOutOfRange(0.4))
        );
        assert_eq!(
            n_leaked_binary(pair(0.3, 0.6), 1.1),
            Err(LeakageError::OmegaOutOfRange(1.1))
        );
    }

    #[test]
    fn n_leaked_binary_monotone_in_omega() {
        let p = pair(0.4, 0.6);
        let mut prev = -1.0;
        for i in 0..=50 {
            let omega = 0.5 + 0.5 * i as f64 / 50.0;
            let v = n_leaked_binary(p, omega).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        assert_eq!(prev, f64::INFINITY);
    }

    #[test]
    fn round_trip_binary_bound() {
        // n_leaked of the n-sample bound recovers n across a ratio grid.
        for i in 0..=10u32 {
            for j in 0..=10u32 {
                if i == j {
                    continue;
                }
                let p = pair(i as f64 / 10.0, j as f64 / 10.0);
                for n in 1..=30u32 {
                    let omega = binary_accuracy_bound(p, n);
                    let back = n_leaked_binary(p, omega).unwrap();
                    if back.is_finite() {
                        assert!(
                            (back - n as f64).abs() < 1e-9,
                            "pair ({}, {}), n={n}: got {back}",
                            p.alpha0,
                            p.alpha1
                        );
                    } else {
                        // Only the disjoint pair saturates the bound at 1.
                        assert_eq!(omega, 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn n_leaked_regression_examples() {
        assert_eq!(n_leaked_regression(0.5, 0.25).unwrap(), 1.0);
        assert_eq!(n_leaked_regression(0.5, 0.0025).unwrap(), 100.0);
        assert!((n_leaked_regression(0.2, 0.001).unwrap() - 160.0).abs() < 1e-9);
        assert_eq!(
            n_leaked_regression(0.0, 0.1),
            Err(LeakageError::DegenerateAlpha(0.0))
        );
        assert_eq!(
            n_leaked_regression(0.5, 0.0),
            Err(LeakageError::NonpositiveError(0.0))
        );
    }

    #[test]
    fn zipf_mean_examples() {
        assert_eq!(zipf_mean(ZipfSpec::new(1, 3.2).unwrap()), 1.0);
        assert!((zipf_mean(ZipfSpec::new(3, 0.0).unwrap()) - 2.0).abs() < 1e-15);
        assert!((zipf_mean(ZipfSpec::new(2, 2.0).unwrap()) - 1.2).abs() < 1e-15);
    }

    #[test]
    fn zipf_mean_range_and_monotonicity() {
        for n in [2u64, 5, 50, 500] {
            let mut prev = f64::INFINITY;
            for i in 0..20 {
                let s = -2.0 + 0.35 * i as f64;
                let m = zipf_mean(ZipfSpec::new(n, s).unwrap());
                assert!(m >= 1.0 && m <= n as f64);
                assert!(m < prev, "mean must strictly decrease in s for N >= 2");
                prev = m;
            }
        }
    }

    #[test]
    fn zipf_bound_examples() {
        let same = ZipfSpec::new(50, 1.0).unwrap();
        assert_eq!(zipf_accuracy_bound(same, same, 5).unwrap(), 0.5);

        let s0 = ZipfSpec::new(10, 2.0).unwrap();
        let s1 = ZipfSpec::new(10, 1.0).unwrap();
        let b = zipf_accuracy_bound(s0, s1, 1).unwrap();
        let h2 = harmonic(10, 2.0);
        let h1 = harmonic(10, 1.0);
        assert!((h2 - 1.5497677311665408).abs() < 1e-12);
        assert!((h1 - 2.9289682539682538).abs() < 1e-12);
        assert!((b - (0.5 + 0.5 * (1.0 - h2 / h1).sqrt())).abs() < 1e-12);
        assert!((b - 0.84311).abs() < 1e-4);

        // Swapped exponents take the indicator branch; for equal N the two
        // orderings give different (still valid) upper bounds.
        let b_swapped = zipf_accuracy_bound(s1, s0, 1).unwrap();
        let base = h1 / h2 * 0.1;
        assert!((b_swapped - (0.5 + 0.5 * (1.0 - base).sqrt())).abs() < 1e-12);
        assert!((b_swapped - 0.950280).abs() < 1e-5);

        assert_eq!(
            zipf_accuracy_bound(ZipfSpec::new(11, 1.0).unwrap(), s0, 1),
            Err(LeakageError::UnorderedSpecs)
        );
    }

    #[test]
    fn n_leaked_degree_round_trip() {
        let s0 = ZipfSpec::new(10, 2.0).unwrap();
        let s1 = ZipfSpec::new(10, 1.0).unwrap();
        assert_eq!(n_leaked_degree(s0, s1, 0.5).unwrap(), 0.0);
        let omega = zipf_accuracy_bound(s0, s1, 1).unwrap();
        assert!((n_leaked_degree(s0, s1, omega).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(n_leaked_degree(s0, s1, 1.0).unwrap(), f64::INFINITY);

        for n in 1..=25u32 {
            let omega = zipf_accuracy_bound(s0, s1, n).unwrap();
            let back = n_leaked_degree(s0, s1, omega).unwrap();
            assert!((back - n as f64).abs() < 1e-9);
        }

        let same = ZipfSpec::new(7, 1.3).unwrap();
        assert_eq!(
            n_leaked_degree(same, same, 0.7),
            Err(LeakageError::ZeroDenominator)
        );
    }

    #[test]
    fn kl_bound_examples() {
        assert_eq!(kl_bounds_binary(pair(0.5, 0.5)), (0.0, 0.0));
        let (d01, d10) = kl_bounds_binary(pair(0.25, 0.5));
        assert!((d01 - 2.0f64.ln()).abs() < 1e-15);
        assert!((d10 - 1.5f64.ln()).abs() < 1e-15);
        let (d01, d10) = kl_bounds_binary(pair(0.0, 0.5));
        assert_eq!(d01, f64::INFINITY);
        assert!((d10 - 2.0f64.ln()).abs() < 1e-15);
        // Degenerate equal pairs are identical distributions, not infinities.
        assert_eq!(kl_bounds_binary(pair(0.0, 0.0)), (0.0, 0.0));
        assert_eq!(kl_bounds_binary(pair(1.0, 1.0)), (0.0, 0.0));
    }

    #[test]
    fn tv_from_kl_examples() {
        assert_eq!(tv_from_kl(0.0), 0.0);
        assert_eq!(tv_from_kl(f64::INFINITY), 1.0);
        assert!((tv_from_kl(2.0f64.ln()) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bound_matches_kl_tv_chain() {
        // The lemma bound is exactly 0.5 + tv_from_kl(n * min KL)/2.
        for i in 0..=10u32 {
            for j in 0..=10u32 {
                let p = pair(i as f64 / 10.0, j as f64 / 10.0);
                let (d01, d10) = kl_bounds_binary(p);
                let d = d01.min(d10);
                for n in [1u32, 2, 7, 19] {
                    let direct = binary_accuracy_bound(p, n);
                    let chained = 0.5 + 0.5 * tv_from_kl(n as f64 * d);
                    assert!(
                        direct <= chained + 1e-12,
                        "pair ({}, {}) n={n}",
                        p.alpha0,
                        p.alpha1
                    );
                    assert!((direct - chained).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantage(1.0, 0.0), 1.0);
        assert_eq!(advantage(0.5, 0.5), 0.0);
        assert!((advantage(0.8, 0.3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn report_serializes_inf_as_string() {
        let r = LeakageReport {
            accuracy: 1.0,
            advantage: 1.0,
            n_leaked: f64::INFINITY,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"inf\""));
        let back: LeakageReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.n_leaked, f64::INFINITY);

        let finite = LeakageReport {
            accuracy: 0.75,
            advantage: 0.5,
            n_leaked: 3.25,
        };
        let json = serde_json::to_string(&finite).unwrap();
        let back: LeakageReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, finite);
    }
}
