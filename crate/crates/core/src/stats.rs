//! Shape-bias, correlation and dependent-correlation statistics.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("{shape} shape + {texture} texture decisions exceed {total} trials")]
    BiasCounts { shape: u64, texture: u64, total: u64 },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("a series has zero variance")]
    ZeroVariance,
    #[error("non-finite input")]
    NonFinite,
    #[error("correlation {0} outside [-1, 1]")]
    CorrelationRange(f64),
    #[error("correlation matrix is not positive definite (|R| = {0})")]
    NotPositiveDefinite(f64),
}

/// Trial counts from a cue-conflict shape-vs-texture evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "camelCase")
)]
pub struct BiasCounts {
    pub shape_correct: u64,
    pub texture_correct: u64,
    pub total: u64,
}

/// Accuracy-corrected shape bias `√(S/(S+T))·√(S/N)`; zero when `S + T = 0`.
pub fn corrected_shape_bias(counts: BiasCounts) -> Result<f64, StatsError> {
    let BiasCounts {
        shape_correct: s,
        texture_correct: t,
        total: n,
    } = counts;
    if s.checked_add(t).is_none_or(|st| st > n) {
        return Err(StatsError::BiasCounts {
            shape: s,
            texture: t,
            total: n,
        });
    }
    if s == 0 {
        return Ok(0.0);
    }
    let (s, t, n) = (s as f64, t as f64, n as f64);
    Ok(libm::sqrt(s / (s + t)) * libm::sqrt(s / n))
}

/// Sample Pearson correlation with two-pass mean-centred sums.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewSamples {
            needed: 3,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Two correlations with a shared criterion: `r12 = r(A, C)`,
/// `r13 = r(B, C)`, `r23 = r(A, B)` over `n` samples.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DependentCorrelations {
    pub r12: f64,
    pub r13: f64,
    pub r23: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WilliamsResult {
    pub t: f64,
    /// One-tailed upper tail probability `P(T ≥ t)`.
    pub p: f64,
    pub df: usize,
}

/// Williams's t for comparing `r12` and `r13`, with `n − 3` degrees of freedom:
///
/// `t = (r12 − r13)·√( (n−1)(1+r23) / (2·((n−1)/(n−3))·|R| + r̄²(1−r23)³) )`
///
/// where `|R| = 1 − r12² − r13² − r23² + 2·r12·r13·r23` and `r̄ = (r12 + r13)/2`.
pub fn williams_test(c: DependentCorrelations) -> Result<WilliamsResult, StatsError> {
    if c.n < 4 {
        return Err(StatsError::TooFewSamples { needed: 4, got: c.n });
    }
    for r in [c.r12, c.r13, c.r23] {
        if !r.is_finite() {
            return Err(StatsError::NonFinite);
        }
        if !(-1.0..=1.0).contains(&r) {
            return Err(StatsError::CorrelationRange(r));
        }
    }
    let det = 1.0 - (c.r12 * c.r12 + c.r13 * c.r13) - c.r23 * c.r23 + 2.0 * (c.r12 * c.r13) * c.r23;
    if det <= 0.0 {
        return Err(StatsError::NotPositiveDefinite(det));
    }
    let n = c.n as f64;
    let r_bar = 0.5 * (c.r12 + c.r13);
    let one_minus = 1.0 - c.r23;
    let denom = 2.0 * ((n - 1.0) / (n - 3.0)) * det + r_bar * r_bar * one_minus * one_minus * one_minus;
    let t = (c.r12 - c.r13) * libm::sqrt((n - 1.0) * (1.0 + c.r23) / denom);
    let df = c.n - 3;
    Ok(WilliamsResult {
        t,
        p: student_t_upper_tail(t, df as f64),
        df,
    })
}

/// `P(T ≥ t)` for Student's t with `df` degrees of freedom.
pub fn student_t_upper_tail(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 0.5;
    }
    let x = df / (df + t * t);
    let tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x);
    if t > 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

const BETA_EPS: f64 = 1e-12;
const BETA_MAX_ITER: usize = 500;

/// `I_x(a, b)` via the Lentz continued fraction, using the symmetry
/// `I_x(a, b) = 1 − I_{1−x}(b, a)` where that converges faster.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let clamp = |v: f64| if libm::fabs(v) < TINY { TINY } else { v };
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / clamp(1.0 + even * d);
        c = clamp(1.0 + even / c);
        h *= d * c;
        let odd = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / clamp(1.0 + odd * d);
        c = clamp(1.0 + odd / c);
        let delta = d * c;
        h *= delta;
        if libm::fabs(delta - 1.0) < BETA_EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn counts(s: u64, t: u64, n: u64) -> BiasCounts {
        BiasCounts {
            shape_correct: s,
            texture_correct: t,
            total: n,
        }
    }

    #[test]
    fn bias_examples() {
        assert_eq!(corrected_shape_bias(counts(1200, 0, 1200)).unwrap(), 1.0);
        assert_eq!(corrected_shape_bias(counts(0, 40, 1200)).unwrap(), 0.0);
        assert_eq!(corrected_shape_bias(counts(0, 0, 1200)).unwrap(), 0.0);
        assert_abs_diff_eq!(
            corrected_shape_bias(counts(600, 0, 1200)).unwrap(),
            0.5_f64.sqrt(),
            epsilon = 1e-15
        );
        assert!(matches!(
            corrected_shape_bias(counts(700, 600, 1200)),
            Err(StatsError::BiasCounts { .. })
        ));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(pearson(&x, &x.map(|v| 2.0 * v + 1.0)).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pearson(&x, &x.map(|v| -v)).unwrap(), -1.0, epsilon = 1e-15);
        // centred sums: sxy = 5.5, sxx = 5, syy = 8.75
        assert_abs_diff_eq!(
            pearson(&x, &[1.0, 3.0, 2.0, 5.0]).unwrap(),
            5.5 / 43.75_f64.sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(pearson(&x, &[1.0; 4]), Err(StatsError::ZeroVariance));
        assert_eq!(
            pearson(&x[..2], &x[..2]),
            Err(StatsError::TooFewSamples { needed: 3, got: 2 })
        );
        assert_eq!(pearson(&x, &x[..3]), Err(StatsError::LengthMismatch(4, 3)));
    }

    fn triple(r12: f64, r13: f64) -> DependentCorrelations {
        DependentCorrelations {
            r12,
            r13,
            r23: 0.64,
            n: 86,
        }
    }

    #[test]
    fn williams_published_rows() {
        let noise = williams_test(triple(0.81, 0.62)).unwrap();
        assert!((noise.t - 3.4116).abs() <= 0.3, "{noise:?}");
        assert!(noise.p <= 0.001);
        assert_eq!(noise.df, 83);
        let fg = williams_test(triple(0.76, 0.32)).unwrap();
        assert!((fg.t - 7.618).abs() <= 0.3, "{fg:?}");
        assert!(fg.p < 0.0001);
        let phase = williams_test(triple(0.73, 0.52)).unwrap();
        assert!((phase.t - 3.39).abs() <= 0.3, "{phase:?}");
    }

    #[test]
    fn williams_equal_correlations() {
        let r = williams_test(triple(0.5, 0.5)).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 0.5);
    }

    #[test]
    fn williams_rejects_bad_triples() {
        assert!(matches!(
            williams_test(DependentCorrelations {
                r12: 0.9,
                r13: -0.9,
                r23: 0.9,
                n: 50
            }),
            Err(StatsError::NotPositiveDefinite(_))
        ));
        assert_eq!(
            williams_test(DependentCorrelations {
                r12: 0.2,
                r13: 0.1,
                r23: 0.3,
                n: 3
            }),
            Err(StatsError::TooFewSamples { needed: 4, got: 3 })
        );
        assert_eq!(
            williams_test(DependentCorrelations {
                r12: 1.2,
                r13: 0.1,
                r23: 0.3,
                n: 30
            }),
            Err(StatsError::CorrelationRange(1.2))
        );
    }

    #[test]
    fn t_tail_matches_published_critical_values() {
        // one-tailed critical values from standard t tables
        for (df, p, t) in [(83.0, 0.05, 1.663), (10.0, 0.025, 2.228), (30.0, 0.01, 2.457)] {
            let got = student_t_upper_tail(t, df);
            assert!((got - p).abs() < 0.001, "df {df}: {got}");
        }
    }

    #[test]
    fn t_tail_matches_statrs() {
        for df in [1.0, 2.5, 5.0, 30.0, 83.0, 400.0] {
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            for t in [-6.0, -2.0, -0.3, 0.0, 0.4, 1.0, 1.663, 3.4, 7.6, 12.0] {
                let want = 1.0 - dist.cdf(t);
                let got = student_t_upper_tail(t, df);
                assert!(
                    (got - want).abs() < 1e-10 + 1e-8 * want,
                    "df {df} t {t}: {got} vs {want}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn bias_monotone(s in 0u64..500, t in 0u64..500, extra in 0u64..500) {
            let n = s + t + extra + 1;
            let base = corrected_shape_bias(counts(s, t, n)).unwrap();
            if s + t < n {
                prop_assert!(corrected_shape_bias(counts(s + 1, t, n)).unwrap() >= base);
                prop_assert!(corrected_shape_bias(counts(s, t + 1, n)).unwrap() <= base);
            }
        }

        #[test]
        fn williams_antisymmetric(r12 in -0.6f64..0.6, r13 in -0.6f64..0.6, r23 in -0.5f64..0.5, n in 10usize..200) {
            prop_assume!(1.0 - r12 * r12 - r13 * r13 - r23 * r23 + 2.0 * r12 * r13 * r23 > 0.05);
            let a = williams_test(DependentCorrelations { r12, r13, r23, n }).unwrap();
            let b = williams_test(DependentCorrelations { r12: r13, r13: r12, r23, n }).unwrap();
            prop_assert_eq!(a.t, -b.t);
        }

        #[test]
        fn t_tail_decreasing(t in -4.0f64..10.0, dt in 0.01f64..2.0, df in 1.0f64..200.0) {
            prop_assert!(student_t_upper_tail(t + dt, df) < student_t_upper_tail(t, df));
        }
    }
}
