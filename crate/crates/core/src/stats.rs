//! Two-group ANOVA, F-distribution tail probabilities and the small set of
//! summary statistics used for evaluation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("each group needs at least {needed} observations, got {got}")]
    GroupTooSmall { needed: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("input has zero variance; correlation is undefined")]
    ZeroVariance,
    #[error("invalid degrees of freedom ({0}, {1})")]
    InvalidDof(f64, f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

const BETA_MAX_ITER: usize = 200;
const BETA_EPS: f64 = 1e-14;
const TINY: f64 = 1e-300;

/// Result of a two-group one-way ANOVA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FTestResult {
    /// May be `+inf` when both groups have zero spread but different means.
    #[serde(with = "crate::io::json_f64")]
    pub f_value: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p_raw: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// One-way ANOVA between two groups, df = (1, n_a + n_b − 2).
pub fn anova_f_two_group(a: &[f64], b: &[f64]) -> Result<FTestResult> {
    for g in [a, b] {
        if g.len() < 2 {
            return Err(StatsError::GroupTooSmall {
                needed: 2,
                got: g.len(),
            });
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let grand = (na * ma + nb * mb) / (na + nb);
    let ss_between = na * (ma - grand).powi(2) + nb * (mb - grand).powi(2);
    let ss_within: f64 = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>()
        + b.iter().map(|v| (v - mb).powi(2)).sum::<f64>();
    let df_within = a.len() + b.len() - 2;
    let ms_within = ss_within / df_within as f64;

    let (f_value, p_raw) = if ms_within == 0.0 {
        if ma == mb {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = ss_between / ms_within;
        (f, f_sf(f, 1.0, df_within as f64)?)
    };
    Ok(FTestResult {
        f_value,
        df_between: 1,
        df_within,
        p_raw,
    })
}

/// Upper tail P(F > f) of the F distribution with (df1, df2) degrees of freedom.
pub fn f_sf(f: f64, df1: f64, df2: f64) -> Result<f64> {
    if !(df1 >= 1.0 && df2 >= 1.0) || !df1.is_finite() || !df2.is_finite() {
        return Err(StatsError::InvalidDof(df1, df2));
    }
    if f.is_nan() || f < 0.0 {
        return Err(StatsError::InvalidArgument(format!("F statistic {f}")));
    }
    if f == 0.0 {
        return Ok(1.0);
    }
    if f.is_infinite() {
        return Ok(0.0);
    }
    // P(F > f) = I_x(df2/2, df1/2) with x = df2 / (df2 + df1·f)
    let x = df2 / (df2 + df1 * f);
    Ok(regularized_incomplete_beta(x, df2 / 2.0, df1 / 2.0))
}

/// Regularized incomplete beta I_x(a, b), Lentz continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_EPS {
            break;
        }
    }
    h
}

/// ln Γ(x) for x > 0 (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    #[allow(clippy::excessive_precision)]
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// min(1, n·p).
pub fn bonferroni(p: f64, n_tests: usize) -> f64 {
    (p * n_tests.max(1) as f64).min(1.0)
}

/// Sample Pearson correlation. Constant inputs yield [`StatsError::ZeroVariance`].
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::GroupTooSmall {
            needed: 2,
            got: x.len(),
        });
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean absolute difference.
pub fn mae(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(StatsError::Empty);
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64)
}

/// Mean and sample standard deviation (n − 1); std is 0 for a single value.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(x);
    if x.len() < 2 {
        return (m, 0.0);
    }
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    (m, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anova_identical_groups() {
        let r = anova_f_two_group(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(r.f_value, 0.0);
        assert_eq!(r.p_raw, 1.0);
    }

    #[test]
    fn anova_hand_example() {
        let r = anova_f_two_group(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.f_value, 13.5);
        assert_eq!((r.df_between, r.df_within), (1, 4));
        assert!((r.p_raw - 0.0213).abs() < 1e-3);
    }

    #[test]
    fn anova_degenerate_cases() {
        let r = anova_f_two_group(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((r.f_value, r.p_raw), (0.0, 1.0));
        let r = anova_f_two_group(&[1.0, 1.0], &[3.0, 3.0]).unwrap();
        assert_eq!((r.f_value, r.p_raw), (f64::INFINITY, 0.0));
        assert!(anova_f_two_group(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn f_sf_limits() {
        assert_eq!(f_sf(0.0, 1.0, 4.0).unwrap(), 1.0);
        assert!(f_sf(1e12, 1.0, 4.0).unwrap() < 1e-6);
        assert!(f_sf(1.0, 0.0, 4.0).is_err());
        assert!(f_sf(-1.0, 1.0, 4.0).is_err());
    }

    #[test]
    fn f_sf_monotone_on_grid() {
        for &(d1, d2) in &[(1.0, 1.0), (1.0, 4.0), (1.0, 548.0), (3.0, 7.0), (10.0, 30.0)] {
            let mut prev = 1.0;
            for i in 0..400 {
                let f = i as f64 * 0.25;
                let p = f_sf(f, d1, d2).unwrap();
                assert!(p <= prev + 1e-15, "df=({d1},{d2}) f={f}");
                assert!((0.0..=1.0).contains(&p));
                prev = p;
            }
        }
    }

    #[test]
    fn f_sf_with_one_numerator_df_matches_closed_forms() {
        // df2 = 1: P(|t| > s) for Cauchy = 1 − (2/π)·atan(s)
        for &s in &[0.1f64, 1.0, 3.0, 25.0] {
            let expected = 1.0 - 2.0 / std::f64::consts::PI * f64::atan(s);
            assert!((f_sf(s * s, 1.0, 1.0).unwrap() - expected).abs() < 1e-12);
        }
        // df2 = 2: P(|t| > s) = 1 − s/√(2 + s²)
        for &s in &[0.1f64, 1.0, 3.0, 25.0] {
            let expected = 1.0 - s / (2.0 + s * s).sqrt();
            assert!((f_sf(s * s, 1.0, 2.0).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn bonferroni_examples() {
        assert!((bonferroni(0.0005, 68) - 0.034).abs() < 1e-15);
        assert_eq!(bonferroni(0.1, 68), 1.0);
        assert_eq!(bonferroni(0.037, 1), 0.037);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let yn: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &y2).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &yn).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(pearson(&x, &[5.0; 4]), Err(StatsError::ZeroVariance));
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 0.0], &[1.0, -3.0]).unwrap(), 2.0);
        assert_eq!(mae(&[4.5], &[1.0]).unwrap(), 3.5);
        assert!(mae(&[1.0], &[]).is_err());
        assert_eq!(mae(&[], &[]), Err(StatsError::Empty));
    }
}
