//! Paired significance testing for prediction-error series.
//!
//! `paired_test` runs a one-sided paired t-test on two aligned error
//! series (alternative: the first has lower mean error). `combine_pvalues`
//! reduces per-trajectory p-values with Fisher's method; the chi-square
//! survival function is evaluated in closed form since the statistic
//! always has even degrees of freedom.

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use super::ErrorSeries;
use crate::{Error, Result};

/// One-sided paired t-test over two aligned error series. Returns the
/// p-value for the alternative "a has lower mean error than b". Series
/// must describe the same trajectory and horizon with equal lengths of
/// at least 2. Zero-variance differences resolve exactly: all-zero gives
/// 0.5, a uniform nonzero sign gives 0 or 1.
pub fn paired_test(a: &ErrorSeries, b: &ErrorSeries) -> Result<f64> {
    if a.trajectory != b.trajectory || a.horizon != b.horizon {
        return Err(Error::Stats(format!(
            "paired test over mismatched series: {:?} at H={} vs {:?} at H={}",
            a.trajectory, a.horizon, b.trajectory, b.horizon
        )));
    }
    if a.errors.len() != b.errors.len() {
        return Err(Error::Stats(format!(
            "paired test needs equal lengths, got {} and {}",
            a.errors.len(),
            b.errors.len()
        )));
    }
    let n = a.errors.len();
    if n < 2 {
        return Err(Error::Stats(format!(
            "paired test needs at least 2 pairs, got {n}"
        )));
    }
    let diffs: Vec<f64> = a.errors.iter().zip(&b.errors).map(|(x, y)| x - y).collect();
    if let Some(d) = diffs.iter().find(|d| !d.is_finite()) {
        return Err(Error::Stats(format!("non-finite error difference {d}")));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        // Degenerate but well-defined: identical series are a coin flip,
        // a constant nonzero difference is conclusive.
        return Ok(if mean == 0.0 {
            0.5
        } else if mean < 0.0 {
            0.0
        } else {
            1.0
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Stats(format!("t-distribution setup failed: {e}")))?;
    Ok(dist.cdf(t))
}

/// Fisher's method: combines independent p-values into one via
/// -2 sum(ln p) ~ chi-square with 2k degrees of freedom. Inputs must lie
/// in [0, 1]; exact zeros are clamped to 1e-300 (with a warning) so the
/// statistic stays finite.
pub fn combine_pvalues(pvalues: &[f64]) -> Result<f64> {
    if pvalues.is_empty() {
        return Err(Error::Stats("no p-values to combine".into()));
    }
    let mut stat = 0.0;
    for &p in pvalues {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Stats(format!("p-value {p} outside [0, 1]")));
        }
        let p = if p < 1e-300 {
            log::warn!("clamping p-value {p} to 1e-300 for combination");
            1e-300
        } else {
            p
        };
        stat += -2.0 * p.ln();
    }
    Ok(chi_square_survival_even_df(pvalues.len(), stat))
}

/// Survival function of the chi-square distribution with 2k degrees of
/// freedom: Q(x) = e^(-x/2) * sum_{i<k} (x/2)^i / i!, evaluated in log
/// space so large statistics do not underflow term-by-term.
fn chi_square_survival_even_df(k: usize, x: f64) -> f64 {
    let half = x / 2.0;
    if half <= 0.0 {
        return 1.0;
    }
    let log_terms: Vec<f64> = (0..k)
        .map(|i| {
            if i == 0 {
                -half
            } else {
                -half + i as f64 * half.ln() - ln_gamma(i as f64 + 1.0)
            }
        })
        .collect();
    let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let sum: f64 = log_terms.iter().map(|l| (l - max).exp()).sum();
    (max + sum.ln()).exp().min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::TrajectoryClass;
    use approx::assert_relative_eq;

    fn series(id: &str, horizon: u64, errors: &[f64]) -> ErrorSeries {
        ErrorSeries {
            trajectory: id.into(),
            class: TrajectoryClass::Legal,
            horizon,
            errors: errors.to_vec(),
            degenerate_resets: 0,
        }
    }

    // Reference p-values computed independently with a standard
    // statistics library and frozen here.

    #[test]
    fn paired_test_five_point_reference() {
        let a = series("t", 75, &[12.1, 14.8, 9.6, 11.3, 16.2]);
        let b = series("t", 75, &[13.0, 15.9, 10.1, 12.7, 16.0]);
        let p = paired_test(&a, &b).unwrap();
        assert_relative_eq!(p, 0.027794941518501832, epsilon = 1e-12);
        // Swapping the sides mirrors the tail.
        let q = paired_test(&b, &a).unwrap();
        assert_relative_eq!(p + q, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn paired_test_twenty_point_reference() {
        let a = series(
            "t",
            75,
            &[
                7.507, 3.215, 2.287, 2.432, 4.974, 5.169, 7.752, 5.572, 6.242, 5.575, 6.234, 7.729,
                1.059, 1.745, 3.091, 5.595, 6.669, 7.105, 7.753, 6.066,
            ],
        );
        let b = series(
            "t",
            75,
            &[
                9.595, 4.79, 0.685, 2.623, 7.41, 5.287, 7.758, 6.697, 10.416, 5.052, 6.199, 8.466,
                1.992, 2.921, 3.692, 7.673, 6.484, 6.791, 5.746, 4.619,
            ],
        );
        let p = paired_test(&a, &b).unwrap();
        assert_relative_eq!(p, 0.05513475056031804, epsilon = 1e-12);
    }

    #[test]
    fn paired_test_degenerate_variants() {
        // Identical series: exactly 0.5.
        let a = series("t", 10, &[1.0, 2.0, 3.0]);
        assert_eq!(paired_test(&a, &a.clone()).unwrap(), 0.5);
        // Constant negative difference: conclusive in favor of a.
        let b = series("t", 10, &[1.5, 2.5, 3.5]);
        assert_eq!(paired_test(&a, &b).unwrap(), 0.0);
        assert_eq!(paired_test(&b, &a).unwrap(), 1.0);
    }

    #[test]
    fn paired_test_alignment_errors() {
        let a = series("t", 10, &[1.0, 2.0]);
        let other = series("u", 10, &[1.0, 2.0]);
        assert!(paired_test(&a, &other).is_err());
        let wrong_h = series("t", 5, &[1.0, 2.0]);
        assert!(paired_test(&a, &wrong_h).is_err());
        let short = series("t", 10, &[1.0]);
        assert!(paired_test(&short, &short.clone()).is_err());
        let uneven = series("t", 10, &[1.0, 2.0, 3.0]);
        assert!(paired_test(&a, &uneven).is_err());
    }

    #[test]
    fn fisher_reference_values() {
        assert_relative_eq!(
            combine_pvalues(&[0.5, 0.5]).unwrap(),
            0.5965735902799727,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            combine_pvalues(&[0.9, 0.8, 0.7]).unwrap(),
            0.9676367313011773,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            combine_pvalues(&[0.02, 0.5, 0.11, 0.93]).unwrap(),
            0.08795990518077473,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            combine_pvalues(&[0.5]).unwrap(),
            0.5000000000000001,
            epsilon = 1e-12
        );
        assert_relative_eq!(combine_pvalues(&[1.0, 1.0]).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fisher_extremes_and_rejections() {
        // An exact zero clamps rather than producing NaN.
        let p = combine_pvalues(&[0.0, 0.5]).unwrap();
        assert!(p.is_finite() && p >= 0.0 && p < 1e-100);
        assert!(combine_pvalues(&[]).is_err());
        assert!(combine_pvalues(&[-0.1]).is_err());
        assert!(combine_pvalues(&[1.1]).is_err());
        assert!(combine_pvalues(&[f64::NAN]).is_err());
    }

    #[test]
    fn chi_square_survival_matches_reference() {
        // Frozen reference values for the even-df closed form.
        assert_relative_eq!(
            chi_square_survival_even_df(1, 1.3862943611198906),
            0.5000000000000001,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            chi_square_survival_even_df(2, 2.772588722239781),
            0.5965735902799727,
            epsilon = 1e-12
        );
        // x = 0 is certain.
        assert_eq!(chi_square_survival_even_df(3, 0.0), 1.0);
        // Very large statistic underflows gracefully toward 0.
        let tiny = chi_square_survival_even_df(2, 2000.0);
        assert!((0.0..1e-300).contains(&tiny) || tiny == 0.0);
    }

    #[test]
    fn t_distribution_spot_checks() {
        // Guards the distribution dependency against regressions.
        let cases = [
            (-2.5, 4.0, 0.03338327240599406),
            (1.3, 19.0, 0.8954242498513361),
            (0.0, 7.0, 0.5),
            (-6.0, 9.0, 0.0001012496610338204),
        ];
        for (t, df, want) in cases {
            let dist = StudentsT::new(0.0, 1.0, df).unwrap();
            assert_relative_eq!(dist.cdf(t), want, epsilon = 1e-9);
        }
    }
}
