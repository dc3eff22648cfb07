//! Least-squares fits on small ladders.

use crate::error::{Error, Result};

pub const MIN_FIT_SAMPLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute deviation of a sample from the fitted line.
    pub residual: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn fit_linear(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).abs())
        .fold(0.0, f64::max);
    Ok(LinearFit {
        slope,
        intercept,
        residual,
    })
}

/// Power-law fit `value ≈ e^{intercept} k^{slope}` by OLS on
/// `(ln k, ln value)`. Needs at least four strictly positive values.
pub fn fit_slope(pairs: &[(f64, f64)]) -> Result<LinearFit> {
    if pairs.len() < MIN_FIT_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_FIT_SAMPLES,
            got: pairs.len(),
        });
    }
    for &(k, v) in pairs {
        if !(v > 0.0) || !(k > 0.0) {
            return Err(Error::NonPositiveSample { k, value: v });
        }
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    fit_linear(&xs, &ys)
}

/// The upper part of a ladder used for asymptotic fits: the top half,
/// widened to at least [`MIN_FIT_SAMPLES`] entries when available.
pub fn top_half<T>(ladder: &[T]) -> &[T] {
    let n = ladder.len();
    let take = (n - n / 2).max(MIN_FIT_SAMPLES).min(n);
    &ladder[n - take..]
}

/// True when the sequence is strictly decreasing.
pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_square_law() {
        let pairs: Vec<(f64, f64)> = [4.0, 8.0, 12.0, 16.0].iter().map(|&k| (k, k * k)).collect();
        let f = fit_slope(&pairs).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn constant_sequence_is_flat() {
        let pairs: Vec<(f64, f64)> = (1..=6).map(|k| (f64::from(k), 3.5)).collect();
        assert!(fit_slope(&pairs).unwrap().slope.abs() < 1e-14);
    }

    #[test]
    fn corrected_square_law_slope_window() {
        // Closed form: d ln(k²(1+1/k)) / d ln k = 2 - 1/(k+1) ∈ [1.951, 1.976].
        let pairs: Vec<(f64, f64)> = (20..=40)
            .step_by(4)
            .map(|k| {
                let k = f64::from(k);
                (k, k * k * (1.0 + 1.0 / k))
            })
            .collect();
        let s = fit_slope(&pairs).unwrap().slope;
        assert!((1.95..=2.0).contains(&s), "{s}");
    }

    #[test]
    fn rejects_bad_samples() {
        let short = [(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)];
        assert!(matches!(
            fit_slope(&short),
            Err(Error::TooFewSamples { needed: 4, got: 3 })
        ));
        let neg = [(1.0, 1.0), (2.0, 0.0), (3.0, 3.0), (4.0, 4.0)];
        assert_eq!(
            fit_slope(&neg),
            Err(Error::NonPositiveSample { k: 2.0, value: 0.0 })
        );
    }

    #[test]
    fn top_half_sizes() {
        let l: Vec<u32> = (0..9).collect();
        assert_eq!(top_half(&l), &[4, 5, 6, 7, 8]);
        let l: Vec<u32> = (0..4).collect();
        assert_eq!(top_half(&l).len(), 4);
        let l: Vec<u32> = (0..6).collect();
        assert_eq!(top_half(&l), &[2, 3, 4, 5]);
    }

    proptest! {
        #[test]
        fn recovers_power_laws(alpha in -4.0f64..4.0, c in 0.01f64..100.0, k0 in 1u32..20) {
            let pairs: Vec<(f64, f64)> = (0..6)
                .map(|i| {
                    let k = f64::from(k0 + 4 * i);
                    (k, c * k.powf(alpha))
                })
                .collect();
            let f = fit_slope(&pairs).unwrap();
            prop_assert!((f.slope - alpha).abs() < 1e-9);
            prop_assert!((f.intercept - c.ln()).abs() < 1e-8);
        }

        #[test]
        fn line_fit_is_translation_equivariant(shift in -10.0f64..10.0, m in -3.0f64..3.0) {
            let xs = [0.0, 1.0, 2.5, 4.0, 7.0];
            let ys: Vec<f64> = xs.iter().map(|x| m * x + shift + 0.1 * (x * 3.0).sin()).collect();
            let a = fit_linear(&xs, &ys).unwrap();
            let ys2: Vec<f64> = ys.iter().map(|y| y + 1.0).collect();
            let b = fit_linear(&xs, &ys2).unwrap();
            prop_assert!((a.slope - b.slope).abs() < 1e-12);
            prop_assert!((b.intercept - a.intercept - 1.0).abs() < 1e-12);
        }
    }
}
