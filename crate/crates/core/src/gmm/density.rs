use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::params::{Component, GmmParams};
use crate::error::{Error, Result};
use crate::linalg;

/// Log-density of `N(x; mean, precision^-1)` given the cached `ln|Sigma|`.
pub fn gaussian_logpdf(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    precision: &DMatrix<f64>,
    log_det: f64,
) -> Result<f64> {
    let d = x.len();
    if mean.len() != d {
        return Err(Error::DimensionMismatch {
            context: "gaussian mean",
            expected: d,
            found: mean.len(),
        });
    }
    if precision.nrows() != d || precision.ncols() != d {
        return Err(Error::DimensionMismatch {
            context: "gaussian precision",
            expected: d,
            found: precision.nrows().max(precision.ncols()),
        });
    }
    let diff: Vec<f64> = x.iter().zip(mean.iter()).map(|(a, b)| a - b).collect();
    let quad = linalg::quadratic_form(&diff, precision);
    Ok(-0.5 * quad - 0.5 * (d as f64 * (2.0 * PI).ln() + log_det))
}

pub(crate) fn component_logpdf(x: &[f64], component: &Component) -> f64 {
    let diff: Vec<f64> = x
        .iter()
        .zip(component.mean.iter())
        .map(|(a, b)| a - b)
        .collect();
    -0.5 * linalg::quadratic_form(&diff, &component.precision) + component.log_normalizer()
}

/// `ln sum_j exp(v_j)` with max subtraction; `-inf` for an all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn gmm_logpdf(x: &DVector<f64>, params: &GmmParams) -> Result<f64> {
    if x.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            context: "mixture point",
            expected: params.dim(),
            found: x.len(),
        });
    }
    let terms: Vec<f64> = params
        .components()
        .iter()
        .map(|c| c.weight.ln() + component_logpdf(x.as_slice(), c))
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Joint mixture density `sum_j w_j N(x; mu_j, Sigma_j)`.
pub fn gmm_pdf(x: &DVector<f64>, params: &GmmParams) -> Result<f64> {
    gmm_logpdf(x, params).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params_1d(weights: &[f64], means: &[f64], vars: &[f64]) -> GmmParams {
        GmmParams::new(
            weights.to_vec(),
            means.iter().map(|m| DVector::from_element(1, *m)).collect(),
            vars.iter().map(|v| DMatrix::from_element(1, 1, *v)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_at_mode() {
        let lp = gaussian_logpdf(
            &DVector::zeros(1),
            &DVector::zeros(1),
            &DMatrix::identity(1, 1),
            0.0,
        )
        .unwrap();
        assert_relative_eq!(lp, -0.5 * (2.0 * PI).ln(), epsilon = 1e-15);
        assert_relative_eq!(lp.exp(), 0.398_942_280_401_432_7, epsilon = 1e-15);
    }

    #[test]
    fn identity_covariance_at_mean() {
        for d in 1..6 {
            let x = DVector::from_fn(d, |i, _| i as f64);
            let lp = gaussian_logpdf(&x, &x, &DMatrix::identity(d, d), 0.0).unwrap();
            assert_relative_eq!(lp, -(d as f64) / 2.0 * (2.0 * PI).ln(), epsilon = 1e-14);
        }
    }

    #[test]
    fn bivariate_against_hand_inverse() {
        // Sigma = [[2, .5], [.5, 1]]: det = 1.75, inverse = [[1, -.5], [-.5, 2]] / 1.75.
        let det = 2.0 * 1.0 - 0.5 * 0.5;
        let inv = DMatrix::from_row_slice(2, 2, &[1.0 / det, -0.5 / det, -0.5 / det, 2.0 / det]);
        let (x0, x1) = (1.0, 2.0);
        let quad = x0 * (inv[(0, 0)] * x0 + inv[(0, 1)] * x1) + x1 * (inv[(1, 0)] * x0 + inv[(1, 1)] * x1);
        let expected = -0.5 * quad - (2.0 * PI).ln() - 0.5 * det.ln();

        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = GmmParams::new(vec![1.0], vec![DVector::zeros(2)], vec![cov]).unwrap();
        let c = p.component(0);
        let lp = gaussian_logpdf(
            &DVector::from_vec(vec![1.0, 2.0]),
            &c.mean,
            &c.precision,
            c.log_det,
        )
        .unwrap();
        assert_relative_eq!(lp, expected, epsilon = 1e-13);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = gaussian_logpdf(
            &DVector::zeros(2),
            &DVector::zeros(3),
            &DMatrix::identity(2, 2),
            0.0,
        );
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        let p = params_1d(&[1.0], &[0.0], &[1.0]);
        assert!(gmm_pdf(&DVector::zeros(2), &p).is_err());
    }

    #[test]
    fn single_and_duplicated_components() {
        let single = params_1d(&[1.0], &[1.5], &[0.7]);
        let x = DVector::from_element(1, 0.3);
        let c = single.component(0);
        let direct = gaussian_logpdf(&x, &c.mean, &c.precision, c.log_det).unwrap().exp();
        assert_relative_eq!(gmm_pdf(&x, &single).unwrap(), direct, epsilon = 1e-15);
        let doubled = params_1d(&[0.5, 0.5], &[1.5, 1.5], &[0.7, 0.7]);
        assert_relative_eq!(gmm_pdf(&x, &doubled).unwrap(), direct, epsilon = 1e-15);
    }

    #[test]
    fn one_dimensional_mixture_integrates_to_one() {
        let p = params_1d(&[0.3, 0.7], &[-2.0, 3.0], &[0.5, 2.0]);
        // Trapezoid rule on [-30, 30].
        let n = 200_000;
        let (lo, hi) = (-30.0, 30.0);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for k in 0..=n {
            let x = DVector::from_element(1, lo + k as f64 * h);
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            total += w * gmm_pdf(&x, &p).unwrap();
        }
        assert!((total * h - 1.0).abs() < 1e-6);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_relative_eq!(log_sum_exp(&[-1000.0, -1000.0]), -1000.0 + 2f64.ln());
    }
}
