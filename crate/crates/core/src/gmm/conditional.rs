//! Conditional (predictive) distribution of one farm-period given every
//! farm's output at the current period.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::density::log_sum_exp;
use super::params::GmmParams;
use crate::dims::Layout;
use crate::error::{Error, Result};
use crate::linalg;

/// Probability tolerance of [`ConditionalGmm::quantile`].
pub const QUANTILE_TOL: f64 = 1e-8;

/// Quantile levels written alongside every forecast.
pub const FORECAST_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Scalar mixture `sum_j w_j N(y; mu_j, sigma_j)` for farm `farm` at `period`.
/// `variances` are in MW^2.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalGmm {
    pub farm: usize,
    pub period: usize,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl ConditionalGmm {
    fn normals(&self) -> impl Iterator<Item = (f64, Normal)> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| (*w, Normal::new(*m, v.sqrt()).expect("positive variance")))
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.normals().map(|(w, n)| w * n.pdf(y)).sum()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.normals().map(|(w, n)| w * n.cdf(y)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    /// Inverse CDF by bisection, accurate to [`QUANTILE_TOL`] in probability.
    pub fn quantile(&self, p: f64) -> f64 {
        assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
        let spread = self
            .variances
            .iter()
            .map(|v| v.sqrt())
            .fold(0.0f64, f64::max);
        let lo_mean = self.means.iter().copied().fold(f64::INFINITY, f64::min);
        let hi_mean = self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut lo = lo_mean - 10.0 * spread;
        let mut hi = hi_mean + 10.0 * spread;
        while self.cdf(lo) > p {
            lo -= 10.0 * spread;
        }
        while self.cdf(hi) < p {
            hi += 10.0 * spread;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let f = self.cdf(mid);
            if (f - p).abs() <= QUANTILE_TOL || hi - lo <= f64::EPSILON * mid.abs().max(1.0) {
                return mid;
            }
            if f < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn quantiles(&self, levels: &[f64]) -> Vec<f64> {
        levels.iter().map(|p| self.quantile(*p)).collect()
    }
}

/// Public slices of one component needed to condition `(m, t)` on period `v0`.
#[derive(Clone, Debug)]
pub struct ConditioningBlock {
    /// `mu_{j,m,t}`
    pub target_mean: f64,
    /// `sigma_{j,(m,t),(m,t)}`
    pub target_var: f64,
    /// `mu_{j,v0}`, length `M`.
    pub given_mean: DVector<f64>,
    /// `Sigma_{j,v0}`, `M x M`.
    pub given_cov: DMatrix<f64>,
    /// `Sigma_{j,v0}^{m,t}`, length `M`.
    pub cross_cov: DVector<f64>,
}

impl ConditioningBlock {
    pub fn slice(
        params: &GmmParams,
        layout: Layout,
        j: usize,
        v0: usize,
        farm: usize,
        period: usize,
    ) -> Result<Self> {
        let idx = layout.period_slice(v0)?;
        let target = layout.flat(farm, period)?;
        let c = params.component(j);
        Ok(Self {
            target_mean: c.mean[target],
            target_var: c.covariance[(target, target)],
            given_mean: DVector::from_iterator(idx.len(), idx.iter().map(|&k| c.mean[k])),
            given_cov: DMatrix::from_fn(idx.len(), idx.len(), |r, s| {
                c.covariance[(idx[r], idx[s])]
            }),
            cross_cov: DVector::from_iterator(
                idx.len(),
                idx.iter().map(|&k| c.covariance[(target, k)]),
            ),
        })
    }
}

pub(crate) fn check_forecast_indices(
    params: &GmmParams,
    layout: Layout,
    v0: usize,
    farm: usize,
    period: usize,
) -> Result<()> {
    if layout.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            context: "layout vs parameter dimension",
            expected: params.dim(),
            found: layout.dim(),
        });
    }
    layout.check_period(v0)?;
    layout.check_period(period)?;
    layout.check_farm(farm)?;
    if period == v0 {
        return Err(Error::InvalidIndex(format!(
            "target period {period} coincides with the conditioning period"
        )));
    }
    Ok(())
}

/// Plaintext conditional mixture of `y_{m,t}` given `y_{v0}` (all farms at
/// period `v0`), by dense solves against `Sigma_{j,v0}`.
pub fn conditional_params(
    params: &GmmParams,
    layout: Layout,
    y_v0: &[f64],
    v0: usize,
    farm: usize,
    period: usize,
) -> Result<ConditionalGmm> {
    check_forecast_indices(params, layout, v0, farm, period)?;
    if y_v0.len() != layout.num_farms() {
        return Err(Error::DimensionMismatch {
            context: "current outputs",
            expected: layout.num_farms(),
            found: y_v0.len(),
        });
    }
    let y = DVector::from_column_slice(y_v0);
    let k = params.num_components();
    let mut log_w = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for j in 0..k {
        let b = ConditioningBlock::slice(params, layout, j, v0, farm, period)?;
        let chol = linalg::cholesky(&b.given_cov).ok_or(Error::Conditioning { component: j })?;
        let diff = &y - &b.given_mean;
        let solved = chol.solve(&diff);
        let quad = diff.dot(&solved);
        let log_det = linalg::log_det_from_cholesky(&chol);
        let log_gauss = -0.5 * quad - 0.5 * (y.len() as f64 * (2.0 * PI).ln() + log_det);
        log_w.push(params.component(j).weight.ln() + log_gauss);
        let coef = chol.solve(&b.cross_cov);
        means.push(b.target_mean + coef.dot(&diff));
        let var = b.target_var - b.cross_cov.dot(&coef);
        if !(var > 0.0) {
            return Err(Error::Conditioning { component: j });
        }
        variances.push(var);
    }
    let norm = log_sum_exp(&log_w);
    if !norm.is_finite() {
        return Err(Error::Degenerate { row: 0 });
    }
    Ok(ConditionalGmm {
        farm,
        period,
        weights: log_w.iter().map(|l| (l - norm).exp()).collect(),
        means,
        variances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::density::gmm_pdf;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bivariate_textbook_conditional() {
        let (mu1, mu2, s1, s2, rho) = (3.0, -1.0, 2.0, 0.5, 0.6);
        let cov = DMatrix::from_row_slice(2, 2, &[s1 * s1, rho * s1 * s2, rho * s1 * s2, s2 * s2]);
        let p = GmmParams::new(vec![1.0], vec![DVector::from_vec(vec![mu1, mu2])], vec![cov]).unwrap();
        // One farm, two periods: condition period 1 on period 2.
        let layout = Layout::new(1, 2).unwrap();
        let c = conditional_params(&p, layout, &[0.25], 2, 1, 1).unwrap();
        let y2 = 0.25;
        assert_relative_eq!(c.means[0], mu1 + rho * s1 / s2 * (y2 - mu2), epsilon = 1e-12);
        assert_relative_eq!(c.variances[0], s1 * s1 * (1.0 - rho * rho), epsilon = 1e-12);
        assert_eq!(c.weights, vec![1.0]);
    }

    #[test]
    fn independence_leaves_target_marginal() {
        // M = 2, T = 2, target (1,2) uncorrelated with period 1.
        let layout = Layout::new(2, 2).unwrap();
        let mut cov = DMatrix::<f64>::identity(4, 4) * 2.0;
        cov[(0, 2)] = 0.5;
        cov[(2, 0)] = 0.5;
        let mean = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let p = GmmParams::new(vec![1.0], vec![mean], vec![cov]).unwrap();
        let c = conditional_params(&p, layout, &[7.0, -3.0], 1, 1, 2).unwrap();
        assert_relative_eq!(c.means[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(c.variances[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_target_in_conditioning_period() {
        let layout = Layout::new(1, 2).unwrap();
        let p = GmmParams::new(vec![1.0], vec![DVector::zeros(2)], vec![DMatrix::identity(2, 2)]).unwrap();
        assert!(conditional_params(&p, layout, &[0.0], 1, 1, 1).is_err());
        assert!(conditional_params(&p, layout, &[0.0, 1.0], 1, 1, 2).is_err());
        assert!(conditional_params(&p, layout, &[0.0], 3, 1, 2).is_err());
    }

    fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(dim, dim) * 0.3
    }

    #[test]
    fn conditional_density_matches_joint_over_marginal() {
        // M = 1, T = 2: joint over (y_t, y_v0); f(y_t | y_v0) = f(y_t, y_v0) / f(y_v0).
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let layout = Layout::new(1, 2).unwrap();
        let p = GmmParams::new(
            vec![0.35, 0.65],
            vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![4.0, -1.0])],
            vec![random_spd(2, &mut rng), random_spd(2, &mut rng)],
        )
        .unwrap();
        let y0 = 0.7;
        let c = conditional_params(&p, layout, &[y0], 1, 1, 2).unwrap();
        let joint = |yt: f64| gmm_pdf(&DVector::from_vec(vec![y0, yt]), &p).unwrap();
        let (lo, hi, n) = (-40.0, 40.0, 400_000);
        let h = (hi - lo) / n as f64;
        let marginal: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * joint(lo + k as f64 * h)
            })
            .sum::<f64>()
            * h;
        for k in 0..50 {
            let yt = -6.0 + k as f64 * 0.25;
            assert!((c.pdf(yt) - joint(yt) / marginal).abs() < 1e-6);
        }
    }

    #[test]
    fn quantiles_invert_the_cdf() {
        let c = ConditionalGmm {
            farm: 1,
            period: 2,
            weights: vec![0.4, 0.6],
            means: vec![10.0, 30.0],
            variances: vec![4.0, 25.0],
        };
        let qs = c.quantiles(&FORECAST_LEVELS);
        for (q, p) in qs.iter().zip(FORECAST_LEVELS) {
            assert!((c.cdf(*q) - p).abs() <= QUANTILE_TOL);
        }
        assert!(qs.windows(2).all(|w| w[0] < w[1]));
    }
}
