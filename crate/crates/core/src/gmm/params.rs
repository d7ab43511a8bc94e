use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dims::Layout;
use crate::error::{Error, Result};
use crate::linalg;

/// Weights must sum to one within this tolerance.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Relative symmetry tolerance for covariance input.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Smallest relative diagonal jitter added after every M-step.
pub const JITTER_START: f64 = 1e-9;
/// Largest relative jitter tried before a covariance is declared singular.
pub const JITTER_CAP: f64 = 1e-3;

/// One Gaussian of the mixture with its cached precision and log-determinant.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub log_det: f64,
}

impl Component {
    /// `-(D ln 2pi + ln|Sigma|) / 2`
    pub fn log_normalizer(&self) -> f64 {
        -0.5 * (self.mean.len() as f64 * (2.0 * PI).ln() + self.log_det)
    }
}

/// Mixture parameters `{w_j, mu_j, Sigma_j}` over a `D`-dimensional joint vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmParams {
    dim: usize,
    components: Vec<Component>,
}

impl GmmParams {
    /// Validates and caches precisions. Covariances are used as given (after
    /// exact symmetrization); no jitter is applied.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let dim = Self::check_shapes(&weights, &means, &covariances)?;
        Self::check_weights(&weights)?;
        let mut components = Vec::with_capacity(weights.len());
        for (j, ((weight, mean), mut cov)) in
            weights.into_iter().zip(means).zip(covariances).enumerate()
        {
            let scale = cov.amax().max(1.0);
            if linalg::max_asymmetry(&cov) > SYMMETRY_TOL * scale {
                return Err(Error::InvalidParams(format!(
                    "covariance {j} is not symmetric"
                )));
            }
            linalg::symmetrize(&mut cov);
            let (precision, log_det) = linalg::spd_inverse(&cov)
                .ok_or(Error::SingularCovariance { component: j })?;
            components.push(Component {
                weight,
                mean,
                covariance: cov,
                precision,
                log_det,
            });
        }
        Ok(Self { dim, components })
    }

    /// Builds parameters from freshly estimated moments, applying the jitter
    /// policy: `eps * mean(diag) * I` is added with `eps` starting at
    /// [`JITTER_START`] and growing tenfold until the Cholesky factorization
    /// succeeds, up to [`JITTER_CAP`].
    pub fn regularized(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        Self::check_shapes(&weights, &means, &covariances)?;
        let covariances = covariances
            .into_iter()
            .enumerate()
            .map(|(j, cov)| regularize_covariance(cov, j))
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights, means, covariances)
    }

    /// Data-free initialization from a shared seed: means uniform in
    /// `[0, capacity_m]` per coordinate, covariances `diag(capacity_m^2 / 16)`,
    /// uniform weights.
    pub fn initial(
        layout: Layout,
        capacities: &[f64],
        num_components: usize,
        seed: u64,
    ) -> Result<Self> {
        if capacities.len() != layout.num_farms() {
            return Err(Error::DimensionMismatch {
                context: "capacities",
                expected: layout.num_farms(),
                found: capacities.len(),
            });
        }
        if capacities.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(Error::InvalidParams("capacities must be positive".into()));
        }
        if num_components == 0 {
            return Err(Error::InvalidDims("J must be at least 1".into()));
        }
        let dim = layout.dim();
        let cap_of = |d: usize| capacities[d / layout.num_periods()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means: Vec<DVector<f64>> = (0..num_components)
            .map(|_| DVector::from_fn(dim, |d, _| rng.random::<f64>() * cap_of(d)))
            .collect();
        let cov = DMatrix::from_diagonal(&DVector::from_fn(dim, |d, _| {
            cap_of(d) * cap_of(d) / 16.0
        }));
        let weights = vec![1.0 / num_components as f64; num_components];
        Self::new(weights, means, vec![cov; num_components])
    }

    fn check_shapes(
        weights: &[f64],
        means: &[DVector<f64>],
        covariances: &[DMatrix<f64>],
    ) -> Result<usize> {
        let j = weights.len();
        if j == 0 {
            return Err(Error::InvalidParams("mixture needs a component".into()));
        }
        for (context, found) in [("means", means.len()), ("covariances", covariances.len())] {
            if found != j {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: j,
                    found,
                });
            }
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidParams("zero-dimensional mixture".into()));
        }
        for m in means {
            if m.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "mean length",
                    expected: dim,
                    found: m.len(),
                });
            }
        }
        for c in covariances {
            if c.nrows() != dim || c.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    context: "covariance shape",
                    expected: dim,
                    found: c.nrows().max(c.ncols()),
                });
            }
        }
        Ok(dim)
    }

    fn check_weights(weights: &[f64]) -> Result<()> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParams("weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidParams(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &Component {
        &self.components[j]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Every scalar of the parameter set in file order: weights, means,
    /// covariances. Used for element-wise comparison.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.weights();
        for c in &self.components {
            out.extend(c.mean.iter());
        }
        for c in &self.components {
            for r in 0..self.dim {
                out.extend(c.covariance.row(r).iter());
            }
        }
        out
    }
}

/// Applies the jitter policy to one covariance estimate.
pub fn regularize_covariance(mut cov: DMatrix<f64>, component: usize) -> Result<DMatrix<f64>> {
    linalg::symmetrize(&mut cov);
    let n = cov.nrows();
    let scale = cov.diagonal().mean();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::SingularCovariance { component });
    }
    let mut eps = JITTER_START;
    while eps <= JITTER_CAP * (1.0 + 1e-9) {
        let mut candidate = cov.clone();
        for d in 0..n {
            candidate[(d, d)] += eps * scale;
        }
        if linalg::cholesky(&candidate).is_some() {
            return Ok(candidate);
        }
        eps *= 10.0;
    }
    Err(Error::SingularCovariance { component })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(dim: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() - 0.5);
        &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5
    }

    #[test]
    fn precision_inverts_covariance() {
        let cov = spd(6, 3);
        let p = GmmParams::new(vec![1.0], vec![DVector::zeros(6)], vec![cov.clone()]).unwrap();
        let prod = &p.component(0).precision * &cov;
        let eye = DMatrix::<f64>::identity(6, 6);
        assert!((prod - eye).amax() < 1e-8);
        let direct = cov.determinant().ln();
        assert!((p.component(0).log_det - direct).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_weights_and_asymmetry() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let mean = DVector::zeros(2);
        assert!(GmmParams::new(vec![0.6, 0.6], vec![mean.clone(); 2], vec![eye.clone(); 2]).is_err());
        assert!(GmmParams::new(vec![-0.5, 1.5], vec![mean.clone(); 2], vec![eye.clone(); 2]).is_err());
        let mut skew = eye.clone();
        skew[(0, 1)] = 0.1;
        assert!(GmmParams::new(vec![1.0], vec![mean.clone()], vec![skew]).is_err());
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            GmmParams::new(vec![1.0], vec![mean], vec![singular]),
            Err(Error::SingularCovariance { component: 0 })
        ));
    }

    #[test]
    fn jitter_repairs_rank_deficient_covariance() {
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let fixed = regularize_covariance(singular.clone(), 0).unwrap();
        let added = fixed[(0, 0)] - 1.0;
        assert!((JITTER_START..=JITTER_CAP).contains(&added));
        assert_eq!(fixed[(0, 1)], 1.0);
        assert!(matches!(
            regularize_covariance(DMatrix::zeros(2, 2), 4),
            Err(Error::SingularCovariance { component: 4 })
        ));
        // A healthy matrix only receives the starting jitter.
        let good = spd(3, 9);
        let reg = regularize_covariance(good.clone(), 0).unwrap();
        let floor = JITTER_START * good.diagonal().mean();
        assert!(((&reg - &good).diagonal().amax() - floor).abs() < 1e-15 * good.amax());
    }

    #[test]
    fn initialization_is_data_free_and_deterministic() {
        let layout = Layout::new(2, 3).unwrap();
        let caps = [10.0, 40.0];
        let a = GmmParams::initial(layout, &caps, 3, 42).unwrap();
        let b = GmmParams::initial(layout, &caps, 3, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, GmmParams::initial(layout, &caps, 3, 43).unwrap());
        for c in a.components() {
            assert_eq!(c.weight, 1.0 / 3.0);
            for d in 0..6 {
                let cap = caps[d / 3];
                assert!(c.mean[d] >= 0.0 && c.mean[d] <= cap);
                assert_eq!(c.covariance[(d, d)], cap * cap / 16.0);
            }
        }
    }
}
