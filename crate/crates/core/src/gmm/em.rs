//! Centralized EM on the assembled data matrix. This is the reference every
//! distributed computation is checked against.

use nalgebra::{DMatrix, DVector};

use super::density::{component_logpdf, log_sum_exp};
use super::params::GmmParams;
use crate::error::{Error, Result};

/// Components whose total responsibility falls below this are empty.
pub const EMPTY_COMPONENT_TOL: f64 = 1e-12;

/// Posterior responsibilities `Q[i][j]`, `I` rows by `J` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities {
    q: DMatrix<f64>,
}

impl Responsibilities {
    pub fn from_matrix(q: DMatrix<f64>) -> Result<Self> {
        for (i, row) in q.row_iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParams(format!(
                    "responsibility row {i} is not a probability vector"
                )));
            }
        }
        Ok(Self { q })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn num_obs(&self) -> usize {
        self.q.nrows()
    }

    pub fn num_components(&self) -> usize {
        self.q.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[(i, j)]
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.q.nrows();
        &self.q.as_slice()[j * n..(j + 1) * n]
    }

    /// `N_j = sum_i Q[i][j]`.
    pub fn totals(&self) -> Vec<f64> {
        (0..self.q.ncols())
            .map(|j| self.column(j).iter().sum())
            .collect()
    }
}

/// Everything an E-step produces.
#[derive(Clone, Debug)]
pub struct EStepOutcome {
    pub responsibilities: Responsibilities,
    /// `sum_i ln f(y^i; theta)`.
    pub log_likelihood: f64,
    /// `ln f(y^i; theta)` per observation.
    pub row_log_density: Vec<f64>,
}

/// Turns per-component Gaussian log-densities `ln N(y^i; mu_j, Sigma_j)` into
/// responsibilities, normalizing each row in log space after subtracting its
/// maximum. Both the centralized and the private E-step finish here.
pub fn normalize_log_densities(
    log_gauss: &DMatrix<f64>,
    params: &GmmParams,
) -> Result<EStepOutcome> {
    let (rows, cols) = log_gauss.shape();
    if cols != params.num_components() {
        return Err(Error::DimensionMismatch {
            context: "log-density columns",
            expected: params.num_components(),
            found: cols,
        });
    }
    let log_w: Vec<f64> = params.components().iter().map(|c| c.weight.ln()).collect();
    let mut q = DMatrix::zeros(rows, cols);
    let mut row_log_density = Vec::with_capacity(rows);
    let mut terms = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            terms[j] = log_w[j] + log_gauss[(i, j)];
        }
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Degenerate { row: i });
        }
        let total: f64 = terms.iter().map(|t| (t - max).exp()).sum();
        for j in 0..cols {
            q[(i, j)] = (terms[j] - max).exp() / total;
        }
        row_log_density.push(max + total.ln());
    }
    let log_likelihood = row_log_density.iter().sum();
    Ok(EStepOutcome {
        responsibilities: Responsibilities { q },
        log_likelihood,
        row_log_density,
    })
}

fn check_data(data: &DMatrix<f64>, params: &GmmParams) -> Result<()> {
    if data.ncols() != params.dim() {
        return Err(Error::DimensionMismatch {
            context: "data columns",
            expected: params.dim(),
            found: data.ncols(),
        });
    }
    if data.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Gaussian log-densities for every observation and component.
pub fn component_log_densities(data: &DMatrix<f64>, params: &GmmParams) -> Result<DMatrix<f64>> {
    check_data(data, params)?;
    let mut out = DMatrix::zeros(data.nrows(), params.num_components());
    let mut row = vec![0.0; data.ncols()];
    for i in 0..data.nrows() {
        for (d, v) in row.iter_mut().enumerate() {
            *v = data[(i, d)];
        }
        for (j, c) in params.components().iter().enumerate() {
            out[(i, j)] = component_logpdf(&row, c);
        }
    }
    Ok(out)
}

pub fn expectation(data: &DMatrix<f64>, params: &GmmParams) -> Result<EStepOutcome> {
    normalize_log_densities(&component_log_densities(data, params)?, params)
}

pub fn e_step(data: &DMatrix<f64>, params: &GmmParams) -> Result<Responsibilities> {
    expectation(data, params).map(|o| o.responsibilities)
}

/// `sum_i ln f(y^i; theta)`.
pub fn log_likelihood(data: &DMatrix<f64>, params: &GmmParams) -> Result<f64> {
    let lp = component_log_densities(data, params)?;
    let log_w: Vec<f64> = params.components().iter().map(|c| c.weight.ln()).collect();
    let mut total = 0.0;
    let mut terms = vec![0.0; log_w.len()];
    for i in 0..lp.nrows() {
        for (j, t) in terms.iter_mut().enumerate() {
            *t = log_w[j] + lp[(i, j)];
        }
        total += log_sum_exp(&terms);
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EmptyComponentPolicy {
    /// Restart the component at the least likely observation.
    #[default]
    Reseed,
    Fail,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EmConfig {
    /// Center the covariance update on the freshly updated mean instead of
    /// the previous iteration's mean.
    pub use_updated_mean: bool,
    pub empty_component: EmptyComponentPolicy,
}

/// Raw M-step moments before reseeding and regularization.
#[derive(Clone, Debug)]
pub struct Moments {
    /// `N_j`.
    pub totals: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

/// Components with (numerically) zero total responsibility.
pub fn empty_components(totals: &[f64]) -> Vec<usize> {
    totals
        .iter()
        .enumerate()
        .filter(|(_, n)| !(**n >= EMPTY_COMPONENT_TOL))
        .map(|(j, _)| j)
        .collect()
}

/// Observations ordered from least to most likely; reseeded components take
/// them in this order.
pub fn reseed_rows(row_log_density: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row_log_density.len()).collect();
    order.sort_by(|&a, &b| row_log_density[a].total_cmp(&row_log_density[b]).then(a.cmp(&b)));
    order.truncate(count);
    order
}

/// Closes an M-step shared by both execution paths: weights from `N_j / I`,
/// reseeding of empty components, and the covariance jitter policy.
///
/// `reseed_with` maps each empty component to the observation it restarts
/// from. A reseeded component keeps its previous covariance and takes weight
/// `1/I` before all weights are renormalized.
pub fn finish_m_step(
    num_obs: usize,
    mut moments: Moments,
    prev: &GmmParams,
    cfg: &EmConfig,
    reseed_with: &[(usize, DVector<f64>)],
) -> Result<GmmParams> {
    let inv_i = 1.0 / num_obs as f64;
    let mut weights: Vec<f64> = moments.totals.iter().map(|n| n * inv_i).collect();
    let empty = empty_components(&moments.totals);
    if !empty.is_empty() {
        if cfg.empty_component == EmptyComponentPolicy::Fail {
            return Err(Error::EmptyComponent { component: empty[0] });
        }
        for &j in &empty {
            let (_, obs) = reseed_with
                .iter()
                .find(|(k, _)| *k == j)
                .ok_or(Error::EmptyComponent { component: j })?;
            weights[j] = inv_i;
            moments.means[j] = obs.clone();
            moments.covariances[j] = prev.component(j).covariance.clone();
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
    }
    GmmParams::regularized(weights, moments.means, moments.covariances)
}

/// Centralized moments of the weighted data.
pub fn m_step_moments(
    data: &DMatrix<f64>,
    q: &Responsibilities,
    prev: &GmmParams,
    cfg: &EmConfig,
) -> Result<Moments> {
    check_data(data, prev)?;
    if q.num_obs() != data.nrows() || q.num_components() != prev.num_components() {
        return Err(Error::DimensionMismatch {
            context: "responsibility shape",
            expected: data.nrows(),
            found: q.num_obs(),
        });
    }
    let (rows, dim) = data.shape();
    let totals = q.totals();
    let mut means = Vec::with_capacity(totals.len());
    let mut covariances = Vec::with_capacity(totals.len());
    for (j, &total) in totals.iter().enumerate() {
        let weights = q.column(j);
        if !(total >= EMPTY_COMPONENT_TOL) {
            means.push(prev.component(j).mean.clone());
            covariances.push(prev.component(j).covariance.clone());
            continue;
        }
        let mean = data.tr_mul(&DVector::from_column_slice(weights)) / total;
        let center = if cfg.use_updated_mean {
            &mean
        } else {
            &prev.component(j).mean
        };
        let centered = DMatrix::from_fn(rows, dim, |i, d| data[(i, d)] - center[d]);
        let weighted = DMatrix::from_fn(rows, dim, |i, d| weights[i] * centered[(i, d)]);
        let mut cov = centered.tr_mul(&weighted) / total;
        crate::linalg::symmetrize(&mut cov);
        means.push(mean);
        covariances.push(cov);
    }
    Ok(Moments {
        totals,
        means,
        covariances,
    })
}

/// Re-estimates `theta` from responsibilities. The covariance update is
/// centered on the previous mean unless `cfg.use_updated_mean` is set.
pub fn m_step(
    data: &DMatrix<f64>,
    q: &Responsibilities,
    prev: &GmmParams,
    cfg: &EmConfig,
) -> Result<GmmParams> {
    let moments = m_step_moments(data, q, prev, cfg)?;
    let empty = empty_components(&moments.totals);
    let reseeds = if empty.is_empty() || cfg.empty_component == EmptyComponentPolicy::Fail {
        Vec::new()
    } else {
        let density = expectation(data, prev)?.row_log_density;
        empty
            .iter()
            .zip(reseed_rows(&density, empty.len()))
            .map(|(&j, i)| (j, data.row(i).transpose()))
            .collect()
    };
    finish_m_step(data.nrows(), moments, prev, cfg, &reseeds)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    /// Stop once `|l_k - l_{k-1}| <= tol * max(1, |l_{k-1}|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub em: EmConfig,
    /// Keep `theta^k` for every iteration in the report.
    pub record_history: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            em: EmConfig::default(),
            record_history: false,
        }
    }
}

/// Relative log-likelihood stopping rule shared by every fitter.
pub fn has_converged(prev_ll: f64, ll: f64, tol: f64) -> bool {
    (ll - prev_ll).abs() <= tol * prev_ll.abs().max(1.0)
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub params: GmmParams,
    /// Number of M-steps applied.
    pub iterations: usize,
    /// Log-likelihood of `theta^0, theta^1, ...` as evaluated.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    /// `theta^0..=theta^iterations` when requested.
    pub history: Vec<GmmParams>,
}

/// Runs EM on the assembled data from `init`.
///
/// With `tol = inf` no iteration runs and `init` is returned unchanged.
pub fn fit_centralized(data: &DMatrix<f64>, init: GmmParams, cfg: &FitConfig) -> Result<FitReport> {
    check_data(data, &init)?;
    let mut params = init;
    let mut history = Vec::new();
    if cfg.record_history {
        history.push(params.clone());
    }
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = f64::INFINITY <= cfg.tol;
    while !converged && iterations < cfg.max_iter {
        let outcome = expectation(data, &params).map_err(|e| e.at_iteration(iterations))?;
        if let Some(&prev) = trace.last() {
            if has_converged(prev, outcome.log_likelihood, cfg.tol) {
                trace.push(outcome.log_likelihood);
                converged = true;
                break;
            }
        }
        trace.push(outcome.log_likelihood);
        params = m_step(data, &outcome.responsibilities, &params, &cfg.em)
            .map_err(|e| e.at_iteration(iterations))?;
        iterations += 1;
        if cfg.record_history {
            history.push(params.clone());
        }
    }
    Ok(FitReport {
        params,
        iterations,
        loglik_trace: trace,
        converged,
        history,
    })
}
