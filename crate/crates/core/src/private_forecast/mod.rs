//! Each farm's predictive mixture, built without pooling current outputs.
//!
//! Conditioning on the current period `v0` needs two raw-data-weighted
//! aggregates per component, both obtained with ring secure sums over all
//! farms:
//!
//! * `C^c_{j,n} = sum_l y_{l,v0} psi_{j,l,n}` with `Psi_j = Sigma_{j,v0}^-1`,
//!   from which everyone forms `D^c_j = C^c_j - Psi_j mu_{j,v0}`;
//! * `S^c_j = sum_n y_{n,v0} D^c_{j,n}`.
//!
//! `S^c_j - mu_{j,v0} . D^c_j` is the Mahalanobis term of the Gaussian factor
//! in each conditional weight. The conditional mean of farm `m` is
//! `mu_{j,m,t} + a . (y_{v0} - mu_{j,v0})` for a public coefficient vector
//! `a`. Farm `m` adds its own term locally; the rest is a secure sum among
//! the other farms delivered to `m` alone. Variances depend only on the
//! shared parameters.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::dims::Layout;
use crate::error::{Error, Result};
use crate::gmm::conditional::check_forecast_indices;
use crate::gmm::{log_sum_exp, ConditionalGmm, ConditioningBlock, GmmParams, FORECAST_LEVELS};
use crate::linalg;
use crate::private_em::Federation;
use crate::smc::mask::derive_seed;
use crate::smc::{
    secure_sum, Delivery, PartyId, Protocol, SecureSumConfig, SumArithmetic, Tag, FIXED_FRAC_BITS,
};

/// How the conditional mean's coefficients are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MeanMode {
    /// `a = Sigma_{j,v0}^-1 Sigma_{j,v0}^{m,t}`: the exact conditional mean.
    #[default]
    Exact,
    /// `a_n = sigma_{(m,t),(n,v0)} / sigma_{(n,v0),(n,v0)}`: diagonal
    /// inverses only. Agrees with [`MeanMode::Exact`] when `Sigma_{j,v0}` is
    /// diagonal.
    PaperLiteral,
}

impl fmt::Display for MeanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MeanMode::Exact => "exact",
            MeanMode::PaperLiteral => "paper-literal",
        })
    }
}

impl FromStr for MeanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(MeanMode::Exact),
            "paper-literal" => Ok(MeanMode::PaperLiteral),
            other => Err(Error::InvalidParams(format!(
                "unknown mean mode {other:?} (expected exact or paper-literal)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForecastConfig {
    pub mean_mode: MeanMode,
    pub arithmetic: SumArithmetic,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            mean_mode: MeanMode::Exact,
            arithmetic: SumArithmetic::Fixed {
                frac_bits: FIXED_FRAC_BITS,
            },
        }
    }
}

/// Current period and every farm's own output at that period. Protocol code
/// reads entry `m` only on behalf of farm `m`.
#[derive(Clone, Debug)]
pub struct ForecastContext {
    v0: usize,
    current: Vec<f64>,
}

impl ForecastContext {
    pub fn new(layout: Layout, v0: usize, current: Vec<f64>) -> Result<Self> {
        layout.check_period(v0)?;
        if current.len() != layout.num_farms() {
            return Err(Error::DimensionMismatch {
                context: "current outputs",
                expected: layout.num_farms(),
                found: current.len(),
            });
        }
        if let Some(bad) = current.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("current output {bad} is not finite")));
        }
        Ok(Self { v0, current })
    }

    /// Each farm reads its own value at observation `row` (0-based).
    pub fn from_row(fed: &Federation, row: usize, v0: usize) -> Result<Self> {
        let layout = fed.layout();
        layout.check_period(v0)?;
        if row >= fed.num_obs() {
            return Err(Error::InvalidIndex(format!(
                "row {row} outside 0..{}",
                fed.num_obs()
            )));
        }
        let current = fed.parties().iter().map(|p| p.slice().get(row, v0 - 1)).collect();
        Self::new(layout, v0, current)
    }

    pub fn v0(&self) -> usize {
        self.v0
    }

    /// `y_{m,v0}`, known only to farm `m`.
    pub fn own(&self, farm: usize) -> f64 {
        self.current[farm - 1]
    }
}

fn sum_config(arithmetic: SumArithmetic, capacity_total: f64, max_coef: f64) -> SecureSumConfig {
    let scale = if max_coef > 0.0 { max_coef } else { 1.0 };
    SecureSumConfig {
        arithmetic,
        ..SecureSumConfig::real(1e6 * capacity_total * scale)
    }
}

fn max_abs<'a>(values: impl IntoIterator<Item = &'a f64>) -> f64 {
    values.into_iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn ss_tag(session: usize, stage: usize, farm: usize, period: usize) -> Tag {
    Tag::new(Protocol::SecureSum, 0, &[session, stage, farm, period])
}

struct PeriodBlock {
    psi: DMatrix<f64>,
    mean: DVector<f64>,
    log_norm: f64,
}

fn period_blocks(params: &GmmParams, layout: Layout, v0: usize) -> Result<Vec<PeriodBlock>> {
    let idx = layout.period_slice(v0)?;
    let m = idx.len();
    (0..params.num_components())
        .map(|j| {
            let c = params.component(j);
            let cov = DMatrix::from_fn(m, m, |r, s| c.covariance[(idx[r], idx[s])]);
            let (psi, log_det) = linalg::spd_inverse(&cov).ok_or(Error::Conditioning { component: j })?;
            Ok(PeriodBlock {
                psi,
                mean: DVector::from_iterator(m, idx.iter().map(|&k| c.mean[k])),
                log_norm: -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
            })
        })
        .collect()
}

fn capacity_total(fed: &Federation) -> f64 {
    fed.parties().iter().map(|p| p.slice().capacity()).sum()
}

/// Conditional weights for period `v0`, shared by every farm. The secure-sum
/// outputs `C^c` and `S^c` are kept in each farm's scratch area.
pub fn private_conditional_weights(
    fed: &mut Federation,
    ctx: &ForecastContext,
    cfg: &ForecastConfig,
) -> Result<Vec<f64>> {
    let params = fed.shared_params()?.clone();
    let layout = fed.layout();
    let farms = layout.num_farms();
    let blocks = period_blocks(&params, layout, ctx.v0)?;
    let session = fed.next_session();
    let members: Vec<PartyId> = (1..=farms).map(PartyId::farm).collect();
    let cap = capacity_total(fed);
    let leader_secret = derive_seed(fed.party(1).secret_seed(), "forecast-blind", &[session as u64]);

    let linear: Vec<Vec<f64>> = (1..=farms)
        .map(|l| {
            let y = ctx.own(l);
            blocks
                .iter()
                .flat_map(|b| (0..farms).map(move |n| y * b.psi[(l - 1, n)]))
                .collect()
        })
        .collect();
    let max_psi = max_abs(blocks.iter().flat_map(|b| b.psi.iter()));
    let c = secure_sum(
        fed.network_mut(),
        ss_tag(session, 1, 0, ctx.v0),
        &members,
        &linear,
        leader_secret,
        &sum_config(cfg.arithmetic, cap, max_psi),
        Delivery::Ring,
    )?;

    let d: Vec<Vec<f64>> = blocks
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let h = &b.psi * &b.mean;
            (0..farms).map(|n| c[j * farms + n] - h[n]).collect()
        })
        .collect();
    let partial: Vec<Vec<f64>> = (1..=farms)
        .map(|n| d.iter().map(|dj| ctx.own(n) * dj[n - 1]).collect())
        .collect();
    let s = secure_sum(
        fed.network_mut(),
        ss_tag(session, 2, 0, ctx.v0),
        &members,
        &partial,
        leader_secret,
        &sum_config(cfg.arithmetic, cap, max_abs(d.iter().flatten())),
        Delivery::Ring,
    )?;

    let log_w: Vec<f64> = blocks
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let g = s[j] - b.mean.iter().zip(&d[j]).map(|(mu, d)| mu * d).sum::<f64>();
            params.component(j).weight.ln() - 0.5 * g + b.log_norm
        })
        .collect();
    let norm = log_sum_exp(&log_w);
    if !norm.is_finite() {
        return Err(Error::Degenerate { row: 0 });
    }
    let weights: Vec<f64> = log_w.iter().map(|l| (l - norm).exp()).collect();
    for n in 1..=farms {
        let shared = &mut fed.party_mut(n).shared;
        shared.forecast_weights = Some(weights.clone());
        shared.forecast_scratch = c.iter().chain(&s).copied().collect();
    }
    Ok(weights)
}

fn mean_coefficients(block: &ConditioningBlock, mode: MeanMode, j: usize) -> Result<DVector<f64>> {
    match mode {
        MeanMode::Exact => linalg::spd_solve(&block.given_cov, &block.cross_cov)
            .ok_or(Error::Conditioning { component: j }),
        MeanMode::PaperLiteral => {
            let diag = block.given_cov.diagonal();
            if diag.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Conditioning { component: j });
            }
            Ok(block.cross_cov.component_div(&diag))
        }
    }
}

/// Conditional means of `y_{farm,period}`, one per component, known only to
/// `farm` afterwards.
pub fn private_conditional_mean(
    fed: &mut Federation,
    ctx: &ForecastContext,
    farm: usize,
    period: usize,
    cfg: &ForecastConfig,
) -> Result<Vec<f64>> {
    let params = fed.shared_params()?.clone();
    let layout = fed.layout();
    check_forecast_indices(&params, layout, ctx.v0, farm, period)?;
    let farms = layout.num_farms();
    let mut own = Vec::with_capacity(params.num_components());
    let mut coefs = Vec::with_capacity(params.num_components());
    for j in 0..params.num_components() {
        let block = ConditioningBlock::slice(&params, layout, j, ctx.v0, farm, period)?;
        let a = mean_coefficients(&block, cfg.mean_mode, j)?;
        own.push(block.target_mean - a.dot(&block.given_mean) + a[farm - 1] * ctx.own(farm));
        coefs.push(a);
    }
    if farms == 1 {
        return Ok(own);
    }

    let session = fed.next_session();
    let members: Vec<PartyId> = (1..=farms).filter(|n| *n != farm).map(PartyId::farm).collect();
    let addends: Vec<Vec<f64>> = members
        .iter()
        .map(|p| {
            let n = p.0 as usize;
            coefs.iter().map(|a| a[n - 1] * ctx.own(n)).collect()
        })
        .collect();
    let leader_secret = derive_seed(
        fed.party(members[0].0 as usize).secret_seed(),
        "forecast-blind",
        &[session as u64],
    );
    let max_coef = max_abs(coefs.iter().flat_map(|a| a.iter()));
    let cap = capacity_total(fed);
    let rest = secure_sum(
        fed.network_mut(),
        ss_tag(session, 3, farm, period),
        &members,
        &addends,
        leader_secret,
        &sum_config(cfg.arithmetic, cap, max_coef),
        Delivery::Only(PartyId::farm(farm)),
    )?;
    Ok(own.iter().zip(rest).map(|(a, b)| a + b).collect())
}

/// Conditional variances of `y_{farm,period}` from the shared parameters.
pub fn private_conditional_variance(
    params: &GmmParams,
    layout: Layout,
    v0: usize,
    farm: usize,
    period: usize,
) -> Result<Vec<f64>> {
    check_forecast_indices(params, layout, v0, farm, period)?;
    (0..params.num_components())
        .map(|j| {
            let b = ConditioningBlock::slice(params, layout, j, v0, farm, period)?;
            let solved = linalg::spd_solve(&b.given_cov, &b.cross_cov)
                .ok_or(Error::Conditioning { component: j })?;
            let var = b.target_var - b.cross_cov.dot(&solved);
            if var > 0.0 {
                Ok(var)
            } else {
                Err(Error::Conditioning { component: j })
            }
        })
        .collect()
}

/// Predictive mixture for each `(farm, period)` target, each delivered to
/// its own farm. Weights are computed once for all targets.
pub fn forecast_targets(
    fed: &mut Federation,
    ctx: &ForecastContext,
    targets: &[(usize, usize)],
    cfg: &ForecastConfig,
) -> Result<Vec<ConditionalGmm>> {
    let params = fed.shared_params()?.clone();
    let layout = fed.layout();
    for &(farm, period) in targets {
        check_forecast_indices(&params, layout, ctx.v0, farm, period)?;
    }
    let weights = private_conditional_weights(fed, ctx, cfg)?;
    let mut out = Vec::with_capacity(targets.len());
    for &(farm, period) in targets {
        let means = private_conditional_mean(fed, ctx, farm, period, cfg)?;
        let variances = private_conditional_variance(&params, layout, ctx.v0, farm, period)?;
        let f = ConditionalGmm {
            farm,
            period,
            weights: weights.clone(),
            means,
            variances,
        };
        fed.party_mut(farm).shared.forecasts.push(f.clone());
        out.push(f);
    }
    Ok(out)
}

pub fn forecast(
    fed: &mut Federation,
    ctx: &ForecastContext,
    farm: usize,
    period: usize,
    cfg: &ForecastConfig,
) -> Result<ConditionalGmm> {
    Ok(forecast_targets(fed, ctx, &[(farm, period)], cfg)?.remove(0))
}

/// `farm,t,j,w_c,mu_c,sigma_c` with one row per component; `sigma_c` is the
/// conditional variance.
pub fn forecast_csv(forecasts: &[ConditionalGmm]) -> String {
    let mut out = String::from("farm,t,j,w_c,mu_c,sigma_c\n");
    for f in forecasts {
        for j in 0..f.weights.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f.farm,
                f.period,
                j + 1,
                f.weights[j],
                f.means[j],
                f.variances[j]
            ));
        }
    }
    out
}

/// `farm,t,q0.05,...,q0.95` at the standard forecast levels.
pub fn quantiles_csv(forecasts: &[ConditionalGmm]) -> String {
    let mut out = String::from("farm,t");
    for p in FORECAST_LEVELS {
        out.push_str(&format!(",q{p}"));
    }
    out.push('\n');
    for f in forecasts {
        out.push_str(&format!("{},{}", f.farm, f.period));
        for q in f.quantiles(&FORECAST_LEVELS) {
            out.push_str(&format!(",{q}"));
        }
        out.push('\n');
    }
    out
}
