//! Plaintext Gaussian-mixture mathematics: densities, centralized EM, and the
//! conditional distribution used for forecasting.

pub mod conditional;
pub mod density;
pub mod em;
pub mod io;
pub mod params;

pub use conditional::{conditional_params, ConditionalGmm, ConditioningBlock, FORECAST_LEVELS};
pub use density::{gaussian_logpdf, gmm_logpdf, gmm_pdf, log_sum_exp};
pub use em::{
    e_step, expectation, fit_centralized, log_likelihood, m_step, EStepOutcome, EmConfig,
    EmptyComponentPolicy, FitConfig, FitReport, Responsibilities,
};
pub use params::{Component, GmmParams};
