//! Privacy-preserving Gaussian mixture fitting and forecasting for wind farms
//! whose output histories are split by farm.
//!
//! Each farm keeps its own columns of the data. The farms run EM together
//! through secure scalar products and ring secure sums on a simulated network,
//! and end up with the same parameters a pooled fit would give. The fitted
//! mixture then yields a predictive distribution for each farm that only that
//! farm learns.
//!
//! The guide in `book/` walks through the pieces; its examples run as tests.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod dims;
pub mod error;
pub mod gmm;
pub(crate) mod linalg;
pub mod partition;
pub mod private_em;
pub mod private_forecast;
pub mod simnet;
pub mod smc;
pub mod traffic;

pub use dims::{Dims, FlatIndex, Layout};
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/em.md")]
    mod em {}
    #[doc = include_str!("../../../book/src/primitives.md")]
    mod primitives {}
    #[doc = include_str!("../../../book/src/private-em.md")]
    mod private_em {}
    #[doc = include_str!("../../../book/src/forecasting.md")]
    mod forecasting {}
    #[doc = include_str!("../../../book/src/traffic.md")]
    mod traffic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
