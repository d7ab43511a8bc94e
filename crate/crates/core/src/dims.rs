//! Problem sizes and the farm-major flat index layout.
//!
//! A complete observation stacks every farm's `T` periods one after another,
//! so farm `m` owns the contiguous block `(m-1)*T .. m*T` of the joint vector.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Farms and periods; enough to map `(farm, period)` pairs onto joint-vector
/// coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout {
    num_farms: usize,
    num_periods: usize,
}

impl Layout {
    pub fn new(num_farms: usize, num_periods: usize) -> Result<Self> {
        if num_farms == 0 || num_periods == 0 {
            return Err(Error::InvalidDims(format!(
                "need at least one farm and one period, got M={num_farms}, T={num_periods}"
            )));
        }
        Ok(Self {
            num_farms,
            num_periods,
        })
    }

    pub fn num_farms(&self) -> usize {
        self.num_farms
    }

    pub fn num_periods(&self) -> usize {
        self.num_periods
    }

    /// Joint dimension `M*T`.
    pub fn dim(&self) -> usize {
        self.num_farms * self.num_periods
    }

    /// Flat coordinate of the 1-based `(farm, period)` pair.
    pub fn flat(&self, farm: usize, period: usize) -> Result<usize> {
        Ok(FlatIndex::new(*self, farm, period)?.flat)
    }

    /// Coordinates owned by the 1-based `farm`.
    pub fn farm_range(&self, farm: usize) -> Range<usize> {
        debug_assert!(farm >= 1 && farm <= self.num_farms);
        let start = (farm - 1) * self.num_periods;
        start..start + self.num_periods
    }

    /// Flat coordinates `{(n, period) : n = 1..M}` in farm order.
    pub fn period_slice(&self, period: usize) -> Result<Vec<usize>> {
        (1..=self.num_farms).map(|n| self.flat(n, period)).collect()
    }

    pub fn check_farm(&self, farm: usize) -> Result<()> {
        if farm == 0 || farm > self.num_farms {
            return Err(Error::InvalidIndex(format!(
                "farm {farm} outside 1..={}",
                self.num_farms
            )));
        }
        Ok(())
    }

    pub fn check_period(&self, period: usize) -> Result<()> {
        if period == 0 || period > self.num_periods {
            return Err(Error::InvalidIndex(format!(
                "period {period} outside 1..={}",
                self.num_periods
            )));
        }
        Ok(())
    }
}

/// Full problem size: farms `M`, periods `T`, observations `I`, components `J`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub num_farms: usize,
    pub num_periods: usize,
    pub num_obs: usize,
    pub num_components: usize,
}

impl Dims {
    pub fn new(
        num_farms: usize,
        num_periods: usize,
        num_obs: usize,
        num_components: usize,
    ) -> Result<Self> {
        let dims = Self {
            num_farms,
            num_periods,
            num_obs,
            num_components,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        Layout::new(self.num_farms, self.num_periods)?;
        if self.num_obs < 2 {
            return Err(Error::InvalidDims(format!(
                "covariance estimation needs I >= 2, got {}",
                self.num_obs
            )));
        }
        if self.num_components == 0 {
            return Err(Error::InvalidDims("J must be at least 1".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout {
            num_farms: self.num_farms,
            num_periods: self.num_periods,
        }
    }

    pub fn dim(&self) -> usize {
        self.num_farms * self.num_periods
    }
}

/// A `(farm, period)` pair together with its flat coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlatIndex {
    pub farm: usize,
    pub period: usize,
    pub flat: usize,
}

impl FlatIndex {
    pub fn new(layout: Layout, farm: usize, period: usize) -> Result<Self> {
        layout.check_farm(farm)?;
        layout.check_period(period)?;
        Ok(Self {
            farm,
            period,
            flat: (farm - 1) * layout.num_periods + (period - 1),
        })
    }

    pub fn from_flat(layout: Layout, flat: usize) -> Result<Self> {
        if flat >= layout.dim() {
            return Err(Error::InvalidIndex(format!(
                "flat index {flat} outside 0..{}",
                layout.dim()
            )));
        }
        Ok(Self {
            farm: flat / layout.num_periods + 1,
            period: flat % layout.num_periods + 1,
            flat,
        })
    }
}
